#include "noteassign/checkpoint.hpp"

#include <cstring>
#include <fstream>

#include "noteassign/errors.hpp"

namespace noteassign {

using json = nlohmann::json;

namespace {

constexpr char kMagic[4] = {'N', 'A', 'C', 'K'};
constexpr std::uint32_t kVersion = 1;

struct Header {
  json doc;
  std::streamoff data_start = 0;
};

Header read_header(std::ifstream& in, const std::filesystem::path& path) {
  char magic[4];
  in.read(magic, 4);
  if (!in || std::memcmp(magic, kMagic, 4) != 0) throw DataError("checkpoint: bad magic in " + path.string());
  std::uint32_t version = 0;
  std::uint64_t length = 0;
  in.read(reinterpret_cast<char*>(&version), sizeof version);
  in.read(reinterpret_cast<char*>(&length), sizeof length);
  if (!in || version != kVersion) throw DataError("checkpoint: unsupported version in " + path.string());
  std::string text(length, '\0');
  in.read(text.data(), static_cast<std::streamsize>(length));
  if (!in) throw DataError("checkpoint: truncated header in " + path.string());
  Header h;
  try {
    h.doc = json::parse(text);
  } catch (const json::exception& e) {
    throw DataError("checkpoint: corrupt header: " + std::string(e.what()));
  }
  h.data_start = in.tellg();
  return h;
}

}  // namespace

void save_checkpoint(const std::filesystem::path& path, nn::Model<float>& model, const json& meta) {
  model.consolidate_statistics();
  json arrays = json::array();
  std::uint64_t offset = 0;
  std::vector<std::pair<const float*, std::size_t>> blobs;
  for (auto* p : model.parameters()) {
    arrays.push_back({{"name", p->name}, {"shape", p->shape}, {"offset", offset}, {"count", p->size()}});
    blobs.emplace_back(p->value.data(), p->size());
    offset += p->size();
  }
  for (const auto& b : model.buffers()) {
    arrays.push_back({{"name", b.name},
                      {"shape", std::vector<std::size_t>{b.values->size()}},
                      {"offset", offset},
                      {"count", b.values->size()}});
    blobs.emplace_back(b.values->data(), b.values->size());
    offset += b.values->size();
  }
  json header{{"format", "noteassign-checkpoint"}, {"model", model.config()}, {"arrays", arrays}, {"meta", meta}};
  const std::string text = header.dump();

  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  std::ofstream out(path, std::ios::binary);
  if (!out) throw DataError("checkpoint: cannot write " + path.string());
  out.write(kMagic, 4);
  const std::uint64_t length = text.size();
  out.write(reinterpret_cast<const char*>(&kVersion), sizeof kVersion);
  out.write(reinterpret_cast<const char*>(&length), sizeof length);
  out.write(text.data(), static_cast<std::streamsize>(text.size()));
  for (const auto& [ptr, count] : blobs)
    out.write(reinterpret_cast<const char*>(ptr), static_cast<std::streamsize>(count * sizeof(float)));
  if (!out) throw DataError("checkpoint: write failed " + path.string());
}

CheckpointHeader read_checkpoint_header(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw DataError("checkpoint: cannot open " + path.string());
  const Header h = read_header(in, path);
  CheckpointHeader out;
  try {
    out.config = h.doc.at("model").get<nn::ModelConfig>();
  } catch (const json::exception& e) {
    throw DataError("checkpoint: bad model config: " + std::string(e.what()));
  }
  out.meta = h.doc.value("meta", json::object());
  return out;
}

nn::Model<float> load_checkpoint(const std::filesystem::path& path, json* meta) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw DataError("checkpoint: cannot open " + path.string());
  const Header h = read_header(in, path);
  nn::ModelConfig cfg;
  try {
    cfg = h.doc.at("model").get<nn::ModelConfig>();
  } catch (const json::exception& e) {
    throw DataError("checkpoint: bad model config: " + std::string(e.what()));
  }
  nn::Model<float> model(cfg);

  std::map<std::string, std::pair<std::uint64_t, std::uint64_t>> index;
  for (const auto& a : h.doc.at("arrays"))
    index[a.at("name").get<std::string>()] = {a.at("offset").get<std::uint64_t>(), a.at("count").get<std::uint64_t>()};

  auto read_into = [&](const std::string& name, nn::Buf<float>& dst) {
    auto it = index.find(name);
    if (it == index.end()) throw DataError("checkpoint: missing array '" + name + "'");
    if (it->second.second != dst.size())
      throw DataError("checkpoint: array '" + name + "' has " + std::to_string(it->second.second) +
                      " values, model expects " + std::to_string(dst.size()));
    in.seekg(h.data_start + static_cast<std::streamoff>(it->second.first * sizeof(float)));
    in.read(reinterpret_cast<char*>(dst.data()), static_cast<std::streamsize>(dst.size() * sizeof(float)));
    if (!in) throw DataError("checkpoint: truncated data for '" + name + "'");
    index.erase(it);
  };
  for (auto* p : model.parameters()) read_into(p->name, p->value);
  for (auto& b : model.buffers()) read_into(b.name, *b.values);
  if (!index.empty()) throw DataError("checkpoint: unexpected array '" + index.begin()->first + "'");
  model.finish_loading();
  if (meta) *meta = h.doc.value("meta", json::object());
  return model;
}

nn::Model<float> load_checkpoint(const std::filesystem::path& path, const nn::ModelConfig& expected, json* meta) {
  const auto header = read_checkpoint_header(path);
  if (!(header.config == expected))
    throw DataError("checkpoint: model config in " + path.string() + " does not match the requested config (stored " +
                    json(header.config).dump() + ", expected " + json(expected).dump() + ")");
  return load_checkpoint(path, meta);
}

void copy_state(nn::Model<float>& from, nn::Model<float>& to) {
  from.consolidate_statistics();
  auto src = from.parameters();
  auto dst = to.parameters();
  if (src.size() != dst.size()) throw DataError("copy_state: parameter layout differs");
  for (std::size_t i = 0; i < src.size(); ++i) dst[i]->value = src[i]->value;
  auto sb = from.buffers();
  auto db = to.buffers();
  for (std::size_t i = 0; i < sb.size(); ++i) *db[i].values = *sb[i].values;
  to.finish_loading();
}

}  // namespace noteassign
