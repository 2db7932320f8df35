#pragma once

#include <filesystem>
#include <span>
#include <vector>

namespace noteassign {

struct Audio {
  std::vector<float> samples;  // mono, nominally in [-1, 1]
  int sample_rate = 44100;
};

/// RIFF/WAVE reader for 16/24/32-bit integer PCM and 32-bit float.
/// Multi-channel input is averaged to mono.
Audio read_wav(const std::filesystem::path& path);

/// Writes 16-bit PCM mono, clipping to [-1, 1].
void write_wav(const std::filesystem::path& path, std::span<const float> samples, int sample_rate);

}  // namespace noteassign
