#pragma once

#include <filesystem>

#include <torch/torch.h>

#include "dcem/transform.hpp"

namespace dcem {

/// Mono 16 kHz WAV. Reads 16-bit PCM or 32-bit float; throws DataError on
/// anything else.
Waveform read_wav(const std::filesystem::path& path);
/// Writes 32-bit float mono WAV.
void write_wav(const std::filesystem::path& path, const Waveform& w);

/// Dumps a float64 tensor as a NumPy .npy file (C order).
void write_npy(const std::filesystem::path& path, const torch::Tensor& t);

}  // namespace dcem
