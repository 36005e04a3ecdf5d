#pragma once

#include <optional>
#include <string>

#include "segnext/config.hpp"
#include "segnext/data.hpp"
#include "segnext/model.hpp"
#include "segnext/optim.hpp"

namespace segnext {

inline constexpr uint32_t kCheckpointVersion = 1;

struct LoadedCheckpoint {
  RunConfig config;
  SegModel<float> model;
  std::optional<OptimState<float>> optim;
};

/// Binary layout, little-endian: "SGNX", u32 version, config text,
/// parameter table, buffer table (name, 4 dims, f32 data), optional AdamW
/// moments, then a 64-bit FNV-1a checksum of everything before it.
std::string encode_checkpoint(const RunConfig& cfg, const SegModel<float>& model,
                              const OptimState<float>* optim = nullptr);
LoadedCheckpoint decode_checkpoint(std::string_view bytes);

/// Writes to `path`.tmp and renames over `path`.
void save_checkpoint(const std::string& path, const RunConfig& cfg, const SegModel<float>& model,
                     const OptimState<float>* optim = nullptr);
LoadedCheckpoint load_checkpoint(const std::string& path);

/// Binary PPM (P6) to a 1 x 3 x H x W image in [0, 1].
Tensor decode_ppm(std::string_view bytes);
std::string encode_ppm(const Tensor& image);
/// Binary PGM (P5) label map; values are kept verbatim.
LabelMap decode_pgm(std::string_view bytes);
std::string encode_pgm(const LabelMap& labels);

Tensor read_ppm(const std::string& path);
void write_ppm(const std::string& path, const Tensor& image);
LabelMap read_pgm(const std::string& path);
void write_pgm(const std::string& path, const LabelMap& labels);

std::string read_file(const std::string& path);
/// Atomic write through a temporary sibling file.
void write_file_atomic(const std::string& path, std::string_view bytes);

}  // namespace segnext
