#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include "acenet/model.hpp"
#include "acenet/slice_stack.hpp"

namespace acenet {

struct ExportedMap {
  std::string block;
  std::string kind;  // "input", "attention" or "output"
  Tensor raw;        // [H,W] before normalization
  Tensor normalized; // [H,W] in [0,1]
  std::filesystem::path file;
};

/// Mean over channels of |x| for x = [C,H,W].
Tensor mean_abs_channels(const Tensor& x);
/// Min-max scaling to [0,1]; constant maps become all zero.
Tensor minmax_normalize(const Tensor& map);
/// round(255 * v) per pixel of a [0,1] map.
std::vector<std::uint8_t> quantize(const Tensor& normalized);

void write_pgm(const std::filesystem::path& path, const Tensor& normalized);
/// Reads back an 8-bit binary PGM (P5) written by write_pgm.
std::vector<std::uint8_t> read_pgm(const std::filesystem::path& path, std::size_t& height, std::size_t& width);

/// Eval-mode forward of one slice stack with capture; writes three PGMs per
/// block (input features, spatial attention, output features).
std::vector<ExportedMap> export_attention(const ModelParams& params, const SliceStack& stack,
                                          const std::filesystem::path& out_dir);

}  // namespace acenet
