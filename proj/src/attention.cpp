#include "acenet/attention.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>

#include "acenet/error.hpp"

namespace acenet {

Tensor mean_abs_channels(const Tensor& x) {
  require(x.rank() == 3, "mean_abs_channels: expected [C,H,W]");
  const std::size_t C = x.dim(0), plane = x.dim(1) * x.dim(2);
  Tensor out({x.dim(1), x.dim(2)});
  for (std::size_t c = 0; c < C; ++c)
    for (std::size_t i = 0; i < plane; ++i) out[i] += std::abs(x[c * plane + i]);
  for (auto& v : out.values()) v /= static_cast<double>(C);
  return out;
}

Tensor minmax_normalize(const Tensor& map) {
  Tensor out = map;
  const auto [lo, hi] = std::minmax_element(map.values().begin(), map.values().end());
  const double range = *hi - *lo;
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = range > 0.0 ? (map[i] - *lo) / range : 0.0;
  return out;
}

std::vector<std::uint8_t> quantize(const Tensor& normalized) {
  std::vector<std::uint8_t> px(normalized.size());
  for (std::size_t i = 0; i < px.size(); ++i)
    px[i] = static_cast<std::uint8_t>(std::lround(std::clamp(normalized[i], 0.0, 1.0) * 255.0));
  return px;
}

void write_pgm(const std::filesystem::path& path, const Tensor& normalized) {
  require(normalized.rank() == 2, "write_pgm: expected an [H,W] map");
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw IoError("cannot write " + path.string());
  out << "P5\n" << normalized.dim(1) << " " << normalized.dim(0) << "\n255\n";
  const auto px = quantize(normalized);
  out.write(reinterpret_cast<const char*>(px.data()), static_cast<std::streamsize>(px.size()));
  if (!out) throw IoError("write failed for " + path.string());
}

std::vector<std::uint8_t> read_pgm(const std::filesystem::path& path, std::size_t& height, std::size_t& width) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open " + path.string());
  std::string magic;
  int maxval = 0;
  in >> magic >> width >> height >> maxval;
  if (magic != "P5" || maxval != 255) throw FormatError(path.string() + ": not an 8-bit P5 image");
  in.get();
  std::vector<std::uint8_t> px(width * height);
  in.read(reinterpret_cast<char*>(px.data()), static_cast<std::streamsize>(px.size()));
  if (!in) throw FormatError(path.string() + ": truncated pixel data");
  return px;
}

std::vector<ExportedMap> export_attention(const ModelParams& params, const SliceStack& stack,
                                          const std::filesystem::path& out_dir) {
  Tape tape;
  ForwardOutput out = forward(tape, params, tape.constant(stack.input), {false, 0, true});
  std::error_code ec;
  std::filesystem::create_directories(out_dir, ec);
  if (ec) throw IoError("cannot create " + out_dir.string() + ": " + ec.message());

  std::vector<ExportedMap> maps;
  std::size_t index = 0;
  for (const auto& cap : out.diagnostics) {
    ++index;
    const std::pair<const char*, Tensor> parts[] = {
        {"input", mean_abs_channels(cap.input)}, {"attention", cap.attention}, {"output", mean_abs_channels(cap.output)}};
    for (const auto& [kind, raw] : parts) {
      ExportedMap m;
      m.block = cap.name;
      m.kind = kind;
      m.raw = raw;
      m.normalized = minmax_normalize(raw);
      char name[128];
      std::snprintf(name, sizeof(name), "%02zu_%s_%s.pgm", index, cap.name.c_str(), kind);
      m.file = out_dir / name;
      write_pgm(m.file, m.normalized);
      maps.push_back(std::move(m));
    }
  }
  return maps;
}

}  // namespace acenet
