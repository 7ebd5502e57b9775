#include <algorithm>
#include <bit>
#include <cmath>
#include <cstdint>
#include <cstring>
#include <fstream>
#include <json.hpp>

#include "acenet/error.hpp"
#include "acenet/volume.hpp"

namespace fs = std::filesystem;
using json = nlohmann::json;

namespace acenet {

static_assert(std::endian::native == std::endian::little, "raw and NIfTI I/O assume a little-endian host");

std::string dtype_name(DType t) {
  switch (t) {
    case DType::u8: return "u8";
    case DType::i16: return "i16";
    case DType::f32: return "f32";
  }
  return "?";
}

DType parse_dtype(const std::string& name) {
  if (name == "u8") return DType::u8;
  if (name == "i16") return DType::i16;
  if (name == "f32") return DType::f32;
  throw FormatError("unsupported dtype \"" + name + "\" (expected u8, i16 or f32)");
}

namespace {

std::size_t dtype_bytes(DType t) {
  switch (t) {
    case DType::u8: return 1;
    case DType::i16: return 2;
    case DType::f32: return 4;
  }
  return 0;
}

std::vector<char> read_file(const fs::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open " + path.string());
  return std::vector<char>(std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>());
}

void decode_voxels(const char* bytes, DType t, std::vector<double>& out) {
  const std::size_t n = out.size();
  switch (t) {
    case DType::u8:
      for (std::size_t i = 0; i < n; ++i) out[i] = static_cast<unsigned char>(bytes[i]);
      break;
    case DType::i16:
      for (std::size_t i = 0; i < n; ++i) {
        std::int16_t v;
        std::memcpy(&v, bytes + 2 * i, 2);
        out[i] = v;
      }
      break;
    case DType::f32:
      for (std::size_t i = 0; i < n; ++i) {
        float v;
        std::memcpy(&v, bytes + 4 * i, 4);
        out[i] = v;
      }
      break;
  }
}

std::vector<char> encode_voxels(const Volume& v) {
  std::vector<char> bytes(v.data.size() * dtype_bytes(v.dtype));
  for (std::size_t i = 0; i < v.data.size(); ++i) {
    const double x = v.data[i];
    switch (v.dtype) {
      case DType::u8: {
        if (!(x >= 0 && x <= 255 && x == std::floor(x))) throw ContractViolation("value " + std::to_string(x) + " not representable as u8");
        bytes[i] = static_cast<char>(static_cast<unsigned char>(x));
        break;
      }
      case DType::i16: {
        if (!(x >= -32768 && x <= 32767 && x == std::floor(x))) throw ContractViolation("value " + std::to_string(x) + " not representable as i16");
        const auto s = static_cast<std::int16_t>(x);
        std::memcpy(bytes.data() + 2 * i, &s, 2);
        break;
      }
      case DType::f32: {
        const auto f = static_cast<float>(x);
        std::memcpy(bytes.data() + 4 * i, &f, 4);
        break;
      }
    }
  }
  return bytes;
}

void write_file(const fs::path& path, const char* data, std::size_t size) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw IoError("cannot write " + path.string());
  out.write(data, static_cast<std::streamsize>(size));
  if (!out) throw IoError("write failed for " + path.string());
}

template <typename T>
T read_le(const std::vector<char>& buf, std::size_t offset) {
  T v;
  std::memcpy(&v, buf.data() + offset, sizeof(T));
  return v;
}

template <typename T>
void write_le(std::vector<char>& buf, std::size_t offset, T v) {
  std::memcpy(buf.data() + offset, &v, sizeof(T));
}

}  // namespace

Volume::Volume(std::array<std::size_t, 3> d, DType t, double fill) : dims(d), dtype(t) {
  for (auto x : dims) require(x >= 1, "volume dimensions must be >= 1");
  data.assign(voxel_count(), fill);
}

void Volume::validate() const {
  for (auto x : dims) require(x >= 1, "volume dimensions must be >= 1");
  require(data.size() == voxel_count(), "volume data length " + std::to_string(data.size()) +
                                            " does not match dims");
}

std::vector<int> Volume::label_slice(std::size_t d) const {
  require(d < depth(), "slice index " + std::to_string(d) + " out of range");
  std::vector<int> out(slice_size());
  const double* src = data.data() + d * slice_size();
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = static_cast<int>(std::lround(src[i]));
  return out;
}

void LabeledCase::validate() const {
  intensity.validate();
  labels.validate();
  brain_mask.validate();
  require(intensity.dims == labels.dims && labels.dims == brain_mask.dims,
          "case " + case_id + ": intensity, labels and brain mask dims differ");
  for (std::size_t i = 0; i < labels.data.size(); ++i)
    if (!(labels.data[i] == 0.0 || brain_mask.data[i] != 0.0)) throw ContractViolation("case " + case_id + ": labelled voxel outside the brain mask");
}

Volume load_raw_volume(const fs::path& header_path) {
  json header;
  try {
    std::ifstream in(header_path);
    if (!in) throw IoError("cannot open " + header_path.string());
    header = json::parse(in);
  } catch (const json::exception& e) {
    throw FormatError(header_path.string() + ": invalid header: " + e.what());
  }
  Volume v;
  try {
    const auto dims = header.at("dims").get<std::vector<long long>>();
    if (dims.size() != 3) throw FormatError(header_path.string() + ": dims must have three entries");
    for (std::size_t i = 0; i < 3; ++i) {
      if (dims[i] < 1) throw FormatError(header_path.string() + ": dims must be positive");
      v.dims[i] = static_cast<std::size_t>(dims[i]);
    }
    v.dtype = parse_dtype(header.at("dtype").get<std::string>());
    const fs::path data_path = header_path.parent_path() / header.at("data").get<std::string>();
    const std::vector<char> bytes = read_file(data_path);
    const std::size_t expected = v.voxel_count() * dtype_bytes(v.dtype);
    if (bytes.size() != expected)
      throw FormatError(data_path.string() + ": payload has " + std::to_string(bytes.size()) + " bytes, dims declare " +
                        std::to_string(expected));
    v.data.resize(v.voxel_count());
    decode_voxels(bytes.data(), v.dtype, v.data);
  } catch (const json::exception& e) {
    throw FormatError(header_path.string() + ": " + e.what());
  }
  return v;
}

void save_raw_volume(const Volume& volume, const fs::path& header_path) {
  volume.validate();
  fs::path data_path = header_path;
  data_path.replace_extension(".raw");
  const std::vector<char> bytes = encode_voxels(volume);
  write_file(data_path, bytes.data(), bytes.size());
  json header = {{"dims", {volume.dims[0], volume.dims[1], volume.dims[2]}},
                 {"dtype", dtype_name(volume.dtype)},
                 {"data", data_path.filename().string()}};
  const std::string text = header.dump(2) + "\n";
  write_file(header_path, text.data(), text.size());
}

namespace {

constexpr std::size_t kNiftiHeaderSize = 348;
constexpr std::size_t kOffsetDim = 40;
constexpr std::size_t kOffsetDatatype = 70;
constexpr std::size_t kOffsetBitpix = 72;
constexpr std::size_t kOffsetVoxOffset = 108;
constexpr std::size_t kOffsetSclSlope = 112;
constexpr std::size_t kOffsetSclInter = 116;
constexpr std::size_t kOffsetMagic = 344;

}  // namespace

Volume load_nifti_minimal(const fs::path& path) {
  const std::vector<char> buf = read_file(path);
  if (buf.size() >= 2 && static_cast<unsigned char>(buf[0]) == 0x1f && static_cast<unsigned char>(buf[1]) == 0x8b)
    throw FormatError(path.string() + ": compression: gzip-compressed NIfTI is not supported");
  if (buf.size() < kNiftiHeaderSize) throw FormatError(path.string() + ": sizeof_hdr: file shorter than 348 bytes");
  if (read_le<std::int32_t>(buf, 0) != 348)
    throw FormatError(path.string() + ": sizeof_hdr: expected 348 (little-endian NIfTI-1)");
  if (std::memcmp(buf.data() + kOffsetMagic, "n+1\0", 4) != 0)
    throw FormatError(path.string() + ": magic: expected \"n+1\" single-file NIfTI-1");

  const auto datatype = read_le<std::int16_t>(buf, kOffsetDatatype);
  Volume v;
  switch (datatype) {
    case 2: v.dtype = DType::u8; break;
    case 4: v.dtype = DType::i16; break;
    case 16: v.dtype = DType::f32; break;
    default:
      throw FormatError(path.string() + ": datatype: unsupported code " + std::to_string(datatype) +
                        " (expected 2, 4 or 16)");
  }
  const auto ndim = read_le<std::int16_t>(buf, kOffsetDim);
  if (ndim < 1 || ndim > 7) throw FormatError(path.string() + ": dim[0]: invalid dimension count");
  for (std::size_t i = 0; i < 3; ++i) {
    const std::int16_t d = static_cast<std::int16_t>(i) < ndim ? read_le<std::int16_t>(buf, kOffsetDim + 2 * (i + 1)) : 1;
    if (d < 1) throw FormatError(path.string() + ": dim[" + std::to_string(i + 1) + "]: must be positive");
    v.dims[i] = static_cast<std::size_t>(d);
  }
  for (std::int16_t i = 4; i <= ndim; ++i)
    if (read_le<std::int16_t>(buf, kOffsetDim + 2 * i) > 1)
      throw FormatError(path.string() + ": dim[" + std::to_string(i) + "]: only 3D volumes are supported");

  const float vox_offset = read_le<float>(buf, kOffsetVoxOffset);
  if (!(vox_offset >= static_cast<float>(kNiftiHeaderSize)))
    throw FormatError(path.string() + ": vox_offset: must be at least 348");
  const std::size_t offset = static_cast<std::size_t>(vox_offset);
  const std::size_t nbytes = v.voxel_count() * dtype_bytes(v.dtype);
  if (buf.size() < offset + nbytes)
    throw FormatError(path.string() + ": vox_offset: payload shorter than dims declare");

  // NIfTI stores axis 1 fastest; we store W (our axis 2) fastest.
  std::vector<double> flat(v.voxel_count());
  decode_voxels(buf.data() + offset, v.dtype, flat);
  v.data.resize(v.voxel_count());
  const std::size_t nx = v.dims[0], ny = v.dims[1], nz = v.dims[2];
  for (std::size_t k = 0; k < nz; ++k)
    for (std::size_t j = 0; j < ny; ++j)
      for (std::size_t i = 0; i < nx; ++i) v.data[(i * ny + j) * nz + k] = flat[i + nx * (j + ny * k)];

  const float slope = read_le<float>(buf, kOffsetSclSlope);
  const float inter = read_le<float>(buf, kOffsetSclInter);
  if (slope != 0.0f && std::isfinite(slope)) {
    for (auto& x : v.data) x = x * static_cast<double>(slope) + static_cast<double>(inter);
    if (slope != 1.0f || inter != 0.0f) v.dtype = DType::f32;
  }
  return v;
}

void save_nifti_minimal(const Volume& volume, const fs::path& path) {
  volume.validate();
  std::vector<char> buf(352, 0);
  write_le<std::int32_t>(buf, 0, 348);
  write_le<std::int16_t>(buf, kOffsetDim, 3);
  for (std::size_t i = 0; i < 3; ++i) {
    require(volume.dims[i] <= 32767, "NIfTI-1 dims must fit in int16");
    write_le<std::int16_t>(buf, kOffsetDim + 2 * (i + 1), static_cast<std::int16_t>(volume.dims[i]));
  }
  for (std::size_t i = 4; i <= 7; ++i) write_le<std::int16_t>(buf, kOffsetDim + 2 * i, 1);
  const std::int16_t code = volume.dtype == DType::u8 ? 2 : volume.dtype == DType::i16 ? 4 : 16;
  write_le<std::int16_t>(buf, kOffsetDatatype, code);
  write_le<std::int16_t>(buf, kOffsetBitpix, static_cast<std::int16_t>(8 * dtype_bytes(volume.dtype)));
  write_le<float>(buf, kOffsetVoxOffset, 352.0f);
  write_le<float>(buf, kOffsetSclSlope, 1.0f);
  write_le<float>(buf, kOffsetSclInter, 0.0f);
  std::memcpy(buf.data() + kOffsetMagic, "n+1\0", 4);

  Volume disk = volume;
  const std::size_t nx = volume.dims[0], ny = volume.dims[1], nz = volume.dims[2];
  for (std::size_t k = 0; k < nz; ++k)
    for (std::size_t j = 0; j < ny; ++j)
      for (std::size_t i = 0; i < nx; ++i) disk.data[i + nx * (j + ny * k)] = volume.data[(i * ny + j) * nz + k];
  const std::vector<char> payload = encode_voxels(disk);
  buf.insert(buf.end(), payload.begin(), payload.end());
  write_file(path, buf.data(), buf.size());
}

Volume load_volume(const fs::path& path) {
  if (path.extension() == ".nii" || path.extension() == ".gz") return load_nifti_minimal(path);
  return load_raw_volume(path);
}

Volume normalize_intensity(const Volume& volume) {
  volume.validate();
  Volume out = volume;
  out.dtype = DType::f32;
  out.intensity_normalized = true;
  const auto [lo, hi] = std::minmax_element(volume.data.begin(), volume.data.end());
  const double range = *hi - *lo;
  for (std::size_t i = 0; i < out.data.size(); ++i)
    out.data[i] = range > 0.0 ? (volume.data[i] - *lo) / range : 0.0;
  return out;
}

LabeledCase load_case(const fs::path& manifest) {
  json j;
  try {
    std::ifstream in(manifest);
    if (!in) throw IoError("cannot open " + manifest.string());
    j = json::parse(in);
    LabeledCase c;
    const fs::path dir = manifest.parent_path();
    c.case_id = j.at("case_id").get<std::string>();
    c.intensity = load_raw_volume(dir / j.at("intensity").get<std::string>());
    c.labels = load_raw_volume(dir / j.at("labels").get<std::string>());
    c.brain_mask = load_raw_volume(dir / j.at("brain_mask").get<std::string>());
    c.validate();
    return c;
  } catch (const json::exception& e) {
    throw FormatError(manifest.string() + ": " + e.what());
  } catch (const ContractViolation& e) {
    throw FormatError(manifest.string() + ": " + e.what());
  }
}

void save_case(const LabeledCase& c, const fs::path& directory) {
  c.validate();
  fs::create_directories(directory);
  const std::string stem = c.case_id;
  save_raw_volume(c.intensity, directory / (stem + "_intensity.json"));
  save_raw_volume(c.labels, directory / (stem + "_labels.json"));
  save_raw_volume(c.brain_mask, directory / (stem + "_mask.json"));
  json j = {{"case_id", c.case_id},
            {"intensity", stem + "_intensity.json"},
            {"labels", stem + "_labels.json"},
            {"brain_mask", stem + "_mask.json"}};
  const std::string text = j.dump(2) + "\n";
  write_file(directory / (stem + ".case.json"), text.data(), text.size());
}

std::vector<LabeledCase> load_cases(const fs::path& directory) {
  if (!fs::is_directory(directory)) throw IoError(directory.string() + " is not a directory");
  std::vector<fs::path> manifests;
  for (const auto& entry : fs::directory_iterator(directory)) {
    const std::string name = entry.path().filename().string();
    if (name.size() > 10 && name.ends_with(".case.json")) manifests.push_back(entry.path());
  }
  std::sort(manifests.begin(), manifests.end());
  std::vector<LabeledCase> cases;
  for (const auto& m : manifests) cases.push_back(load_case(m));
  return cases;
}

}  // namespace acenet
