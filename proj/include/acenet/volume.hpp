#pragma once

#include <array>
#include <cstddef>
#include <filesystem>
#include <string>
#include <vector>

namespace acenet {

enum class DType { u8, i16, f32 };

std::string dtype_name(DType t);
DType parse_dtype(const std::string& name);

/// Voxel grid stored coronal-slice-major: dims = [D,H,W], W fastest.
struct Volume {
  std::array<std::size_t, 3> dims{1, 1, 1};
  DType dtype = DType::f32;
  std::vector<double> data;
  bool intensity_normalized = false;

  Volume() = default;
  Volume(std::array<std::size_t, 3> d, DType t, double fill = 0.0);

  std::size_t depth() const { return dims[0]; }
  std::size_t height() const { return dims[1]; }
  std::size_t width() const { return dims[2]; }
  std::size_t slice_size() const { return dims[1] * dims[2]; }
  std::size_t voxel_count() const { return dims[0] * dims[1] * dims[2]; }
  std::size_t index(std::size_t d, std::size_t h, std::size_t w) const { return (d * dims[1] + h) * dims[2] + w; }
  double& at(std::size_t d, std::size_t h, std::size_t w) { return data[index(d, h, w)]; }
  double at(std::size_t d, std::size_t h, std::size_t w) const { return data[index(d, h, w)]; }

  /// Integer codes of coronal slice `d`, row-major [H,W].
  std::vector<int> label_slice(std::size_t d) const;

  /// Throws ContractViolation when dims and data length disagree.
  void validate() const;

  friend bool operator==(const Volume&, const Volume&) = default;
};

struct LabeledCase {
  std::string case_id;
  Volume intensity;
  Volume labels;
  Volume brain_mask;

  /// Shared dims and every nonzero label inside the brain mask.
  void validate() const;
};

// Raw format: a JSON sidecar {"dims":[D,H,W],"dtype":"u8"|"i16"|"f32","data":"<relative path>"}
// next to a little-endian payload with W fastest.
Volume load_raw_volume(const std::filesystem::path& header_path);
void save_raw_volume(const Volume& volume, const std::filesystem::path& header_path);

/// Uncompressed single-file NIfTI-1 ("n+1"), datatypes 2 (u8), 4 (i16), 16 (f32).
/// NIfTI axis i (fastest on disk) becomes the coronal index D.
Volume load_nifti_minimal(const std::filesystem::path& path);
void save_nifti_minimal(const Volume& volume, const std::filesystem::path& path);

/// Loads .nii files with the NIfTI reader and anything else as a raw header.
Volume load_volume(const std::filesystem::path& path);

/// Per-volume min-max scaling to [0,1]; constant volumes map to zero.
Volume normalize_intensity(const Volume& volume);

// A case manifest is a JSON file {"case_id", "intensity", "labels", "brain_mask"}
// whose entries are raw headers relative to the manifest.
LabeledCase load_case(const std::filesystem::path& manifest);
void save_case(const LabeledCase& c, const std::filesystem::path& directory);
/// Every "*.case.json" in `directory`, sorted by file name.
std::vector<LabeledCase> load_cases(const std::filesystem::path& directory);

}  // namespace acenet
