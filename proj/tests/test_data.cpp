#include <gtest/gtest.h>

#include <cmath>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <queue>
#include <random>
#include <set>

#include "acenet/error.hpp"
#include "acenet/phantom.hpp"
#include "acenet/slice_stack.hpp"
#include "acenet/volume.hpp"

using namespace acenet;
namespace fs = std::filesystem;

namespace {

class TempDir {
 public:
  TempDir() {
    path_ = fs::temp_directory_path() / ("acenet_data_" + std::to_string(std::random_device{}()));
    fs::create_directories(path_);
  }
  ~TempDir() { fs::remove_all(path_); }
  const fs::path& path() const { return path_; }

 private:
  fs::path path_;
};

void write_bytes(const fs::path& p, const std::vector<unsigned char>& bytes) {
  std::ofstream out(p, std::ios::binary);
  out.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
}

template <class T>
void put(std::vector<unsigned char>& buf, std::size_t offset, T v) {
  std::memcpy(buf.data() + offset, &v, sizeof v);
}

// Header bytes laid out by hand from the NIfTI-1 field offsets.
std::vector<unsigned char> nifti_header(std::int16_t nx, std::int16_t ny, std::int16_t nz, std::int16_t datatype,
                                        float slope, float inter) {
  std::vector<unsigned char> buf(352, 0);
  put<std::int32_t>(buf, 0, 348);
  put<std::int16_t>(buf, 40, 3);
  put<std::int16_t>(buf, 42, nx);
  put<std::int16_t>(buf, 44, ny);
  put<std::int16_t>(buf, 46, nz);
  for (int i = 4; i <= 7; ++i) put<std::int16_t>(buf, 40 + 2 * i, 1);
  put<std::int16_t>(buf, 70, datatype);
  put<float>(buf, 108, 352.0f);
  put<float>(buf, 112, slope);
  put<float>(buf, 116, inter);
  std::memcpy(buf.data() + 344, "n+1", 4);
  return buf;
}

LabeledCase ramp_case(std::size_t depth, std::size_t h, std::size_t w) {
  LabeledCase c;
  c.case_id = "ramp";
  c.intensity = Volume({depth, h, w}, DType::f32);
  c.labels = Volume({depth, h, w}, DType::u8);
  c.brain_mask = Volume({depth, h, w}, DType::u8);
  // Every voxel of slice d carries the value d, so channel sources can be read back directly.
  for (std::size_t d = 0; d < depth; ++d)
    for (std::size_t i = 0; i < h * w; ++i) {
      c.intensity.data[d * h * w + i] = static_cast<double>(d);
      c.labels.data[d * h * w + i] = (i + d) % 3;
      c.brain_mask.data[d * h * w + i] = c.labels.data[d * h * w + i] != 0 || i % 2 ? 1.0 : 0.0;
    }
  c.intensity = normalize_intensity(c.intensity);
  return c;
}

}  // namespace

TEST(RawVolume, KnownF32Bytes) {
  TempDir tmp;
  const std::vector<float> values{0.5f, -1.25f, 3.0f, 1e-3f, 7.75f, -0.0f, 42.0f, 1e6f};
  std::vector<unsigned char> bytes(values.size() * 4);
  std::memcpy(bytes.data(), values.data(), bytes.size());
  write_bytes(tmp.path() / "v.raw", bytes);
  std::ofstream(tmp.path() / "v.json") << R"({"dims":[2,2,2],"dtype":"f32","data":"v.raw"})";
  const Volume v = load_raw_volume(tmp.path() / "v.json");
  ASSERT_EQ(v.dims, (std::array<std::size_t, 3>{2, 2, 2}));
  for (std::size_t i = 0; i < values.size(); ++i) EXPECT_EQ(v.data[i], static_cast<double>(values[i]));
  EXPECT_TRUE(std::signbit(v.at(1, 0, 1)));
  EXPECT_EQ(v.at(1, 1, 1), 1e6);
}

TEST(RawVolume, RoundTripAllTypes) {
  TempDir tmp;
  std::mt19937_64 rng(1);
  for (DType t : {DType::u8, DType::i16, DType::f32}) {
    Volume v({3, 4, 5}, t);
    for (auto& x : v.data) {
      if (t == DType::u8) x = static_cast<double>(rng() % 256);
      else if (t == DType::i16) x = static_cast<double>(static_cast<int>(rng() % 65536) - 32768);
      else x = static_cast<double>(static_cast<float>(std::uniform_real_distribution<double>(-1e3, 1e3)(rng)));
    }
    const fs::path header = tmp.path() / ("v_" + dtype_name(t) + ".json");
    save_raw_volume(v, header);
    const Volume back = load_raw_volume(header);
    EXPECT_EQ(back.dims, v.dims);
    EXPECT_EQ(back.dtype, t);
    EXPECT_EQ(back.data, v.data) << dtype_name(t);
  }
}

TEST(RawVolume, TruncatedPayloadIsFormatError) {
  TempDir tmp;
  write_bytes(tmp.path() / "v.raw", std::vector<unsigned char>(7, 0));
  std::ofstream(tmp.path() / "v.json") << R"({"dims":[2,2,2],"dtype":"u8","data":"v.raw"})";
  EXPECT_THROW(load_raw_volume(tmp.path() / "v.json"), FormatError);
  std::ofstream(tmp.path() / "w.json") << R"({"dims":[2,2,2],"dtype":"f64","data":"v.raw"})";
  EXPECT_THROW(load_raw_volume(tmp.path() / "w.json"), FormatError);
}

TEST(Nifti, HandBuiltU8Fixture) {
  TempDir tmp;
  auto buf = nifti_header(4, 4, 4, 2, 0.0f, 0.0f);
  for (int i = 0; i < 64; ++i) buf.push_back(static_cast<unsigned char>(3 * i + 1));
  write_bytes(tmp.path() / "a.nii", buf);
  const Volume v = load_nifti_minimal(tmp.path() / "a.nii");
  ASSERT_EQ(v.dims, (std::array<std::size_t, 3>{4, 4, 4}));
  // Disk offset x + 4y + 16z lands at [D=x, H=y, W=z].
  for (std::size_t x = 0; x < 4; ++x)
    for (std::size_t y = 0; y < 4; ++y)
      for (std::size_t z = 0; z < 4; ++z) EXPECT_EQ(v.at(x, y, z), 3.0 * (x + 4 * y + 16 * z) + 1.0);
}

TEST(Nifti, NonCubicAxisOrder) {
  TempDir tmp;
  auto buf = nifti_header(2, 3, 4, 4, 0.0f, 0.0f);
  for (std::int16_t i = 0; i < 24; ++i) {
    const std::int16_t v = static_cast<std::int16_t>(i * 100 - 1000);
    buf.push_back(static_cast<unsigned char>(v & 0xff));
    buf.push_back(static_cast<unsigned char>((v >> 8) & 0xff));
  }
  write_bytes(tmp.path() / "b.nii", buf);
  const Volume v = load_nifti_minimal(tmp.path() / "b.nii");
  ASSERT_EQ(v.dims, (std::array<std::size_t, 3>{2, 3, 4}));
  EXPECT_EQ(v.at(1, 2, 3), (1 + 2 * 2 + 6 * 3) * 100.0 - 1000.0);
  EXPECT_EQ(v.at(1, 0, 0), 100.0 - 1000.0);
}

TEST(Nifti, SlopeAndIntercept) {
  TempDir tmp;
  auto buf = nifti_header(1, 1, 1, 2, 2.0f, 1.0f);
  buf.push_back(3);
  write_bytes(tmp.path() / "c.nii", buf);
  EXPECT_DOUBLE_EQ(load_nifti_minimal(tmp.path() / "c.nii").data[0], 7.0);
}

TEST(Nifti, ErrorsNameTheField) {
  TempDir tmp;
  auto expect_field = [&](std::vector<unsigned char> buf, const std::string& field) {
    write_bytes(tmp.path() / "bad.nii", buf);
    try {
      load_nifti_minimal(tmp.path() / "bad.nii");
      ADD_FAILURE() << "no error for " << field;
    } catch (const FormatError& e) {
      EXPECT_NE(std::string(e.what()).find(field), std::string::npos) << e.what();
    }
  };
  auto good = nifti_header(1, 1, 1, 2, 0.0f, 0.0f);
  good.push_back(0);
  auto bad_magic = good;
  std::memcpy(bad_magic.data() + 344, "ni1", 4);
  expect_field(bad_magic, "magic");
  auto bad_type = good;
  put<std::int16_t>(bad_type, 70, 64);
  expect_field(bad_type, "datatype");
  expect_field({0x1f, 0x8b, 0x08, 0x00}, "compression");
}

TEST(Nifti, SaveLoadRoundTrip) {
  TempDir tmp;
  Volume v({3, 2, 5}, DType::i16);
  for (std::size_t i = 0; i < v.data.size(); ++i) v.data[i] = static_cast<double>(i * 37 % 200) - 100.0;
  save_nifti_minimal(v, tmp.path() / "r.nii");
  const Volume back = load_volume(tmp.path() / "r.nii");
  EXPECT_EQ(back.dims, v.dims);
  EXPECT_EQ(back.data, v.data);
}

TEST(Normalize, AffineDegenerateIdempotent) {
  Volume v({1, 1, 3}, DType::f32);
  v.data = {0, 5, 10};
  const Volume n = normalize_intensity(v);
  EXPECT_EQ(n.data, (std::vector<double>{0, 0.5, 1}));
  EXPECT_TRUE(n.intensity_normalized);
  Volume c({2, 2, 2}, DType::f32, 4.2);
  for (double x : normalize_intensity(c).data) EXPECT_EQ(x, 0.0);

  std::mt19937_64 rng(2);
  Volume r({3, 3, 3}, DType::f32);
  for (auto& x : r.data) x = std::uniform_real_distribution<double>(-5, 9)(rng);
  const Volume once = normalize_intensity(r);
  const Volume twice = normalize_intensity(once);
  for (std::size_t i = 0; i < once.data.size(); ++i) EXPECT_NEAR(twice.data[i], once.data[i], 1e-15);
}

TEST(SliceStack, ReplicateCenterAtBoundary) {
  EXPECT_EQ(slice_sources(0, 2, 10), (std::vector<std::size_t>{0, 0, 0, 1, 2}));
  EXPECT_EQ(slice_sources(9, 2, 10), (std::vector<std::size_t>{7, 8, 9, 9, 9}));
  // Replicating the centre, not the edge: slice 1 with s=3 repeats 1, never 0.
  EXPECT_EQ(slice_sources(1, 3, 10), (std::vector<std::size_t>{1, 1, 0, 1, 2, 3, 4}));
  EXPECT_EQ(slice_sources(4, 0, 10), (std::vector<std::size_t>{4}));
  EXPECT_EQ(slice_sources(5, 5, 10).size(), 11u);
}

TEST(SliceStack, ChannelsMatchSourceSlices) {
  const LabeledCase c = ramp_case(10, 3, 4);
  for (std::size_t s : {0u, 1u, 2u, 5u})
    for (std::size_t idx : {0u, 1u, 4u, 9u}) {
      const SliceStack st = extract_slice_stack(c, idx, s, 3);
      ASSERT_EQ(st.input.shape(), (Shape{2 * s + 1, 3, 4}));
      const auto src = slice_sources(idx, s, 10);
      EXPECT_EQ(st.channel_sources, src);
      for (std::size_t ch = 0; ch < 2 * s + 1; ++ch) {
        EXPECT_LT(src[ch], 10u);
        for (std::size_t i = 0; i < 12; ++i) EXPECT_DOUBLE_EQ(st.input[ch * 12 + i], src[ch] / 9.0);
      }
      for (std::size_t i = 0; i < 12; ++i) EXPECT_EQ(st.input[s * 12 + i], c.intensity.data[idx * 12 + i]);
      EXPECT_EQ(st.center_labels, c.labels.label_slice(idx));
      EXPECT_EQ(st.center_skull, c.brain_mask.label_slice(idx));
      EXPECT_EQ(st.slice_index, idx);
    }
}

TEST(SliceStack, PresenceFromCenterLabels) {
  const LabeledCase c = ramp_case(4, 1, 1);
  // Slice d has the single label d % 3.
  EXPECT_EQ(extract_slice_stack(c, 0, 1, 3).presence, (std::vector<double>{0, 0}));
  EXPECT_EQ(extract_slice_stack(c, 1, 1, 3).presence, (std::vector<double>{1, 0}));
  EXPECT_EQ(extract_slice_stack(c, 2, 1, 3).presence, (std::vector<double>{0, 1}));
  EXPECT_THROW(extract_slice_stack(c, 4, 1, 3), ContractViolation);
  EXPECT_THROW(extract_slice_stack(c, 2, 1, 2), ContractViolation);
}

TEST(Phantom, DeterministicFromSeed) {
  const LabeledCase a = synth_phantom(17, {16, 24, 20}, 3, 0.05);
  const LabeledCase b = synth_phantom(17, {16, 24, 20}, 3, 0.05);
  EXPECT_EQ(a.intensity, b.intensity);
  EXPECT_EQ(a.labels, b.labels);
  EXPECT_EQ(a.brain_mask, b.brain_mask);
  const LabeledCase c = synth_phantom(18, {16, 24, 20}, 3, 0.05);
  EXPECT_NE(a.labels, c.labels);
}

TEST(Phantom, StructuralInvariants) {
  for (std::uint64_t seed = 0; seed < 8; ++seed)
    for (std::size_t n : {1u, 4u, 6u}) {
      const LabeledCase c = synth_phantom(seed, {32, 32, 32}, n, 0.0);
      std::vector<std::size_t> hist(n + 1, 0);
      std::size_t brain = 0;
      for (std::size_t i = 0; i < c.labels.data.size(); ++i) {
        const double l = c.labels.data[i];
        ASSERT_TRUE(l >= 0 && l <= static_cast<double>(n) && l == std::floor(l));
        ++hist[static_cast<std::size_t>(l)];
        if (l != 0) EXPECT_EQ(c.brain_mask.data[i], 1.0);
        brain += c.brain_mask.data[i] != 0;
      }
      for (std::size_t l = 0; l <= n; ++l) EXPECT_GT(hist[l], 0u) << "seed " << seed << " label " << l;
      for (std::size_t l = 1; l <= n; ++l) EXPECT_GE(hist[l] * 1000, brain);

      // Flood fill the mask with 26-connectivity from its first voxel.
      std::vector<char> seen(c.brain_mask.data.size(), 0);
      std::queue<std::array<long, 3>> q;
      std::size_t first = 0;
      while (c.brain_mask.data[first] == 0) ++first;
      const long D = 32, H = 32, W = 32;
      q.push({static_cast<long>(first / (H * W)), static_cast<long>(first / W % H), static_cast<long>(first % W)});
      seen[first] = 1;
      std::size_t reached = 1;
      while (!q.empty()) {
        auto [d, h, w] = q.front();
        q.pop();
        for (long a = -1; a <= 1; ++a)
          for (long b = -1; b <= 1; ++b)
            for (long e = -1; e <= 1; ++e) {
              const long nd = d + a, nh = h + b, nw = w + e;
              if (nd < 0 || nh < 0 || nw < 0 || nd >= D || nh >= H || nw >= W) continue;
              const std::size_t j = static_cast<std::size_t>((nd * H + nh) * W + nw);
              if (seen[j] || c.brain_mask.data[j] == 0) continue;
              seen[j] = 1;
              ++reached;
              q.push({nd, nh, nw});
            }
      }
      EXPECT_EQ(reached, brain);
    }
}

TEST(Phantom, IntensityBandsDisjoint) {
  const LabeledCase c = synth_phantom(3, {32, 32, 32}, 5, 0.0);
  double skull_min = 1e9, structure_max = -1e9;
  std::size_t skull_voxels = 0;
  for (std::size_t i = 0; i < c.intensity.data.size(); ++i) {
    const double x = c.intensity.data[i];
    if (c.brain_mask.data[i] == 0 && x > 0) {
      skull_min = std::min(skull_min, x);
      ++skull_voxels;
    }
    if (c.labels.data[i] != 0) structure_max = std::max(structure_max, x);
  }
  EXPECT_GT(skull_voxels, 0u);
  EXPECT_GT(skull_min, structure_max);
  EXPECT_GE(skull_min - structure_max, 0.1);
}

TEST(Phantom, DimsTooSmallRejected) {
  EXPECT_THROW(synth_phantom(1, {8, 32, 32}, 3, 0.0), ContractViolation);
  EXPECT_THROW(synth_phantom(1, {32, 32, 32}, 256, 0.0), ContractViolation);
}

TEST(Phantom, CaseSaveLoadRoundTrip) {
  TempDir tmp;
  LabeledCase c = synth_phantom(4, {16, 16, 16}, 2, 0.02);
  c.case_id = "case_007";
  save_case(c, tmp.path());
  const auto loaded = load_cases(tmp.path());
  ASSERT_EQ(loaded.size(), 1u);
  EXPECT_EQ(loaded[0].case_id, "case_007");
  EXPECT_EQ(loaded[0].labels.data, c.labels.data);
  EXPECT_EQ(loaded[0].brain_mask.data, c.brain_mask.data);
  for (std::size_t i = 0; i < c.intensity.data.size(); ++i)
    EXPECT_EQ(loaded[0].intensity.data[i], static_cast<double>(static_cast<float>(c.intensity.data[i])));
}

TEST(Batches, SizesAndCoverage) {
  const std::vector<LabeledCase> cases{ramp_case(10, 2, 2), ramp_case(10, 2, 2)};
  const auto sched = batch_schedule(cases, 6, 42);
  ASSERT_EQ(sched.size(), 4u);
  EXPECT_EQ(sched[0].size(), 6u);
  EXPECT_EQ(sched[1].size(), 6u);
  EXPECT_EQ(sched[2].size(), 6u);
  EXPECT_EQ(sched[3].size(), 2u);
  std::set<std::pair<std::size_t, std::size_t>> seen;
  for (const auto& b : sched)
    for (const auto& k : b) EXPECT_TRUE(seen.insert({k.case_index, k.slice_index}).second);
  std::set<std::pair<std::size_t, std::size_t>> grid;
  for (std::size_t c = 0; c < 2; ++c)
    for (std::size_t d = 0; d < 10; ++d) grid.insert({c, d});
  EXPECT_EQ(seen, grid);
}

TEST(Batches, ShuffleDeterminism) {
  const std::vector<LabeledCase> cases{ramp_case(10, 2, 2), ramp_case(7, 2, 2)};
  EXPECT_EQ(batch_schedule(cases, 4, 9), batch_schedule(cases, 4, 9));
  EXPECT_NE(batch_schedule(cases, 4, 9), batch_schedule(cases, 4, 10));
  EXPECT_THROW(batch_schedule(cases, 0, 9), ContractViolation);
}

TEST(Batches, StreamStacksSlices) {
  const std::vector<LabeledCase> cases{ramp_case(5, 2, 3)};
  BatchStream stream(cases, 2, 1, 3, 1);
  EXPECT_EQ(stream.batch_count(), 3u);
  std::size_t total = 0;
  while (auto b = stream.next()) {
    ASSERT_EQ(b->input.shape()[0], b->size());
    EXPECT_EQ(b->input.shape(), (Shape{b->size(), 3, 2, 3}));
    EXPECT_EQ(b->labels.size(), b->size() * 6);
    EXPECT_EQ(b->presence.size(), b->size() * 2);
    for (std::size_t n = 0; n < b->size(); ++n) {
      const SliceStack st = extract_slice_stack(cases[0], b->keys[n].slice_index, 1, 3);
      for (std::size_t i = 0; i < st.input.size(); ++i) EXPECT_EQ(b->input[n * 18 + i], st.input[i]);
      for (std::size_t i = 0; i < 6; ++i) EXPECT_EQ(b->labels[n * 6 + i], st.center_labels[i]);
    }
    total += b->size();
  }
  EXPECT_EQ(total, 5u);
}
