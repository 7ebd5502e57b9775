#include "acenet/slice_stack.hpp"

#include <algorithm>
#include <random>

#include "acenet/error.hpp"
#include "acenet/losses.hpp"

namespace acenet {

std::vector<std::size_t> slice_sources(std::size_t slice_index, std::size_t s, std::size_t depth) {
  require(slice_index < depth, "slice index " + std::to_string(slice_index) + " outside [0," + std::to_string(depth) + ")");
  std::vector<std::size_t> sources;
  sources.reserve(2 * s + 1);
  for (std::size_t k = 0; k < 2 * s + 1; ++k) {
    const long long idx = static_cast<long long>(slice_index) + static_cast<long long>(k) - static_cast<long long>(s);
    sources.push_back(idx < 0 || idx >= static_cast<long long>(depth) ? slice_index : static_cast<std::size_t>(idx));
  }
  return sources;
}

SliceStack extract_slice_stack(const LabeledCase& c, std::size_t slice_index, std::size_t s, std::size_t num_classes) {
  const Volume& v = c.intensity;
  require(num_classes >= 2, "need at least two classes");
  SliceStack out;
  out.case_id = c.case_id;
  out.slice_index = slice_index;
  out.channel_sources = slice_sources(slice_index, s, v.depth());

  double lo = 0.0, scale = 1.0;
  if (!v.intensity_normalized) {
    const auto [mn, mx] = std::minmax_element(v.data.begin(), v.data.end());
    lo = *mn;
    scale = *mx > *mn ? 1.0 / (*mx - *mn) : 0.0;
  }
  const std::size_t plane = v.slice_size();
  out.input = Tensor({2 * s + 1, v.height(), v.width()});
  for (std::size_t k = 0; k < out.channel_sources.size(); ++k) {
    const double* src = v.data.data() + out.channel_sources[k] * plane;
    double* dst = out.input.data() + k * plane;
    for (std::size_t i = 0; i < plane; ++i) dst[i] = (src[i] - lo) * scale;
  }
  out.center_labels = c.labels.label_slice(slice_index);
  for (int l : out.center_labels)
    if (!(l >= 0 && static_cast<std::size_t>(l) < num_classes)) throw ContractViolation("case " + c.case_id + ": label " + std::to_string(l) + " outside [0," + std::to_string(num_classes) + ")");
  out.center_skull = c.brain_mask.label_slice(slice_index);
  for (int& m : out.center_skull) m = m != 0 ? 1 : 0;
  out.presence = presence_vector(out.center_labels, num_classes);
  return out;
}

std::vector<std::vector<SliceKey>> batch_schedule(const std::vector<LabeledCase>& cases, std::size_t batch_size,
                                                  std::uint64_t shuffle_seed) {
  require(batch_size >= 1, "batch size must be >= 1");
  std::vector<SliceKey> keys;
  for (std::size_t ci = 0; ci < cases.size(); ++ci)
    for (std::size_t d = 0; d < cases[ci].intensity.depth(); ++d) keys.push_back({ci, d});
  std::mt19937_64 rng(shuffle_seed);
  std::shuffle(keys.begin(), keys.end(), rng);
  std::vector<std::vector<SliceKey>> batches;
  for (std::size_t i = 0; i < keys.size(); i += batch_size)
    batches.emplace_back(keys.begin() + i, keys.begin() + std::min(keys.size(), i + batch_size));
  return batches;
}

SliceBatch make_batch(const std::vector<LabeledCase>& cases, const std::vector<SliceKey>& keys, std::size_t s,
                      std::size_t num_classes, const std::vector<Volume>* weight_maps) {
  require(!keys.empty(), "empty batch");
  SliceBatch batch;
  batch.keys = keys;
  Shape shape;
  std::vector<double> input;
  for (const auto& key : keys) {
    require(key.case_index < cases.size(), "batch key names a missing case");
    const LabeledCase& c = cases[key.case_index];
    SliceStack st = extract_slice_stack(c, key.slice_index, s, num_classes);
    if (shape.empty()) shape = st.input.shape();
    require(st.input.shape() == shape, "all slices of a batch must share H and W");
    input.insert(input.end(), st.input.storage().begin(), st.input.storage().end());
    batch.labels.insert(batch.labels.end(), st.center_labels.begin(), st.center_labels.end());
    batch.skull.insert(batch.skull.end(), st.center_skull.begin(), st.center_skull.end());
    batch.presence.insert(batch.presence.end(), st.presence.begin(), st.presence.end());
    if (weight_maps) {
      const Volume& wm = weight_maps->at(key.case_index);
      const double* src = wm.data.data() + key.slice_index * wm.slice_size();
      batch.weights.insert(batch.weights.end(), src, src + wm.slice_size());
    }
  }
  batch.input = Tensor({keys.size(), shape[0], shape[1], shape[2]}, std::move(input));
  return batch;
}

BatchStream::BatchStream(const std::vector<LabeledCase>& cases, std::size_t batch_size, std::size_t s,
                         std::size_t num_classes, std::uint64_t shuffle_seed, const std::vector<Volume>* weight_maps)
    : cases_(cases),
      s_(s),
      num_classes_(num_classes),
      weight_maps_(weight_maps),
      schedule_(batch_schedule(cases, batch_size, shuffle_seed)) {}

std::optional<SliceBatch> BatchStream::next() {
  if (cursor_ >= schedule_.size()) return std::nullopt;
  return make_batch(cases_, schedule_[cursor_++], s_, num_classes_, weight_maps_);
}

}  // namespace acenet
