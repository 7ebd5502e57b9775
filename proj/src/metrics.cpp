#include "acenet/metrics.hpp"

#include <algorithm>
#include <cmath>
#include <limits>

#include "acenet/error.hpp"
#include "acenet/slice_stack.hpp"

namespace acenet {

Segmentation segment_volume(const ModelParams& params, const Volume& intensity, std::size_t batch_slices) {
  const ACEnetConfig& cfg = params.config;
  intensity.validate();
  require(intensity.height() == cfg.input_size && intensity.width() == cfg.input_size,
          "segment_volume: slices are " + std::to_string(intensity.height()) + "x" +
              std::to_string(intensity.width()) + " but the model expects " + std::to_string(cfg.input_size) +
              "x" + std::to_string(cfg.input_size));
  require(batch_slices >= 1, "segment_volume: batch_slices must be >= 1");

  LabeledCase c;
  c.case_id = "inference";
  c.intensity = intensity.intensity_normalized ? intensity : normalize_intensity(intensity);
  c.labels = Volume(intensity.dims, DType::u8, 0.0);
  c.brain_mask = Volume(intensity.dims, DType::u8, 1.0);

  Segmentation seg;
  seg.labels = Volume(intensity.dims, cfg.num_structures <= 256 ? DType::u8 : DType::i16, 0.0);
  seg.brain_mask = Volume(intensity.dims, DType::u8, 1.0);
  const std::size_t plane = intensity.slice_size();
  const std::size_t C = cfg.num_structures;
  const std::vector<LabeledCase> one{c};

  for (std::size_t first = 0; first < intensity.depth(); first += batch_slices) {
    std::vector<SliceKey> keys;
    for (std::size_t d = first; d < std::min(intensity.depth(), first + batch_slices); ++d) keys.push_back({0, d});
    SliceBatch batch = make_batch(one, keys, cfg.s, C);
    Tape tape;
    ForwardOutput out = forward(tape, params, tape.constant(batch.input), {false, 0, false});
    const Tensor& logits = out.brain_logits.value();
    for (std::size_t n = 0; n < keys.size(); ++n) {
      const std::size_t base = keys[n].slice_index * plane;
      for (std::size_t i = 0; i < plane; ++i) {
        std::size_t best = 0;
        double best_v = logits[(n * C) * plane + i];
        for (std::size_t k = 1; k < C; ++k) {
          const double v = logits[(n * C + k) * plane + i];
          if (v > best_v) best_v = v, best = k;
        }
        seg.labels.data[base + i] = static_cast<double>(best);
      }
      if (out.skull_logits) {
        const Tensor& sk = out.skull_logits->value();
        for (std::size_t i = 0; i < plane; ++i) {
          const bool brain = sk[(n * 2 + 1) * plane + i] > sk[(n * 2) * plane + i];
          seg.brain_mask.data[base + i] = brain ? 1.0 : 0.0;
          if (!brain) seg.labels.data[base + i] = 0.0;
        }
      }
    }
  }
  return seg;
}

std::vector<OverlapRow> overlap_metrics(const Volume& pred, const Volume& truth, std::span<const int> labels) {
  pred.validate();
  truth.validate();
  require(pred.dims == truth.dims, "overlap_metrics: prediction and truth dims differ");
  std::vector<OverlapRow> rows;
  for (int label : labels) {
    OverlapRow r;
    r.label = label;
    const double l = label;
    for (std::size_t i = 0; i < pred.data.size(); ++i) {
      const bool p = pred.data[i] == l, t = truth.data[i] == l;
      r.pred_count += p;
      r.truth_count += t;
      r.intersection += p && t;
    }
    if (r.both_empty()) {
      r.dice = r.jaccard = 1.0;
    } else {
      const double inter = static_cast<double>(r.intersection);
      r.dice = 2.0 * inter / static_cast<double>(r.pred_count + r.truth_count);
      r.jaccard = inter / static_cast<double>(r.pred_count + r.truth_count - r.intersection);
    }
    rows.push_back(r);
  }
  return rows;
}

double mean_foreground_dice(const Volume& pred, const Volume& truth, std::size_t num_classes) {
  require(num_classes >= 2, "mean_foreground_dice: need a foreground class");
  std::vector<int> labels;
  for (std::size_t l = 1; l < num_classes; ++l) labels.push_back(static_cast<int>(l));
  double sum = 0.0;
  for (const auto& r : overlap_metrics(pred, truth, labels)) sum += r.dice;
  return sum / static_cast<double>(labels.size());
}

Volume label_mask(const Volume& labels, int label) {
  Volume m(labels.dims, DType::u8, 0.0);
  for (std::size_t i = 0; i < labels.data.size(); ++i) m.data[i] = labels.data[i] == label ? 1.0 : 0.0;
  return m;
}

std::vector<std::array<std::size_t, 3>> boundary_voxels(const Volume& mask) {
  std::vector<std::array<std::size_t, 3>> out;
  const std::size_t D = mask.depth(), H = mask.height(), W = mask.width();
  auto inside = [&](std::size_t d, std::size_t h, std::size_t w) { return mask.at(d, h, w) != 0.0; };
  for (std::size_t d = 0; d < D; ++d)
    for (std::size_t h = 0; h < H; ++h)
      for (std::size_t w = 0; w < W; ++w) {
        if (!inside(d, h, w)) continue;
        const bool edge = d == 0 || h == 0 || w == 0 || d + 1 == D || h + 1 == H || w + 1 == W;
        if (edge || !inside(d - 1, h, w) || !inside(d + 1, h, w) || !inside(d, h - 1, w) || !inside(d, h + 1, w) ||
            !inside(d, h, w - 1) || !inside(d, h, w + 1))
          out.push_back({d, h, w});
      }
  return out;
}

namespace {

// One pass of the lower-envelope squared distance transform along a line.
void edt_line(const double* f, double* out, std::size_t n, std::vector<std::size_t>& v, std::vector<double>& z) {
  constexpr double inf = std::numeric_limits<double>::infinity();
  v.assign(n, 0);
  z.assign(n + 1, 0.0);
  std::size_t k = 0;
  std::size_t first = n;
  for (std::size_t q = 0; q < n; ++q)
    if (f[q] < inf) {
      first = q;
      break;
    }
  if (first == n) {
    std::fill(out, out + n, inf);
    return;
  }
  v[0] = first;
  z[0] = -inf;
  z[1] = inf;
  for (std::size_t q = first + 1; q < n; ++q) {
    if (f[q] == inf) continue;
    const double dq = static_cast<double>(q);
    for (;;) {
      const double dv = static_cast<double>(v[k]);
      const double s = ((f[q] + dq * dq) - (f[v[k]] + dv * dv)) / (2.0 * dq - 2.0 * dv);
      if (s <= z[k]) {
        if (k == 0) {
          v[0] = q;
          z[0] = -inf;
          z[1] = inf;
          break;
        }
        --k;
        continue;
      }
      ++k;
      v[k] = q;
      z[k] = s;
      z[k + 1] = inf;
      break;
    }
  }
  k = 0;
  for (std::size_t q = 0; q < n; ++q) {
    while (z[k + 1] < static_cast<double>(q)) ++k;
    const double diff = static_cast<double>(q) - static_cast<double>(v[k]);
    out[q] = diff * diff + f[v[k]];
  }
}

}  // namespace

std::vector<double> squared_distance_transform(const Volume& sites) {
  constexpr double inf = std::numeric_limits<double>::infinity();
  const std::size_t D = sites.depth(), H = sites.height(), W = sites.width();
  std::vector<double> g(sites.voxel_count());
  for (std::size_t i = 0; i < g.size(); ++i) g[i] = sites.data[i] != 0.0 ? 0.0 : inf;
  std::vector<std::size_t> v;
  std::vector<double> z, in, out;
  const std::array<std::size_t, 3> len{D, H, W};
  const std::array<std::size_t, 3> stride{H * W, W, 1};
  for (std::size_t axis = 0; axis < 3; ++axis) {
    const std::size_t n = len[axis];
    in.resize(n);
    out.resize(n);
    for (std::size_t start = 0; start < g.size(); ++start) {
      // visit each line once: its first element has coordinate 0 along `axis`
      if ((start / stride[axis]) % n != 0) continue;
      for (std::size_t q = 0; q < n; ++q) in[q] = g[start + q * stride[axis]];
      edt_line(in.data(), out.data(), n, v, z);
      for (std::size_t q = 0; q < n; ++q) g[start + q * stride[axis]] = out[q];
    }
  }
  return g;
}

double hausdorff(const Volume& pred_mask, const Volume& truth_mask) {
  pred_mask.validate();
  truth_mask.validate();
  require(pred_mask.dims == truth_mask.dims, "hausdorff: mask dims differ");
  const auto bp = boundary_voxels(pred_mask);
  const auto bt = boundary_voxels(truth_mask);
  if (bp.empty() || bt.empty()) throw MetricError("hausdorff: empty mask");
  auto sites = [&](const std::vector<std::array<std::size_t, 3>>& pts) {
    Volume s(pred_mask.dims, DType::u8, 0.0);
    for (const auto& p : pts) s.at(p[0], p[1], p[2]) = 1.0;
    return s;
  };
  const std::vector<double> to_t = squared_distance_transform(sites(bt));
  const std::vector<double> to_p = squared_distance_transform(sites(bp));
  double worst = 0.0;
  for (const auto& p : bp) worst = std::max(worst, to_t[pred_mask.index(p[0], p[1], p[2])]);
  for (const auto& t : bt) worst = std::max(worst, to_p[pred_mask.index(t[0], t[1], t[2])]);
  return std::sqrt(worst);
}

}  // namespace acenet
