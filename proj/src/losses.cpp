#include "acenet/losses.hpp"

#include <algorithm>
#include <cmath>

#include "acenet/error.hpp"

namespace acenet {

LossBundle total_loss(LossBundle b, double lambda_sec) {
  b.lambda_sec = lambda_sec;
  b.l_total = b.l_ce_skull + b.l_dice_skull + b.l_ce_brain + b.l_dice_brain + lambda_sec * b.l_sec;
  return b;
}

std::vector<double> label_frequencies(std::span<const Volume* const> label_volumes, std::size_t num_labels) {
  std::vector<double> counts(num_labels, 0.0);
  double total = 0.0;
  for (const Volume* v : label_volumes) {
    for (double x : v->data) {
      const long label = std::lround(x);
      if (!(label >= 0 && static_cast<std::size_t>(label) < num_labels)) throw ContractViolation("label_frequencies: label " + std::to_string(label) + " outside [0," + std::to_string(num_labels) + ")");
      counts[label] += 1.0;
      total += 1.0;
    }
  }
  require(total > 0.0, "label_frequencies: no voxels");
  for (auto& c : counts) c /= total;
  return counts;
}

namespace {

double median(std::vector<double> v) {
  std::sort(v.begin(), v.end());
  const std::size_t n = v.size();
  return n % 2 == 1 ? v[n / 2] : 0.5 * (v[n / 2 - 1] + v[n / 2]);
}

}  // namespace

Volume class_weight_map(const Volume& labels, std::span<const double> frequencies) {
  require(!frequencies.empty(), "class_weight_map: empty frequency vector");
  for (std::size_t l = 0; l < frequencies.size(); ++l)
    require(frequencies[l] > 0.0, "class_weight_map: label " + std::to_string(l) + " never occurs in the training labels");
  const double med = median(std::vector<double>(frequencies.begin(), frequencies.end()));

  Volume out(labels.dims, DType::f32);
  const std::size_t H = labels.height(), W = labels.width();
  for (std::size_t d = 0; d < labels.depth(); ++d) {
    for (std::size_t h = 0; h < H; ++h) {
      for (std::size_t w = 0; w < W; ++w) {
        const long l = std::lround(labels.at(d, h, w));
        if (!(l >= 0 && static_cast<std::size_t>(l) < frequencies.size())) throw ContractViolation("class_weight_map: label " + std::to_string(l) + " has no frequency");
        const auto differs = [&](std::size_t hh, std::size_t ww) { return std::lround(labels.at(d, hh, ww)) != l; };
        const bool boundary = (h > 0 && differs(h - 1, w)) || (h + 1 < H && differs(h + 1, w)) ||
                              (w > 0 && differs(h, w - 1)) || (w + 1 < W && differs(h, w + 1));
        const double base = med / frequencies[l];
        out.at(d, h, w) = base + (boundary ? 2.0 * base : 0.0);
      }
    }
  }
  return out;
}

std::vector<double> presence_vector(std::span<const int> label_slice, std::size_t num_classes) {
  require(num_classes >= 1, "presence_vector: need at least one class");
  std::vector<double> present(num_classes - 1, 0.0);
  for (int v : label_slice) {
    if (!(v >= 0 && static_cast<std::size_t>(v) < num_classes)) throw ContractViolation("presence_vector: label " + std::to_string(v) + " outside [0," + std::to_string(num_classes) + ")");
    if (v > 0) present[v - 1] = 1.0;
  }
  return present;
}

double poly_lr(double base_lr, std::size_t iter, std::size_t iter_total, double power) {
  require(iter_total > 0, "poly_lr: iter_total must be positive");
  require(iter <= iter_total, "poly_lr: iter " + std::to_string(iter) + " exceeds iter_total " +
                                  std::to_string(iter_total));
  return base_lr * std::pow(1.0 - static_cast<double>(iter) / static_cast<double>(iter_total), power);
}

}  // namespace acenet
