#include <algorithm>
#include <cmath>

#include "acenet/error.hpp"
#include "acenet/losses.hpp"

namespace acenet {
namespace {

struct ProbLayout {
  std::size_t n, c, plane;
};

ProbLayout prob_layout(const Shape& s, std::size_t label_count, const char* op) {
  ProbLayout l{};
  if (s.size() == 3) {
    l = {1, s[0], s[1] * s[2]};
  } else if (s.size() == 4) {
    l = {s[0], s[1], s[2] * s[3]};
  } else {
    throw ContractViolation(std::string(op) + ": probabilities must be [C,H,W] or [N,C,H,W]");
  }
  require(label_count == l.n * l.plane, std::string(op) + ": expected " + std::to_string(l.n * l.plane) +
                                            " labels, got " + std::to_string(label_count));
  return l;
}

void check_labels(std::span<const int> labels, std::size_t classes, const char* op) {
  for (int v : labels)
    if (!(v >= 0 && static_cast<std::size_t>(v) < classes)) throw ContractViolation(std::string(op) + ": label " + std::to_string(v) + " outside [0," + std::to_string(classes) + ")");
}

}  // namespace

Var ce_loss(const Var& probs, std::span<const int> labels, std::span<const double> weights) {
  const ProbLayout l = prob_layout(probs.shape(), labels.size(), "ce_loss");
  check_labels(labels, l.c, "ce_loss");
  require(weights.empty() || weights.size() == labels.size(), "ce_loss: one weight per pixel required");
  const Tensor& p = probs.value();

  double total = 0.0, norm = 0.0;
  for (std::size_t n = 0; n < l.n; ++n) {
    for (std::size_t j = 0; j < l.plane; ++j) {
      const std::size_t px = n * l.plane + j;
      const double w = weights.empty() ? 1.0 : weights[px];
      const double pv = std::max(p[(n * l.c + labels[px]) * l.plane + j], kProbabilityFloor);
      total += -w * std::log(pv);
      norm += w;
    }
  }
  require(norm > 0.0, "ce_loss: weights sum to zero");
  std::vector<int> lab(labels.begin(), labels.end());
  std::vector<double> wts(weights.begin(), weights.end());
  Tape* tape = probs.tape();
  const std::size_t pid = probs.id();
  return tape->record(Tensor::scalar(total / norm), {probs},
                      [=, lab = std::move(lab), wts = std::move(wts)](const Tensor& gout, GradSink& sink) {
                        Tensor* g = sink.at(0);
                        if (!g) return;
                        const Tensor& pv = tape->value(pid);
                        for (std::size_t n = 0; n < l.n; ++n) {
                          for (std::size_t j = 0; j < l.plane; ++j) {
                            const std::size_t px = n * l.plane + j;
                            const std::size_t i = (n * l.c + lab[px]) * l.plane + j;
                            if (pv[i] <= kProbabilityFloor) continue;
                            const double w = wts.empty() ? 1.0 : wts[px];
                            (*g)[i] += -gout[0] * w / (pv[i] * norm);
                          }
                        }
                      });
}

Var dice_loss(const Var& probs, std::span<const int> labels) {
  const ProbLayout l = prob_layout(probs.shape(), labels.size(), "dice_loss");
  check_labels(labels, l.c, "dice_loss");
  const Tensor& p = probs.value();

  std::vector<double> inter(l.c, 0.0), denom(l.c, 0.0);
  for (std::size_t n = 0; n < l.n; ++n) {
    for (std::size_t c = 0; c < l.c; ++c) {
      const double* pc = p.data() + (n * l.c + c) * l.plane;
      for (std::size_t j = 0; j < l.plane; ++j) {
        const bool truth = labels[n * l.plane + j] == static_cast<int>(c);
        denom[c] += pc[j] * pc[j] + (truth ? 1.0 : 0.0);
        if (truth) inter[c] += pc[j];
      }
    }
  }
  double loss = 0.0;
  for (std::size_t c = 0; c < l.c; ++c) {
    denom[c] += kDiceEpsilon;
    loss += -2.0 * inter[c] / denom[c];
  }
  loss /= static_cast<double>(l.c);

  std::vector<int> lab(labels.begin(), labels.end());
  Tape* tape = probs.tape();
  const std::size_t pid = probs.id();
  return tape->record(
      Tensor::scalar(loss), {probs},
      [=, lab = std::move(lab)](const Tensor& gout, GradSink& sink) {
        Tensor* g = sink.at(0);
        if (!g) return;
        const Tensor& pv = tape->value(pid);
        const double k = gout[0] / static_cast<double>(l.c);
        for (std::size_t n = 0; n < l.n; ++n) {
          for (std::size_t c = 0; c < l.c; ++c) {
            const std::size_t off = (n * l.c + c) * l.plane;
            const double d = denom[c];
            for (std::size_t j = 0; j < l.plane; ++j) {
              const double gt = lab[n * l.plane + j] == static_cast<int>(c) ? 1.0 : 0.0;
              (*g)[off + j] += k * (-2.0 * gt / d + 4.0 * inter[c] * pv[off + j] / (d * d));
            }
          }
        }
      });
}

Var sec_loss(const Var& presence_probs, std::span<const double> truth) {
  const Tensor& p = presence_probs.value();
  require(presence_probs.shape().size() <= 2, "sec_loss: probabilities must be [C'] or [N,C']");
  require(p.size() == truth.size(), "sec_loss: " + std::to_string(truth.size()) + " targets for " +
                                        std::to_string(p.size()) + " probabilities");
  const double m = static_cast<double>(p.size());
  double total = 0.0;
  for (std::size_t i = 0; i < p.size(); ++i) {
    const double q = std::clamp(p[i], kProbabilityFloor, 1.0 - kProbabilityFloor);
    total += truth[i] * std::log(q) + (1.0 - truth[i]) * std::log(1.0 - q);
  }
  std::vector<double> y(truth.begin(), truth.end());
  Tape* tape = presence_probs.tape();
  const std::size_t pid = presence_probs.id();
  return tape->record(Tensor::scalar(-total / m), {presence_probs},
                      [=, y = std::move(y)](const Tensor& gout, GradSink& sink) {
                        Tensor* g = sink.at(0);
                        if (!g) return;
                        const Tensor& pv = tape->value(pid);
                        for (std::size_t i = 0; i < pv.size(); ++i) {
                          const double q = pv[i];
                          if (q <= kProbabilityFloor || q >= 1.0 - kProbabilityFloor) continue;
                          (*g)[i] += -gout[0] / m * (y[i] / q - (1.0 - y[i]) / (1.0 - q));
                        }
                      });
}

}  // namespace acenet
