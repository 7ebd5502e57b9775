#include <Eigen/Core>
#include <cmath>

#include "acenet/error.hpp"
#include "acenet/ops.hpp"

namespace acenet {
namespace {

using RowMat = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using ConstMapMat = Eigen::Map<const RowMat>;
using MapMat = Eigen::Map<RowMat>;

void require_same_shape(const Var& a, const Var& b, const char* op) {
  require(a.shape() == b.shape(), std::string(op) + ": shape mismatch " + shape_string(a.shape()) + " vs " +
                                      shape_string(b.shape()));
}

}  // namespace

Var dense(const Var& input, const Var& weight, const Var& bias) {
  const Shape& ws = weight.shape();
  require(ws.size() == 2, "dense: weight must be [m,n], got " + shape_string(ws));
  const std::size_t m = ws[0], n = ws[1];
  const Shape& is = input.shape();
  require((is.size() == 1 && is[0] == n) || (is.size() == 2 && is[1] == n),
          "dense: input " + shape_string(is) + " incompatible with weight " + shape_string(ws));
  require(bias.shape() == Shape{m}, "dense: bias must be [" + std::to_string(m) + "]");
  const std::size_t rows = is.size() == 1 ? 1 : is[0];

  Tensor out(is.size() == 1 ? Shape{m} : Shape{rows, m});
  {
    const ConstMapMat X(input.value().data(), rows, n);
    const ConstMapMat W(weight.value().data(), m, n);
    const Eigen::Map<const Eigen::RowVectorXd> b(bias.value().data(), m);
    MapMat Y(out.data(), rows, m);
    Y.noalias() = X * W.transpose();
    Y.rowwise() += b;
  }
  Tape* tape = input.tape();
  const std::size_t xid = input.id(), wid = weight.id();
  return tape->record(std::move(out), {input, weight, bias}, [=](const Tensor& gout, GradSink& sink) {
    const ConstMapMat dY(gout.data(), rows, m);
    if (Tensor* gx = sink.at(0)) {
      MapMat dX(gx->data(), rows, n);
      dX.noalias() += dY * ConstMapMat(tape->value(wid).data(), m, n);
    }
    if (Tensor* gw = sink.at(1)) {
      MapMat dW(gw->data(), m, n);
      dW.noalias() += dY.transpose() * ConstMapMat(tape->value(xid).data(), rows, n);
    }
    if (Tensor* gb = sink.at(2)) {
      Eigen::Map<Eigen::RowVectorXd> db(gb->data(), m);
      db += dY.colwise().sum();
    }
  });
}

Var relu(const Var& x) {
  Tensor out(x.shape());
  const Tensor& xv = x.value();
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = xv[i] > 0.0 ? xv[i] : 0.0;
  std::uint64_t active = 0;
  for (std::size_t i = 0; i < out.size(); ++i)
    if (xv[i] > 0.0) active = active * 0x9e3779b97f4a7c15ULL + i + 1;
  x.tape()->note_branch(active);
  return x.tape()->record(std::move(out), {x}, [](const Tensor& gout, GradSink& sink) {
    Tensor* gx = sink.at(0);
    if (!gx) return;
    const Tensor& y = sink.output();
    for (std::size_t i = 0; i < y.size(); ++i)
      if (y[i] > 0.0) (*gx)[i] += gout[i];
  });
}

Var sigmoid(const Var& x) {
  Tensor out(x.shape());
  const Tensor& xv = x.value();
  for (std::size_t i = 0; i < out.size(); ++i) {
    const double v = xv[i];
    // Branch on sign so exp never overflows.
    if (v >= 0.0) {
      out[i] = 1.0 / (1.0 + std::exp(-v));
    } else {
      const double e = std::exp(v);
      out[i] = e / (1.0 + e);
    }
  }
  return x.tape()->record(std::move(out), {x}, [](const Tensor& gout, GradSink& sink) {
    Tensor* gx = sink.at(0);
    if (!gx) return;
    const Tensor& y = sink.output();
    for (std::size_t i = 0; i < y.size(); ++i) (*gx)[i] += gout[i] * y[i] * (1.0 - y[i]);
  });
}

Var add(const Var& a, const Var& b) {
  require_same_shape(a, b, "add");
  Tensor out(a.shape());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = a.value()[i] + b.value()[i];
  return a.tape()->record(std::move(out), {a, b}, [](const Tensor& gout, GradSink& sink) {
    for (std::size_t k = 0; k < 2; ++k)
      if (Tensor* g = sink.at(k))
        for (std::size_t i = 0; i < gout.size(); ++i) (*g)[i] += gout[i];
  });
}

Var mul(const Var& a, const Var& b) {
  require_same_shape(a, b, "mul");
  Tensor out(a.shape());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = a.value()[i] * b.value()[i];
  Tape* tape = a.tape();
  const std::size_t aid = a.id(), bid = b.id();
  return tape->record(std::move(out), {a, b}, [=](const Tensor& gout, GradSink& sink) {
    const Tensor& av = tape->value(aid);
    const Tensor& bv = tape->value(bid);
    if (Tensor* ga = sink.at(0))
      for (std::size_t i = 0; i < gout.size(); ++i) (*ga)[i] += gout[i] * bv[i];
    if (Tensor* gb = sink.at(1))
      for (std::size_t i = 0; i < gout.size(); ++i) (*gb)[i] += gout[i] * av[i];
  });
}

Var maximum(const Var& a, const Var& b) {
  require_same_shape(a, b, "maximum");
  Tensor out(a.shape());
  // Ties go to the first operand.
  std::vector<bool> take_a(out.size());
  for (std::size_t i = 0; i < out.size(); ++i) {
    take_a[i] = a.value()[i] >= b.value()[i];
    out[i] = take_a[i] ? a.value()[i] : b.value()[i];
  }
  std::uint64_t picks = 0;
  for (std::size_t i = 0; i < out.size(); ++i) picks = picks * 0x9e3779b97f4a7c15ULL + take_a[i];
  a.tape()->note_branch(picks);
  return a.tape()->record(std::move(out), {a, b}, [take_a = std::move(take_a)](const Tensor& gout, GradSink& sink) {
    if (Tensor* ga = sink.at(0))
      for (std::size_t i = 0; i < gout.size(); ++i)
        if (take_a[i]) (*ga)[i] += gout[i];
    if (Tensor* gb = sink.at(1))
      for (std::size_t i = 0; i < gout.size(); ++i)
        if (!take_a[i]) (*gb)[i] += gout[i];
  });
}

Var scale(const Var& x, double factor) {
  Tensor out(x.shape());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = x.value()[i] * factor;
  return x.tape()->record(std::move(out), {x}, [factor](const Tensor& gout, GradSink& sink) {
    if (Tensor* g = sink.at(0))
      for (std::size_t i = 0; i < gout.size(); ++i) (*g)[i] += gout[i] * factor;
  });
}

Var reshape(const Var& x, Shape shape) {
  Tensor out = x.value().reshaped(std::move(shape));
  return x.tape()->record(std::move(out), {x}, [](const Tensor& gout, GradSink& sink) {
    if (Tensor* g = sink.at(0))
      for (std::size_t i = 0; i < gout.size(); ++i) (*g)[i] += gout[i];
  });
}

Var sum(const Var& x) {
  double s = 0.0;
  for (double v : x.value().values()) s += v;
  return x.tape()->record(Tensor::scalar(s), {x}, [](const Tensor& gout, GradSink& sink) {
    if (Tensor* g = sink.at(0))
      for (std::size_t i = 0; i < g->size(); ++i) (*g)[i] += gout[0];
  });
}

Var weighted_sum(const Var& x, const Tensor& weights) {
  require(weights.shape() == x.shape(), "weighted_sum: weight shape " + shape_string(weights.shape()) +
                                            " does not match " + shape_string(x.shape()));
  double s = 0.0;
  for (std::size_t i = 0; i < weights.size(); ++i) s += x.value()[i] * weights[i];
  return x.tape()->record(Tensor::scalar(s), {x}, [weights](const Tensor& gout, GradSink& sink) {
    if (Tensor* g = sink.at(0))
      for (std::size_t i = 0; i < g->size(); ++i) (*g)[i] += gout[0] * weights[i];
  });
}

}  // namespace acenet
