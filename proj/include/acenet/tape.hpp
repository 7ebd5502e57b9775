#pragma once

#include <cstdint>
#include <deque>
#include <functional>
#include <memory>
#include <optional>
#include <unordered_map>
#include <vector>

#include "acenet/tensor.hpp"

namespace acenet {

class Tape;

/// Handle to a value recorded on a Tape.
class Var {
 public:
  Var() = default;

  const Tensor& value() const;
  const Shape& shape() const { return value().shape(); }
  std::size_t id() const { return id_; }
  Tape* tape() const { return tape_; }
  bool requires_grad() const;
  bool valid() const { return tape_ != nullptr; }

 private:
  friend class Tape;
  Var(Tape* tape, std::size_t id) : tape_(tape), id_(id) {}

  Tape* tape_ = nullptr;
  std::size_t id_ = 0;
};

/// Gradient buffers handed to an op's backward function. `at(k)` is the
/// accumulator for the op's k-th input, or nullptr when that input needs no
/// gradient. `output()` is the op's own forward value.
class GradSink {
 public:
  GradSink(Tape& tape, const Tensor& output, std::vector<std::optional<Tensor>>& grads,
           const std::vector<std::size_t>& inputs)
      : tape_(tape), output_(output), grads_(grads), inputs_(inputs) {}
  Tensor* at(std::size_t k);
  const Tensor& output() const { return output_; }

 private:
  Tape& tape_;
  const Tensor& output_;
  std::vector<std::optional<Tensor>>& grads_;
  const std::vector<std::size_t>& inputs_;
};

using BackwardFn = std::function<void(const Tensor& grad_out, GradSink& sink)>;

/// Gradients produced by Tape::backward, keyed by node id.
class Gradients {
 public:
  Gradients() = default;
  Gradients(std::vector<std::optional<Tensor>> grads,
            std::unordered_map<const Tensor*, std::size_t> params)
      : grads_(std::move(grads)), params_(std::move(params)) {}

  /// Gradient of a node; zeros of matching shape when nothing reached it.
  bool has(const Var& v) const;
  const Tensor& of(const Var& v) const;
  /// Gradient of a parameter registered with Tape::parameter, or nullptr.
  const Tensor* of_parameter(const std::shared_ptr<Tensor>& param) const;

 private:
  std::vector<std::optional<Tensor>> grads_;
  std::unordered_map<const Tensor*, std::size_t> params_;
};

/// Computation record for reverse-mode differentiation. Operations append
/// nodes in execution order, so the node list is topologically sorted. A
/// tape is single-writer and supports exactly one backward pass.
class Tape {
 public:
  Tape() = default;
  Tape(const Tape&) = delete;
  Tape& operator=(const Tape&) = delete;

  Var constant(Tensor value);
  Var leaf(Tensor value);
  /// Leaf bound to a parameter tensor. Registering the same parameter twice
  /// returns the same node, so gradients from every use accumulate.
  Var parameter(const std::shared_ptr<Tensor>& param);

  Var record(Tensor value, std::vector<Var> inputs, BackwardFn backward);

  Gradients backward(const Var& loss);

  /// Running hash of the branch decisions taken by non-smooth ops (relu sign,
  /// maxpool argmax, maximum side). Two evaluations with equal signatures took
  /// the same piecewise-smooth branch.
  void note_branch(std::uint64_t decision) { branch_signature_ = (branch_signature_ ^ decision) * 0x100000001b3ULL; }
  std::uint64_t branch_signature() const { return branch_signature_; }

  std::size_t size() const { return nodes_.size(); }
  const Tensor& value(std::size_t id) const { return nodes_[id].value; }
  bool requires_grad(std::size_t id) const { return nodes_[id].requires_grad; }

 private:
  struct Node {
    Tensor value;
    bool requires_grad = false;
    std::vector<std::size_t> inputs;
    BackwardFn backward;
  };

  std::deque<Node> nodes_;  // stable references across appends
  std::unordered_map<const Tensor*, std::size_t> params_;
  bool consumed_ = false;
  std::uint64_t branch_signature_ = 0xcbf29ce484222325ULL;
};

}  // namespace acenet
