#include "acenet/tape.hpp"

#include "acenet/error.hpp"

namespace acenet {

const Tensor& Var::value() const {
  require(tape_ != nullptr, "use of an unbound Var");
  return tape_->value(id_);
}

bool Var::requires_grad() const { return tape_ && tape_->requires_grad(id_); }

Tensor* GradSink::at(std::size_t k) {
  const std::size_t id = inputs_.at(k);
  if (!tape_.requires_grad(id)) return nullptr;
  auto& slot = grads_[id];
  if (!slot) slot.emplace(tape_.value(id).shape(), 0.0);
  return &*slot;
}

bool Gradients::has(const Var& v) const { return v.id() < grads_.size() && grads_[v.id()].has_value(); }

const Tensor& Gradients::of(const Var& v) const {
  require(has(v), "no gradient recorded for node " + std::to_string(v.id()));
  return *grads_[v.id()];
}

const Tensor* Gradients::of_parameter(const std::shared_ptr<Tensor>& param) const {
  auto it = params_.find(param.get());
  if (it == params_.end() || !grads_[it->second]) return nullptr;
  return &*grads_[it->second];
}

Var Tape::constant(Tensor value) {
  require(!consumed_, "tape already consumed by backward()");
  nodes_.push_back(Node{std::move(value), false, {}, {}});
  return Var(this, nodes_.size() - 1);
}

Var Tape::leaf(Tensor value) {
  require(!consumed_, "tape already consumed by backward()");
  nodes_.push_back(Node{std::move(value), true, {}, {}});
  return Var(this, nodes_.size() - 1);
}

Var Tape::parameter(const std::shared_ptr<Tensor>& param) {
  require(param != nullptr, "null parameter handle");
  if (auto it = params_.find(param.get()); it != params_.end()) return Var(this, it->second);
  Var v = leaf(*param);
  params_.emplace(param.get(), v.id());
  return v;
}

Var Tape::record(Tensor value, std::vector<Var> inputs, BackwardFn backward) {
  require(!consumed_, "tape already consumed by backward()");
  Node node;
  node.value = std::move(value);
  node.inputs.reserve(inputs.size());
  for (const auto& in : inputs) {
    require(in.tape() == this, "operation mixes values from different tapes");
    node.inputs.push_back(in.id());
    node.requires_grad = node.requires_grad || nodes_[in.id()].requires_grad;
  }
  if (node.requires_grad) node.backward = std::move(backward);
#ifndef NDEBUG
  require(node.value.all_finite(), "non-finite value produced by a recorded operation");
#endif
  nodes_.push_back(std::move(node));
  return Var(this, nodes_.size() - 1);
}

Gradients Tape::backward(const Var& loss) {
  require(!consumed_, "backward() called twice on the same record");
  require(loss.tape() == this, "loss does not belong to this tape");
  require(loss.value().size() == 1, "backward() needs a scalar loss, got shape " + shape_string(loss.shape()));
  consumed_ = true;

  std::vector<std::optional<Tensor>> grads(nodes_.size());
  grads[loss.id()].emplace(loss.shape(), 1.0);
  for (std::size_t id = loss.id() + 1; id-- > 0;) {
    Node& node = nodes_[id];
    if (!node.requires_grad || !grads[id] || !node.backward) continue;
    GradSink sink(*this, node.value, grads, node.inputs);
    node.backward(*grads[id], sink);
    // Interior gradients are no longer needed once propagated.
    if (!node.inputs.empty()) grads[id].reset();
    node.backward = nullptr;
  }
  return Gradients(std::move(grads), params_);
}

}  // namespace acenet
