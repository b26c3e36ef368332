// SPDX-License-Identifier: Apache-2.0
#include "ta2n/autograd.hpp"

#include "ta2n/error.hpp"

namespace ta2n {

Parameter::Parameter(std::string n, Tensor v) : name(std::move(n)), value(std::move(v)) {
  grad = Tensor::zeros_like(value);
}

void Parameter::zero_grad() { grad = Tensor::zeros_like(value); }

Var Tape::constant(Tensor value) {
  nodes_.push_back(Node{"constant", std::move(value), {}, false, nullptr, {}});
  return Var(nodes_.size() - 1);
}

Var Tape::parameter(const Parameter& p) {
  nodes_.push_back(Node{"parameter:" + p.name, p.value, {}, recording_, &p, {}});
  return Var(nodes_.size() - 1);
}

Var Tape::record(std::string op, Tensor value, const std::vector<Var>& inputs, BackwardFn fn) {
  bool needs = false;
  if (recording_) {
    for (auto in : inputs) needs = needs || node(in).requires_grad;
  }
  nodes_.push_back(Node{std::move(op), std::move(value), {}, needs, nullptr, needs ? std::move(fn) : BackwardFn{}});
  return Var(nodes_.size() - 1);
}

const Tape::Node& Tape::node(Var v) const {
  require(v.id_ < nodes_.size(), ErrorCode::kInvalidArgument, "Var does not belong to this tape");
  return nodes_[v.id_];
}

const Tensor& Tape::value(Var v) const { return node(v).value; }

bool Tape::requires_grad(Var v) const { return node(v).requires_grad; }

Tensor& Tape::grad(Var v) {
  require(v.id_ < nodes_.size(), ErrorCode::kInvalidArgument, "Var does not belong to this tape");
  Node& n = nodes_[v.id_];
  if (n.grad.empty()) n.grad = Tensor::zeros_like(n.value);
  return n.grad;
}

const Tensor& Tape::grad(Var v) const {
  const Node& n = node(v);
  require(!n.grad.empty(), ErrorCode::kInvalidArgument, "no gradient recorded for node " + n.op);
  return n.grad;
}

void Tape::backward(Var loss) {
  require(recording_, ErrorCode::kInvalidArgument, "backward on a non-recording tape");
  require(node(loss).value.size() == 1, ErrorCode::kShapeMismatch, "backward needs a scalar loss");
  if (!node(loss).requires_grad) return;
  grad(loss)[0] += 1.0;
  for (std::size_t i = loss.id_ + 1; i-- > 0;) {
    Node& n = nodes_[i];
    if (!n.requires_grad || n.grad.empty() || !n.backward) continue;
    // Closures only touch input nodes' grads; nodes_ is never resized here.
    n.backward(*this, n.grad);
  }
}

Tensor Tape::parameter_grad(const Parameter& p) const {
  Tensor total = Tensor::zeros_like(p.value);
  for (const auto& n : nodes_) {
    if (n.param == &p && !n.grad.empty()) add_inplace(total, n.grad);
  }
  return total;
}

void Tape::note_branch(std::uint64_t value) {
  branch_hash_ ^= value + 0x9e3779b97f4a7c15ULL + (branch_hash_ << 6) + (branch_hash_ >> 2);
}

void accumulate_gradients(const Tape& tape, const std::vector<Parameter*>& params) {
  for (auto* p : params) add_inplace(p->grad, tape.parameter_grad(*p));
}

}  // namespace ta2n
