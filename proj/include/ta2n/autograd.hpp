// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstddef>
#include <cstdint>
#include <deque>
#include <functional>
#include <string>
#include <vector>

#include "ta2n/tensor.hpp"

namespace ta2n {

// Trainable weight with its accumulated gradient.
struct Parameter {
  Parameter() = default;
  Parameter(std::string name, Tensor value);

  void zero_grad();

  std::string name;
  Tensor value;
  Tensor grad;
};

class Tape;

// Handle to a value recorded on a Tape.
class Var {
 public:
  Var() = default;
  std::size_t id() const { return id_; }

 private:
  friend class Tape;
  explicit Var(std::size_t id) : id_(id) {}
  std::size_t id_ = static_cast<std::size_t>(-1);
};

// Explicit computation record for reverse-mode differentiation. Each primitive
// appends one node holding its output and a closure that maps the output
// gradient onto input gradients. backward() replays the list in reverse.
class Tape {
 public:
  using BackwardFn = std::function<void(Tape&, const Tensor& grad_out)>;

  explicit Tape(bool record_gradients = true) : recording_(record_gradients) {}

  Tape(const Tape&) = delete;
  Tape& operator=(const Tape&) = delete;

  Var constant(Tensor value);
  Var parameter(const Parameter& p);

  // Op-author API. inputs lists every Var the closure may write gradients to.
  Var record(std::string op, Tensor value, const std::vector<Var>& inputs, BackwardFn fn);

  const Tensor& value(Var v) const;
  bool requires_grad(Var v) const;
  bool recording() const { return recording_; }

  // Gradient buffer of v, allocated on first use. Valid only during/after backward.
  Tensor& grad(Var v);
  const Tensor& grad(Var v) const;

  // Seeds d(loss)/d(loss) = 1 and propagates to every reachable node.
  void backward(Var loss);

  // Sum of gradients over every node bound to p (zeros if p was never used).
  Tensor parameter_grad(const Parameter& p) const;

  // Non-smooth primitives mix their branch decisions (ReLU signs, argmax
  // positions, clamp regions, interpolation cells) into this signature.
  void note_branch(std::uint64_t value);
  std::uint64_t branch_signature() const { return branch_hash_; }

  std::size_t size() const { return nodes_.size(); }
  const std::string& op_name(std::size_t index) const { return nodes_.at(index).op; }

 private:
  struct Node {
    std::string op;
    Tensor value;
    Tensor grad;
    bool requires_grad = false;
    const Parameter* param = nullptr;
    BackwardFn backward;
  };

  const Node& node(Var v) const;

  bool recording_;
  std::deque<Node> nodes_;  // stable references: ops may hold value() across record()
  std::uint64_t branch_hash_ = 0xcbf29ce484222325ULL;
};

// p.grad += tape gradient for every p in params.
void accumulate_gradients(const Tape& tape, const std::vector<Parameter*>& params);

}  // namespace ta2n
