#pragma once

// Reverse-mode differentiation over dense matrices.
//
// A Tape records every primitive in creation order, which is already a
// topological order; backward() walks it once in reverse. Values are
// immutable once recorded. A Tape is single-threaded; build one per step.

#include <cstddef>
#include <deque>
#include <stdexcept>
#include <string>
#include <string_view>
#include <vector>

#include "bikeod/kernels.hpp"
#include "bikeod/tensor.hpp"

namespace bikeod::ad {

class NonFiniteError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

struct Parameter {
  std::string name;
  Tensor value;
  Tensor grad;
};

/// Named learnable tensors in insertion order. Element addresses are stable.
class ParameterSet {
 public:
  Parameter& add(std::string name, Tensor init);
  Parameter& at(std::string_view name);
  const Parameter& at(std::string_view name) const;
  bool contains(std::string_view name) const;

  void zero_grad();
  std::size_t size() const { return params_.size(); }
  std::size_t scalar_count() const;

  auto begin() { return params_.begin(); }
  auto end() { return params_.end(); }
  auto begin() const { return params_.begin(); }
  auto end() const { return params_.end(); }
  Parameter& operator[](std::size_t i) { return params_[i]; }
  const Parameter& operator[](std::size_t i) const { return params_[i]; }

 private:
  std::deque<Parameter> params_;
};

enum class Op {
  Constant,
  Parameter,
  MatMul,
  Add,
  Sub,
  Mul,
  Scale,
  AddBias,
  Relu,
  Sigmoid,
  Tanh,
  Concat,
  Slice,
  Tile,
  Transpose,
  Mask,
  Mean,
  Sum,
  Square,
  GraphPropagate,
};

std::string_view op_name(Op op);

class Tape;

/// Handle to a node on a tape.
struct Var {
  Tape* tape = nullptr;
  std::size_t id = 0;

  const Tensor& value() const;
  std::size_t rows() const { return value().rows(); }
  std::size_t cols() const { return value().cols(); }
};

class Tape {
 public:
  Var constant(Tensor value);
  Var parameter(Parameter& p);

  /// Accumulates d(loss)/d(param) into every reachable Parameter::grad.
  /// Parameters not reachable from `loss` are left untouched, so callers
  /// zero gradients before the step.
  void backward(Var loss);

  const Tensor& value(Var v) const { return nodes_[v.id].value; }
  /// Gradient of the last backward() with respect to `v`; empty if none.
  const Tensor& grad(Var v) const { return nodes_[v.id].grad; }
  Op op(Var v) const { return nodes_[v.id].op; }
  std::size_t size() const { return nodes_.size(); }

 private:
  struct Node {
    Op op = Op::Constant;
    Tensor value;
    Tensor grad;
    std::size_t in0 = 0;
    std::size_t in1 = 0;
    std::vector<std::size_t> inputs;  // variadic ops (concat)
    bool needs_grad = false;
    Parameter* param = nullptr;
    std::size_t a = 0;
    std::size_t b = 0;
    double scalar = 0.0;
    Tensor aux;
    const GraphStack* stack = nullptr;
  };

  Var push(Node node);
  void accumulate(std::size_t id, const Tensor& g);
  void propagate(Node& node);

  friend Var matmul(Var, Var);
  friend Var add(Var, Var);
  friend Var sub(Var, Var);
  friend Var mul(Var, Var);
  friend Var scale(Var, double);
  friend Var add_bias(Var, Var);
  friend Var relu(Var);
  friend Var sigmoid(Var);
  friend Var tanh(Var);
  friend Var concat_cols(const std::vector<Var>&);
  friend Var slice_cols(Var, std::size_t, std::size_t);
  friend Var tile_rows(Var, std::size_t);
  friend Var transpose(Var);
  friend Var mask(Var, Tensor);
  friend Var mean(Var);
  friend Var sum(Var);
  friend Var square(Var);
  friend Var graph_propagate(const GraphStack&, Var);

  std::vector<Node> nodes_;
};

Var matmul(Var a, Var b);
Var add(Var a, Var b);
Var sub(Var a, Var b);
/// Elementwise product.
Var mul(Var a, Var b);
Var scale(Var a, double s);
/// a [n, k] + bias [1, k] broadcast over rows.
Var add_bias(Var a, Var bias);
Var relu(Var a);
Var sigmoid(Var a);
Var tanh(Var a);
/// Concatenate along columns; all parts share a row count.
Var concat_cols(const std::vector<Var>& parts);
/// Columns [begin, end).
Var slice_cols(Var a, std::size_t begin, std::size_t end);
/// Repeat a [1, k] row vector n times -> [n, k].
Var tile_rows(Var a, std::size_t n);
Var transpose(Var a);
/// Elementwise product with a constant mask (dropout).
Var mask(Var a, Tensor m);
/// Mean of all entries -> [1, 1].
Var mean(Var a);
/// Sum of all entries -> [1, 1].
Var sum(Var a);
Var square(Var a);
/// [A_1 a, ..., A_U a] for a constant adjacency stack.
Var graph_propagate(const GraphStack& stack, Var a);

/// mean((pred - target)^2)
Var mse_loss(Var pred, Var target);

}  // namespace bikeod::ad
