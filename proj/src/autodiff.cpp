#include "bikeod/autodiff.hpp"

#include <algorithm>
#include <cmath>

#include <fmt/core.h>

namespace bikeod::ad {

Parameter& ParameterSet::add(std::string name, Tensor init) {
  if (contains(name)) throw std::invalid_argument("duplicate parameter name: " + name);
  Tensor grad(init.rows(), init.cols());
  params_.push_back(Parameter{std::move(name), std::move(init), std::move(grad)});
  return params_.back();
}

Parameter& ParameterSet::at(std::string_view name) {
  for (auto& p : params_)
    if (p.name == name) return p;
  throw std::out_of_range(fmt::format("unknown parameter '{}'", name));
}

const Parameter& ParameterSet::at(std::string_view name) const {
  for (const auto& p : params_)
    if (p.name == name) return p;
  throw std::out_of_range(fmt::format("unknown parameter '{}'", name));
}

bool ParameterSet::contains(std::string_view name) const {
  return std::any_of(params_.begin(), params_.end(),
                     [&](const Parameter& p) { return p.name == name; });
}

void ParameterSet::zero_grad() {
  for (auto& p : params_) {
    if (!p.grad.same_shape(p.value)) p.grad = Tensor(p.value.rows(), p.value.cols());
    p.grad.fill(0.0);
  }
}

std::size_t ParameterSet::scalar_count() const {
  std::size_t n = 0;
  for (const auto& p : params_) n += p.value.size();
  return n;
}

std::string_view op_name(Op op) {
  switch (op) {
    case Op::Constant: return "constant";
    case Op::Parameter: return "parameter";
    case Op::MatMul: return "matmul";
    case Op::Add: return "add";
    case Op::Sub: return "sub";
    case Op::Mul: return "mul";
    case Op::Scale: return "scale";
    case Op::AddBias: return "add_bias";
    case Op::Relu: return "relu";
    case Op::Sigmoid: return "sigmoid";
    case Op::Tanh: return "tanh";
    case Op::Concat: return "concat";
    case Op::Slice: return "slice";
    case Op::Tile: return "tile";
    case Op::Transpose: return "transpose";
    case Op::Mask: return "mask";
    case Op::Mean: return "mean";
    case Op::Sum: return "sum";
    case Op::Square: return "square";
    case Op::GraphPropagate: return "graph_propagate";
  }
  return "unknown";
}

const Tensor& Var::value() const { return tape->value(*this); }

Var Tape::push(Node node) {
  if (!node.value.all_finite()) {
    throw NonFiniteError(fmt::format("{}: non-finite value in {} output", op_name(node.op),
                                     shape_string(node.value)));
  }
  nodes_.push_back(std::move(node));
  return Var{this, nodes_.size() - 1};
}

Var Tape::constant(Tensor value) {
  Node n;
  n.op = Op::Constant;
  n.value = std::move(value);
  return push(std::move(n));
}

Var Tape::parameter(Parameter& p) {
  Node n;
  n.op = Op::Parameter;
  n.value = p.value;
  n.needs_grad = true;
  n.param = &p;
  return push(std::move(n));
}

void Tape::accumulate(std::size_t id, const Tensor& g) {
  Node& n = nodes_[id];
  if (!n.needs_grad) return;
  if (n.grad.empty() && !n.value.empty()) {
    n.grad = g;
  } else {
    n.grad += g;
  }
}

void Tape::backward(Var loss) {
  if (loss.tape != this) throw std::invalid_argument("backward: loss lives on another tape");
  const Tensor& lv = nodes_[loss.id].value;
  if (lv.rows() != 1 || lv.cols() != 1) {
    throw ShapeError(fmt::format("backward: loss must be 1x1, got {}", shape_string(lv)));
  }
  for (auto& n : nodes_) n.grad = Tensor();
  nodes_[loss.id].grad = Tensor(1, 1, 1.0);
  for (std::size_t id = loss.id + 1; id-- > 0;) {
    Node& n = nodes_[id];
    if (!n.needs_grad || n.grad.empty()) continue;
    propagate(n);
  }
}

namespace {

Tensor hadamard(const Tensor& a, const Tensor& b) {
  Tensor out(a.rows(), a.cols());
  for (std::size_t i = 0; i < a.size(); ++i) out.data()[i] = a.data()[i] * b.data()[i];
  return out;
}

Tensor column_sums(const Tensor& g) {
  Tensor out(1, g.cols());
  for (std::size_t r = 0; r < g.rows(); ++r)
    for (std::size_t c = 0; c < g.cols(); ++c) out(0, c) += g(r, c);
  return out;
}

}  // namespace

void Tape::propagate(Node& n) {
  const Tensor& g = n.grad;
  switch (n.op) {
    case Op::Constant:
      break;
    case Op::Parameter:
      n.param->grad += g;
      break;
    case Op::MatMul:
      if (nodes_[n.in0].needs_grad) accumulate(n.in0, kernels::matmul_nt(g, nodes_[n.in1].value));
      if (nodes_[n.in1].needs_grad) accumulate(n.in1, kernels::matmul_tn(nodes_[n.in0].value, g));
      break;
    case Op::Add:
      accumulate(n.in0, g);
      accumulate(n.in1, g);
      break;
    case Op::Sub: {
      accumulate(n.in0, g);
      if (nodes_[n.in1].needs_grad) {
        Tensor neg = g;
        for (auto& v : neg.data()) v = -v;
        accumulate(n.in1, neg);
      }
      break;
    }
    case Op::Mul:
      if (nodes_[n.in0].needs_grad) accumulate(n.in0, hadamard(g, nodes_[n.in1].value));
      if (nodes_[n.in1].needs_grad) accumulate(n.in1, hadamard(g, nodes_[n.in0].value));
      break;
    case Op::Scale: {
      Tensor d = g;
      for (auto& v : d.data()) v *= n.scalar;
      accumulate(n.in0, d);
      break;
    }
    case Op::AddBias:
      accumulate(n.in0, g);
      if (nodes_[n.in1].needs_grad) accumulate(n.in1, column_sums(g));
      break;
    case Op::Relu: {
      const Tensor& x = nodes_[n.in0].value;
      Tensor d(g.rows(), g.cols());
      for (std::size_t i = 0; i < d.size(); ++i) d.data()[i] = x.data()[i] > 0.0 ? g.data()[i] : 0.0;
      accumulate(n.in0, d);
      break;
    }
    case Op::Sigmoid: {
      Tensor d(g.rows(), g.cols());
      for (std::size_t i = 0; i < d.size(); ++i) {
        const double y = n.value.data()[i];
        d.data()[i] = g.data()[i] * y * (1.0 - y);
      }
      accumulate(n.in0, d);
      break;
    }
    case Op::Tanh: {
      Tensor d(g.rows(), g.cols());
      for (std::size_t i = 0; i < d.size(); ++i) {
        const double y = n.value.data()[i];
        d.data()[i] = g.data()[i] * (1.0 - y * y);
      }
      accumulate(n.in0, d);
      break;
    }
    case Op::Concat: {
      std::size_t offset = 0;
      for (std::size_t in : n.inputs) {
        const std::size_t w = nodes_[in].value.cols();
        if (nodes_[in].needs_grad) {
          Tensor d(g.rows(), w);
          for (std::size_t r = 0; r < g.rows(); ++r)
            std::copy_n(g.row(r).begin() + offset, w, d.row(r).begin());
          accumulate(in, d);
        }
        offset += w;
      }
      break;
    }
    case Op::Slice: {
      const Tensor& x = nodes_[n.in0].value;
      Tensor d(x.rows(), x.cols());
      for (std::size_t r = 0; r < g.rows(); ++r)
        std::copy(g.row(r).begin(), g.row(r).end(), d.row(r).begin() + n.a);
      accumulate(n.in0, d);
      break;
    }
    case Op::Tile:
      accumulate(n.in0, column_sums(g));
      break;
    case Op::Transpose:
      accumulate(n.in0, g.transposed());
      break;
    case Op::Mask:
      accumulate(n.in0, hadamard(g, n.aux));
      break;
    case Op::Mean: {
      const Tensor& x = nodes_[n.in0].value;
      accumulate(n.in0, Tensor(x.rows(), x.cols(), g(0, 0) / static_cast<double>(x.size())));
      break;
    }
    case Op::Sum: {
      const Tensor& x = nodes_[n.in0].value;
      accumulate(n.in0, Tensor(x.rows(), x.cols(), g(0, 0)));
      break;
    }
    case Op::Square: {
      const Tensor& x = nodes_[n.in0].value;
      Tensor d(x.rows(), x.cols());
      for (std::size_t i = 0; i < d.size(); ++i) d.data()[i] = 2.0 * x.data()[i] * g.data()[i];
      accumulate(n.in0, d);
      break;
    }
    case Op::GraphPropagate:
      accumulate(n.in0, kernels::graph_propagate_adjoint(*n.stack, g));
      break;
  }
}

namespace {

Tape& same_tape(Var a, Var b, std::string_view op) {
  if (a.tape == nullptr || a.tape != b.tape) {
    throw std::invalid_argument(fmt::format("{}: operands live on different tapes", op));
  }
  return *a.tape;
}

void require_same_shape(std::string_view op, const Tensor& a, const Tensor& b) {
  if (!a.same_shape(b)) {
    throw ShapeError(fmt::format("{}: shape mismatch {} vs {}", op, shape_string(a), shape_string(b)));
  }
}

}  // namespace

// Node fields are filled through these helpers so every op sets needs_grad
// from its inputs.
#define BIKEOD_UNARY_NODE(opcode, x)                       \
  Tape::Node n;                                            \
  n.op = opcode;                                           \
  n.in0 = (x).id;                                          \
  n.needs_grad = (x).tape->nodes_[(x).id].needs_grad

#define BIKEOD_BINARY_NODE(opcode, x, y)                                  \
  Tape::Node n;                                                           \
  n.op = opcode;                                                          \
  n.in0 = (x).id;                                                         \
  n.in1 = (y).id;                                                         \
  n.needs_grad = (x).tape->nodes_[(x).id].needs_grad || (y).tape->nodes_[(y).id].needs_grad

Var matmul(Var a, Var b) {
  Tape& t = same_tape(a, b, "matmul");
  BIKEOD_BINARY_NODE(Op::MatMul, a, b);
  n.value = kernels::matmul(a.value(), b.value());
  return t.push(std::move(n));
}

Var add(Var a, Var b) {
  Tape& t = same_tape(a, b, "add");
  require_same_shape("add", a.value(), b.value());
  BIKEOD_BINARY_NODE(Op::Add, a, b);
  n.value = a.value();
  n.value += b.value();
  return t.push(std::move(n));
}

Var sub(Var a, Var b) {
  Tape& t = same_tape(a, b, "sub");
  require_same_shape("sub", a.value(), b.value());
  BIKEOD_BINARY_NODE(Op::Sub, a, b);
  n.value = a.value();
  for (std::size_t i = 0; i < n.value.size(); ++i) n.value.data()[i] -= b.value().data()[i];
  return t.push(std::move(n));
}

Var mul(Var a, Var b) {
  Tape& t = same_tape(a, b, "mul");
  require_same_shape("mul", a.value(), b.value());
  BIKEOD_BINARY_NODE(Op::Mul, a, b);
  n.value = hadamard(a.value(), b.value());
  return t.push(std::move(n));
}

Var scale(Var a, double s) {
  BIKEOD_UNARY_NODE(Op::Scale, a);
  n.scalar = s;
  n.value = a.value();
  for (auto& v : n.value.data()) v *= s;
  return a.tape->push(std::move(n));
}

Var add_bias(Var a, Var bias) {
  Tape& t = same_tape(a, bias, "add_bias");
  const Tensor& x = a.value();
  const Tensor& b = bias.value();
  if (b.rows() != 1 || b.cols() != x.cols()) {
    throw ShapeError(fmt::format("add_bias: bias {} does not broadcast over {}", shape_string(b),
                                 shape_string(x)));
  }
  BIKEOD_BINARY_NODE(Op::AddBias, a, bias);
  n.value = x;
  for (std::size_t r = 0; r < x.rows(); ++r)
    for (std::size_t c = 0; c < x.cols(); ++c) n.value(r, c) += b(0, c);
  return t.push(std::move(n));
}

Var relu(Var a) {
  BIKEOD_UNARY_NODE(Op::Relu, a);
  n.value = a.value();
  for (auto& v : n.value.data()) v = v > 0.0 ? v : 0.0;
  return a.tape->push(std::move(n));
}

Var sigmoid(Var a) {
  BIKEOD_UNARY_NODE(Op::Sigmoid, a);
  n.value = a.value();
  for (auto& v : n.value.data()) v = 1.0 / (1.0 + std::exp(-v));
  return a.tape->push(std::move(n));
}

Var tanh(Var a) {
  BIKEOD_UNARY_NODE(Op::Tanh, a);
  n.value = a.value();
  for (auto& v : n.value.data()) v = std::tanh(v);
  return a.tape->push(std::move(n));
}

Var concat_cols(const std::vector<Var>& parts) {
  if (parts.empty()) throw ShapeError("concat: no inputs");
  Tape& t = *parts.front().tape;
  const std::size_t rows = parts.front().rows();
  std::size_t cols = 0;
  Tape::Node n;
  n.op = Op::Concat;
  for (const Var& p : parts) {
    if (p.tape != &t) throw std::invalid_argument("concat: operands live on different tapes");
    if (p.rows() != rows) {
      throw ShapeError(fmt::format("concat: row mismatch {} vs {} rows", shape_string(p.value()),
                                   rows));
    }
    cols += p.cols();
    n.inputs.push_back(p.id);
    n.needs_grad = n.needs_grad || t.nodes_[p.id].needs_grad;
  }
  n.value = Tensor(rows, cols);
  std::size_t offset = 0;
  for (const Var& p : parts) {
    const Tensor& v = p.value();
    for (std::size_t r = 0; r < rows; ++r)
      std::copy(v.row(r).begin(), v.row(r).end(), n.value.row(r).begin() + offset);
    offset += v.cols();
  }
  return t.push(std::move(n));
}

Var slice_cols(Var a, std::size_t begin, std::size_t end) {
  const Tensor& x = a.value();
  if (begin > end || end > x.cols()) {
    throw ShapeError(fmt::format("slice: columns [{}, {}) out of range for {}", begin, end,
                                 shape_string(x)));
  }
  BIKEOD_UNARY_NODE(Op::Slice, a);
  n.a = begin;
  n.b = end;
  n.value = Tensor(x.rows(), end - begin);
  for (std::size_t r = 0; r < x.rows(); ++r)
    std::copy(x.row(r).begin() + begin, x.row(r).begin() + end, n.value.row(r).begin());
  return a.tape->push(std::move(n));
}

Var tile_rows(Var a, std::size_t count) {
  const Tensor& x = a.value();
  if (x.rows() != 1) {
    throw ShapeError(fmt::format("tile: expected a row vector, got {}", shape_string(x)));
  }
  BIKEOD_UNARY_NODE(Op::Tile, a);
  n.value = Tensor(count, x.cols());
  for (std::size_t r = 0; r < count; ++r) std::copy(x.row(0).begin(), x.row(0).end(), n.value.row(r).begin());
  return a.tape->push(std::move(n));
}

Var transpose(Var a) {
  BIKEOD_UNARY_NODE(Op::Transpose, a);
  n.value = a.value().transposed();
  return a.tape->push(std::move(n));
}

Var mask(Var a, Tensor m) {
  require_same_shape("mask", a.value(), m);
  BIKEOD_UNARY_NODE(Op::Mask, a);
  n.value = hadamard(a.value(), m);
  n.aux = std::move(m);
  return a.tape->push(std::move(n));
}

Var mean(Var a) {
  const Tensor& x = a.value();
  if (x.empty()) throw ShapeError("mean: empty input");
  BIKEOD_UNARY_NODE(Op::Mean, a);
  double s = 0.0;
  for (double v : x.data()) s += v;
  n.value = Tensor(1, 1, s / static_cast<double>(x.size()));
  return a.tape->push(std::move(n));
}

Var sum(Var a) {
  BIKEOD_UNARY_NODE(Op::Sum, a);
  double s = 0.0;
  for (double v : a.value().data()) s += v;
  n.value = Tensor(1, 1, s);
  return a.tape->push(std::move(n));
}

Var square(Var a) {
  BIKEOD_UNARY_NODE(Op::Square, a);
  n.value = a.value();
  for (auto& v : n.value.data()) v *= v;
  return a.tape->push(std::move(n));
}

Var graph_propagate(const GraphStack& stack, Var a) {
  BIKEOD_UNARY_NODE(Op::GraphPropagate, a);
  n.stack = &stack;
  n.value = kernels::graph_propagate(stack, a.value());
  return a.tape->push(std::move(n));
}

#undef BIKEOD_UNARY_NODE
#undef BIKEOD_BINARY_NODE

Var mse_loss(Var pred, Var target) { return mean(square(sub(pred, target))); }

}  // namespace bikeod::ad
