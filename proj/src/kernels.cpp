#include "bikeod/kernels.hpp"

#include <cstdint>

#include <fmt/core.h>

#include "bikeod/omp.hpp"

namespace bikeod {

GraphStack::GraphStack(std::vector<Tensor> matrices) : matrices_(std::move(matrices)) {
  if (matrices_.empty()) throw ShapeError("graph stack: no matrices");
  nodes_ = matrices_.front().rows();
  transposed_.reserve(matrices_.size());
  for (const auto& m : matrices_) {
    if (m.rows() != nodes_ || m.cols() != nodes_) {
      throw ShapeError(fmt::format("graph stack: expected {}x{} matrices, got {}", nodes_, nodes_,
                                   shape_string(m)));
    }
    transposed_.push_back(m.transposed());
  }
}

namespace kernels {
namespace {

// Below this many multiply-adds the fork/join cost dominates.
constexpr std::int64_t kParallelWork = 1 << 15;

void check_inner(const char* op, const Tensor& a, std::size_t a_inner, const Tensor& b,
                 std::size_t b_inner) {
  if (a_inner != b_inner) {
    throw ShapeError(fmt::format("{}: incompatible shapes {} and {}", op, shape_string(a),
                                 shape_string(b)));
  }
}

void check_stack(const char* op, const GraphStack& stack, const Tensor& x,
                 std::size_t expected_cols) {
  if (stack.size() == 0 || x.rows() != stack.nodes() || x.cols() != expected_cols) {
    throw ShapeError(fmt::format("{}: input {} does not fit a stack of {} {}x{} matrices", op,
                                 shape_string(x), stack.size(), stack.nodes(), stack.nodes()));
  }
}

}  // namespace

int max_threads() { return omp_get_max_threads(); }

Tensor matmul(const Tensor& a, const Tensor& b) {
  check_inner("matmul", a, a.cols(), b, b.rows());
  const auto m = static_cast<std::int64_t>(a.rows());
  const std::size_t inner = a.cols();
  const std::size_t n = b.cols();
  Tensor c(a.rows(), n);
  const bool par = m * static_cast<std::int64_t>(inner * n) > kParallelWork;
#pragma omp parallel for schedule(static) if (par)
  for (std::int64_t i = 0; i < m; ++i) {
    double* out = c.row(i).data();
    const double* arow = a.row(i).data();
    for (std::size_t k = 0; k < inner; ++k) {
      const double av = arow[k];
      if (av == 0.0) continue;
      const double* brow = b.row(k).data();
      for (std::size_t j = 0; j < n; ++j) out[j] += av * brow[j];
    }
  }
  return c;
}

Tensor matmul_tn(const Tensor& a, const Tensor& b) {
  check_inner("matmul_tn", a, a.rows(), b, b.rows());
  const auto m = static_cast<std::int64_t>(a.cols());
  const std::size_t inner = a.rows();
  const std::size_t n = b.cols();
  Tensor c(a.cols(), n);
  const bool par = m * static_cast<std::int64_t>(inner * n) > kParallelWork;
#pragma omp parallel for schedule(static) if (par)
  for (std::int64_t i = 0; i < m; ++i) {
    double* out = c.row(i).data();
    for (std::size_t k = 0; k < inner; ++k) {
      const double av = a(k, i);
      if (av == 0.0) continue;
      const double* brow = b.row(k).data();
      for (std::size_t j = 0; j < n; ++j) out[j] += av * brow[j];
    }
  }
  return c;
}

Tensor matmul_nt(const Tensor& a, const Tensor& b) {
  check_inner("matmul_nt", a, a.cols(), b, b.cols());
  const auto m = static_cast<std::int64_t>(a.rows());
  const std::size_t inner = a.cols();
  const std::size_t n = b.rows();
  Tensor c(a.rows(), n);
  const bool par = m * static_cast<std::int64_t>(inner * n) > kParallelWork;
#pragma omp parallel for schedule(static) if (par)
  for (std::int64_t i = 0; i < m; ++i) {
    const double* arow = a.row(i).data();
    for (std::size_t j = 0; j < n; ++j) {
      const double* brow = b.row(j).data();
      double s = 0.0;
      for (std::size_t k = 0; k < inner; ++k) s += arow[k] * brow[k];
      c(i, j) = s;
    }
  }
  return c;
}

Tensor graph_propagate(const GraphStack& stack, const Tensor& h) {
  check_stack("graph_propagate", stack, h, h.cols());
  const auto n = static_cast<std::int64_t>(stack.nodes());
  const std::size_t f = h.cols();
  const std::size_t units = stack.size();
  Tensor z(stack.nodes(), units * f);
  const bool par = n * n * static_cast<std::int64_t>(units * f) > kParallelWork;
#pragma omp parallel for schedule(static) if (par)
  for (std::int64_t i = 0; i < n; ++i) {
    double* out = z.row(i).data();
    for (std::size_t u = 0; u < units; ++u) {
      const double* arow = stack[u].row(i).data();
      double* block = out + u * f;
      for (std::int64_t j = 0; j < n; ++j) {
        const double av = arow[j];
        if (av == 0.0) continue;
        const double* hrow = h.row(j).data();
        for (std::size_t c = 0; c < f; ++c) block[c] += av * hrow[c];
      }
    }
  }
  return z;
}

Tensor graph_propagate_adjoint(const GraphStack& stack, const Tensor& dz) {
  const std::size_t units = stack.size();
  if (units == 0 || dz.cols() % units != 0) {
    throw ShapeError(fmt::format("graph_propagate_adjoint: {} columns not divisible by {} graphs",
                                 dz.cols(), units));
  }
  const std::size_t f = dz.cols() / units;
  check_stack("graph_propagate_adjoint", stack, dz, units * f);
  const auto n = static_cast<std::int64_t>(stack.nodes());
  Tensor dh(stack.nodes(), f);
  const bool par = n * n * static_cast<std::int64_t>(units * f) > kParallelWork;
#pragma omp parallel for schedule(static) if (par)
  for (std::int64_t j = 0; j < n; ++j) {
    double* out = dh.row(j).data();
    for (std::size_t u = 0; u < units; ++u) {
      const double* trow = stack.transposed(u).row(j).data();
      for (std::int64_t i = 0; i < n; ++i) {
        const double av = trow[i];
        if (av == 0.0) continue;
        const double* g = dz.row(i).data() + u * f;
        for (std::size_t c = 0; c < f; ++c) out[c] += av * g[c];
      }
    }
  }
  return dh;
}

namespace reference {

Tensor matmul(const Tensor& a, const Tensor& b) {
  check_inner("matmul", a, a.cols(), b, b.rows());
  Tensor c(a.rows(), b.cols());
  for (std::size_t i = 0; i < a.rows(); ++i)
    for (std::size_t j = 0; j < b.cols(); ++j) {
      double s = 0.0;
      for (std::size_t k = 0; k < a.cols(); ++k) s += a(i, k) * b(k, j);
      c(i, j) = s;
    }
  return c;
}

Tensor matmul_tn(const Tensor& a, const Tensor& b) { return matmul(a.transposed(), b); }

Tensor matmul_nt(const Tensor& a, const Tensor& b) { return matmul(a, b.transposed()); }

Tensor graph_propagate(const GraphStack& stack, const Tensor& h) {
  check_stack("graph_propagate", stack, h, h.cols());
  const std::size_t n = stack.nodes();
  const std::size_t f = h.cols();
  Tensor z(n, stack.size() * f);
  for (std::size_t u = 0; u < stack.size(); ++u)
    for (std::size_t i = 0; i < n; ++i)
      for (std::size_t c = 0; c < f; ++c) {
        double s = 0.0;
        for (std::size_t j = 0; j < n; ++j) s += stack[u](i, j) * h(j, c);
        z(i, u * f + c) = s;
      }
  return z;
}

Tensor graph_propagate_adjoint(const GraphStack& stack, const Tensor& dz) {
  const std::size_t units = stack.size();
  const std::size_t n = stack.nodes();
  if (units == 0 || dz.cols() % units != 0 || dz.rows() != n) {
    throw ShapeError("graph_propagate_adjoint: shape mismatch");
  }
  const std::size_t f = dz.cols() / units;
  Tensor dh(n, f);
  for (std::size_t j = 0; j < n; ++j)
    for (std::size_t c = 0; c < f; ++c) {
      double s = 0.0;
      for (std::size_t u = 0; u < units; ++u)
        for (std::size_t i = 0; i < n; ++i) s += stack[u](i, j) * dz(i, u * f + c);
      dh(j, c) = s;
    }
  return dh;
}

}  // namespace reference
}  // namespace kernels
}  // namespace bikeod
