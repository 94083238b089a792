#pragma once

// Dense kernels behind the autodiff primitives.
//
// Every kernel in `bikeod::kernels` has a straightforward counterpart in
// `bikeod::kernels::reference` that the tests compare against. The OpenMP
// versions split work by output row only, so each output entry is summed in
// the same order regardless of thread count and results are bit-identical
// across OMP_NUM_THREADS settings.

#include <span>
#include <vector>

#include "bikeod/tensor.hpp"

namespace bikeod {

/// A fixed set of square N x N propagation matrices (the normalized
/// adjacency stack) together with their transposes for the backward pass.
class GraphStack {
 public:
  GraphStack() = default;
  explicit GraphStack(std::vector<Tensor> matrices);

  std::size_t size() const { return matrices_.size(); }
  std::size_t nodes() const { return nodes_; }
  const Tensor& operator[](std::size_t u) const { return matrices_[u]; }
  const Tensor& transposed(std::size_t u) const { return transposed_[u]; }
  const std::vector<Tensor>& matrices() const { return matrices_; }

 private:
  std::size_t nodes_ = 0;
  std::vector<Tensor> matrices_;
  std::vector<Tensor> transposed_;
};

namespace kernels {

/// C = A * B
Tensor matmul(const Tensor& a, const Tensor& b);
/// C = A^T * B
Tensor matmul_tn(const Tensor& a, const Tensor& b);
/// C = A * B^T
Tensor matmul_nt(const Tensor& a, const Tensor& b);

/// Z = [A_1 H, A_2 H, ..., A_U H], shape [N, U * f].
Tensor graph_propagate(const GraphStack& stack, const Tensor& h);
/// Adjoint of graph_propagate: dH = sum_u A_u^T dZ_u.
Tensor graph_propagate_adjoint(const GraphStack& stack, const Tensor& dz);

/// Threads used by the kernels (1 when built without OpenMP).
int max_threads();

namespace reference {

Tensor matmul(const Tensor& a, const Tensor& b);
Tensor matmul_tn(const Tensor& a, const Tensor& b);
Tensor matmul_nt(const Tensor& a, const Tensor& b);
Tensor graph_propagate(const GraphStack& stack, const Tensor& h);
Tensor graph_propagate_adjoint(const GraphStack& stack, const Tensor& dz);

}  // namespace reference
}  // namespace kernels
}  // namespace bikeod
