#include "bikeod/optim.hpp"

#include <cmath>
#include <stdexcept>

#include <fmt/core.h>

namespace bikeod {

double Adam::current_lr() const {
  return config_.lr / (1.0 + config_.decay * static_cast<double>(step_));
}

void Adam::step(ad::ParameterSet& params) {
  for (const auto& p : params) {
    if (!p.grad.same_shape(p.value)) {
      throw ShapeError(fmt::format("adam: gradient {} does not match parameter '{}' {}",
                                   shape_string(p.grad), p.name, shape_string(p.value)));
    }
    if (!p.grad.all_finite()) {
      throw ad::NonFiniteError(fmt::format("adam: non-finite gradient for parameter '{}'", p.name));
    }
  }
  if (m_.size() != params.size()) {
    m_.clear();
    v_.clear();
    for (const auto& p : params) {
      m_.emplace_back(p.value.rows(), p.value.cols());
      v_.emplace_back(p.value.rows(), p.value.cols());
    }
  }

  const double lr = current_lr();
  ++step_;
  const double t = static_cast<double>(step_);
  const double c1 = 1.0 - std::pow(config_.beta1, t);
  const double c2 = 1.0 - std::pow(config_.beta2, t);

  for (std::size_t k = 0; k < params.size(); ++k) {
    auto& p = params[k];
    auto m = m_[k].data();
    auto v = v_[k].data();
    auto w = p.value.data();
    auto g = p.grad.data();
    for (std::size_t i = 0; i < w.size(); ++i) {
      m[i] = config_.beta1 * m[i] + (1.0 - config_.beta1) * g[i];
      v[i] = config_.beta2 * v[i] + (1.0 - config_.beta2) * g[i] * g[i];
      const double mhat = m[i] / c1;
      const double vhat = v[i] / c2;
      w[i] -= lr * mhat / (std::sqrt(vhat) + config_.epsilon);
    }
  }
}

Tensor dropout_mask(std::size_t rows, std::size_t cols, double rate, Rng& rng, Mode mode) {
  if (!(rate >= 0.0 && rate < 1.0)) {
    throw std::invalid_argument(fmt::format("dropout rate must be in [0, 1), got {}", rate));
  }
  Tensor m(rows, cols, 1.0);
  if (mode == Mode::Infer || rate == 0.0) return m;
  const double keep = 1.0 / (1.0 - rate);
  for (auto& v : m.data()) v = uniform01(rng) < rate ? 0.0 : keep;
  return m;
}

}  // namespace bikeod
