#pragma once

#include <cstdint>
#include <random>
#include <vector>

#include "bikeod/autodiff.hpp"
#include "bikeod/tensor.hpp"

namespace bikeod {

using Rng = std::mt19937_64;

/// Uniform double in [0, 1) from the top 53 bits of one engine draw.
inline double uniform01(Rng& rng) { return static_cast<double>(rng() >> 11) * 0x1.0p-53; }

struct AdamConfig {
  double lr = 5e-5;
  // lr_t = lr / (1 + decay * step), step counted before the update.
  double decay = 1e-6;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double epsilon = 1e-8;
};

class Adam {
 public:
  explicit Adam(AdamConfig config = {}) : config_(config) {}

  /// Applies one bias-corrected update using Parameter::grad. Throws
  /// ad::NonFiniteError naming the parameter if any gradient entry is not
  /// finite; nothing is modified in that case.
  void step(ad::ParameterSet& params);

  std::uint64_t steps() const { return step_; }
  double current_lr() const;
  const AdamConfig& config() const { return config_; }

 private:
  AdamConfig config_;
  std::uint64_t step_ = 0;
  std::vector<Tensor> m_;
  std::vector<Tensor> v_;
};

enum class Mode { Train, Infer };

/// Inverted-dropout mask: each entry is 0 with probability `rate`, otherwise
/// 1 / (1 - rate). In inference mode the mask is all ones.
Tensor dropout_mask(std::size_t rows, std::size_t cols, double rate, Rng& rng,
                    Mode mode = Mode::Train);

}  // namespace bikeod
