#pragma once

// Encoder-decoder forecaster over OD pairs:
//   calendar encoding -> embedding module -> E_T (tiled onto X when enabled)
//   X -> K_e RMGC blocks                            (spatial encoder)
//   4 lag snapshots -> GRU / LSTM -> h              (temporal encoder)
//   [spatial ++ tile(h)] -> K_d RMGC blocks -> linear head -> [N]

#include <array>
#include <cstdint>
#include <filesystem>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include "bikeod/autodiff.hpp"
#include "bikeod/features.hpp"
#include "bikeod/kernels.hpp"
#include "bikeod/optim.hpp"

namespace bikeod::model {

enum class Activation { Relu, Tanh };
enum class CellType { Gru, Lstm };

std::string_view activation_name(Activation a);
std::string_view cell_name(CellType c);
/// Throw std::invalid_argument for unknown names.
Activation parse_activation(std::string_view name);
CellType parse_cell(std::string_view name);

struct EmbeddingConfig {
  std::size_t embed_width = 5;
  std::size_t dense_width = 5;
  /// Widths of the first two dense-module layers; the third outputs p.
  std::array<std::size_t, 2> module_widths = {32, 16};
  std::size_t p = 10;
  friend bool operator==(const EmbeddingConfig&, const EmbeddingConfig&) = default;
};

struct ModelConfig {
  std::size_t h_t = 64;
  std::size_t h_s = 64;
  std::size_t k_e = 3;
  std::size_t k_d = 3;
  Activation activation = Activation::Relu;
  CellType cell = CellType::Gru;
  double dropout = 0.7;
  EmbeddingConfig embedding;
  features::FeatureSpec variant = features::feature_spec("X");

  /// Throws std::invalid_argument describing the first bad field.
  void validate() const;
  /// Columns entering the first encoder block.
  std::size_t input_width() const { return variant.width() + (variant.embedding ? embedding.p : 0); }
  friend bool operator==(const ModelConfig&, const ModelConfig&) = default;
};

struct ForecastModel {
  ModelConfig config;
  std::size_t nodes = 0;
  ad::ParameterSet params;
  features::Standardizer scaler;
};

/// Glorot-uniform weights, zero biases; deterministic per seed.
ForecastModel init_params(const ModelConfig& config, std::size_t nodes, std::uint64_t seed);
double glorot_bound(std::size_t fan_in, std::size_t fan_out);

/// Resolves parameter names to tape nodes, once per tape. With `trainable`
/// set, gradients flow into those parameters; otherwise values enter the
/// tape as constants and the model is only read.
class Binder {
 public:
  Binder(ad::Tape& tape, const ad::ParameterSet& values, ad::ParameterSet* trainable = nullptr);
  ad::Var operator()(const std::string& name);
  ad::Tape& tape() { return tape_; }

 private:
  ad::Tape& tape_;
  const ad::ParameterSet& values_;
  ad::ParameterSet* trainable_;
  std::map<std::string, ad::Var> cache_;
};

/// Per-step dropout source; a null rng or Mode::Infer disables dropout.
struct DropoutContext {
  Mode mode = Mode::Infer;
  Rng* rng = nullptr;
  double rate = 0.0;
  ad::Var apply(ad::Var v) const;
};

// --- building blocks on a tape -----------------------------------------------------

ad::Var activate(ad::Var v, Activation a);

/// Each branch: one-hot [1, C_i] x table -> dense + ReLU; concatenated, then
/// the 3-layer dense module (ReLU, ReLU, linear). Parameter prefix "embed".
/// `one_hots` may hold any number of branches (6 for the calendar).
ad::Var embed_time(Binder& bind, const std::vector<Tensor>& one_hots, const DropoutContext& drop);

/// [N, L] ++ tile(E_T [1, p]) -> [N, L + p].
ad::Var tile_and_concat(ad::Var x, std::optional<ad::Var> e_t);

/// act(concat_u(A_u H) W + b) + residual, residual = H or H P.
ad::Var rmgc_forward(Binder& bind, const std::string& prefix, ad::Var h, const GraphStack& stack,
                     Activation activation);

/// Consumes the snapshots (each [1, N]) oldest first; returns [1, h_t].
ad::Var temporal_encode(Binder& bind, const std::vector<ad::Var>& snapshots, CellType cell);

/// Full forward for one timestamp. `x` is the standardized [N, L] feature
/// matrix; returns [N, 1] without clamping.
ad::Var model_forward(Binder& bind, const ForecastModel& model, const Tensor& x,
                      const features::CalendarEncoding& encoding, const GraphStack& stack, const DropoutContext& drop);

// --- tensor-level conveniences -------------------------------------------------------

Tensor tile_and_concat(const Tensor& x, const Tensor& e_t);

/// Stand-alone RMGC block; empty `projection` means identity residual.
struct RMGCBlock {
  Tensor weight;      // [U * f_in, f_out]
  Tensor bias;        // [1, f_out]
  Tensor projection;  // [f_in, f_out] or empty
};
Tensor rmgc_forward(const RMGCBlock& block, const Tensor& h, const GraphStack& stack, Activation activation);

/// E_T [1, p] in inference mode.
Tensor embed_time(const ForecastModel& model, const features::CalendarEncoding& encoding);

/// Inference-mode prediction, clamped at 0; `raw_x` is unstandardized.
/// Safe to call concurrently on a shared model.
Tensor predict(const ForecastModel& model, const Tensor& raw_x, const features::CalendarEncoding& encoding,
               const GraphStack& stack);

// --- checkpoints ----------------------------------------------------------------------

std::string checkpoint_json(const ForecastModel& model);
ForecastModel parse_checkpoint(const std::string& text, const std::string& source = "<memory>");
void save_checkpoint(const std::filesystem::path& path, const ForecastModel& model);
ForecastModel load_checkpoint(const std::filesystem::path& path);

}  // namespace bikeod::model
