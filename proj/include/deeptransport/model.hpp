#pragma once

#include <cstdint>
#include <span>
#include <vector>

#include "deeptransport/dataset.hpp"
#include "deeptransport/graph.hpp"
#include "deeptransport/tape.hpp"
#include "json.hpp"

namespace deeptransport {

struct ModelConfig {
  std::size_t history = 12;      // p
  std::size_t radius = 5;        // r
  std::size_t slot_width = 8;    // l, rows per order slot
  std::size_t embed_dim = 32;
  std::size_t feature_maps = 4;  // m
  std::size_t hidden = 32;       // d, LSTM and target representation size
  std::size_t attention_hidden = 32;
  std::vector<std::size_t> horizons{3, 6, 9, 12};
  /// Multiplier on the symmetric fan-based init bound sqrt(6 / (in + out)).
  double init_scale = 1.0;

  void validate() const;
  std::size_t codes_per_cell() const { return history + 1; }
  /// Length of one embedded vertex observation: p + 1 condition embeddings
  /// plus the limit-level embedding. Also the convolution window.
  std::size_t cell_length() const { return (history + 2) * embed_dim; }
  SampleConfig sample_config() const;

  friend bool operator==(const ModelConfig&, const ModelConfig&) = default;
};

void to_json(nlohmann::json& j, const ModelConfig& c);
void from_json(const nlohmann::json& j, ModelConfig& c);

/// Indices of the named tensors inside ModelParams::params.
struct SideLayout {
  std::size_t conv_w = 0, conv_b = 0, lstm_w = 0, lstm_b = 0;
  std::vector<std::size_t> att_w1, att_b1, att_w2;  // one scorer per horizon
};

struct ParamLayout {
  std::size_t embed_code = 0, embed_limit = 0, target_w = 0, target_b = 0;
  SideLayout up, down;
  std::vector<std::size_t> head_w, head_b;

  const SideLayout& side(Direction d) const { return d == Direction::upstream ? up : down; }
  static ParamLayout resolve(const ParamSet& params, const ModelConfig& config);
};

/// Every learnable tensor of the network. Conv and LSTM weights are
/// separate for the two sides; embeddings and the target encoder are shared;
/// attention scorers and output heads exist once per horizon.
struct ModelParams {
  ModelConfig config;
  ParamSet params;
  ParamLayout layout;

  static ModelParams initialize(const ModelConfig& config, std::uint64_t seed);
  /// Rebuilds the layout after `params` was loaded from a checkpoint.
  static ModelParams from_params(const ModelConfig& config, ParamSet params);
};

/// Result of one forward pass; attention and slot vectors are indexed by
/// horizon, then order (0 = first order).
struct ForwardOutput {
  std::vector<double> predictions;
  std::vector<std::vector<double>> attention_up;
  std::vector<std::vector<double>> attention_down;
  std::vector<std::vector<double>> slots_up;    // r × d
  std::vector<std::vector<double>> slots_down;  // r × d
};

/// Tape handles of a recorded forward pass.
struct ForwardTrace {
  Var predictions;  // [H]
  Var target;       // g, [1, d]
  std::vector<Var> attention_up, attention_down;  // per horizon, [r]
  std::vector<Var> slots_up, slots_down;          // per order, [1, d]
};

struct Attended {
  Var z;      // [1, d]
  Var alpha;  // [r]
};

/// Embeds `cells` observations: codes are cells × (p + 1), limits 1..4.
/// Output is [cells, cell_length].
Var embed_cells(Tape& tape, const ModelParams& model, std::span<const Code> codes, std::span<const std::uint8_t> limits);
Tensor embed_cell(const ModelParams& model, std::span<const Code> codes, std::uint8_t limit);

/// Slot matrix X = [X^1 .. X^r] of one side, [l, r · cell_length].
Var side_input(Tape& tape, const ModelParams& model, const PathBlock& block);

/// tanh(conv) per order: returns e^1..e^r, each [l, m].
std::vector<Var> conv_side(Tape& tape, const ModelParams& model, Direction side, Var slot_matrix);

/// Runs the side's LSTM along the order axis (downstream 1 -> r, upstream
/// r -> 1) from zero state; returns h^1..h^r (indexed by order), each [l, d].
std::vector<Var> lstm_side(Tape& tape, const ModelParams& model, Direction side, const std::vector<Var>& inputs);

/// Masked max-pool of each h^j over its valid rows: s^1..s^r, each [1, d].
std::vector<Var> pool_slots(Tape& tape, const std::vector<Var>& hidden, const Mask& row_mask);

/// Softmax attention of the horizon's scorer over the slot embeddings.
Attended attend(Tape& tape, const ModelParams& model, Direction side, std::size_t horizon_index,
                const std::vector<Var>& slots, Var target);

/// pool_slots + attend. Throws DataError if every row is masked.
Attended pool_and_attend(Tape& tape, const ModelParams& model, Direction side, std::size_t horizon_index,
                         const std::vector<Var>& hidden, const Mask& row_mask, Var target);

/// g = tanh(W · embed(target cell) + b), [1, d].
Var target_encode(Tape& tape, const ModelParams& model, std::span<const Code> codes, std::uint8_t limit);

/// Records the full network on `tape`. A side without any valid path
/// contributes zero slot embeddings and uniform attention.
ForwardTrace forward(Tape& tape, const ModelParams& model, const Sample& sample);
ForwardOutput forward(const ModelParams& model, const Sample& sample);

/// Σ over horizons of masked squared error between prediction and code.
Var loss(Tape& tape, Var predictions, std::span<const int> labels, const Mask& label_mask);
double loss(const ForwardOutput& out, std::span<const int> labels, const Mask& label_mask);

}  // namespace deeptransport
