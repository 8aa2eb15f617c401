#include "deeptransport/model.hpp"

#include <algorithm>

#include "deeptransport/errors.hpp"
#include "deeptransport/optim.hpp"

namespace deeptransport {

void ModelConfig::validate() const {
  for (std::size_t v : {radius, slot_width, embed_dim, feature_maps, hidden, attention_hidden})
    if (v == 0) throw ConfigError("model dimensions must be positive");
  if (horizons.empty()) throw ConfigError("model needs at least one horizon");
  for (std::size_t i = 0; i < horizons.size(); ++i) {
    if (horizons[i] == 0) throw ConfigError("horizons must be positive");
    if (i > 0 && horizons[i] <= horizons[i - 1]) throw ConfigError("horizons must be strictly increasing");
  }
  if (!(init_scale > 0.0)) throw ConfigError("init_scale must be positive");
}

SampleConfig ModelConfig::sample_config() const {
  SampleConfig s;
  s.history = history;
  s.radius = radius;
  s.max_paths = slot_width;
  s.horizons = horizons;
  return s;
}

void to_json(nlohmann::json& j, const ModelConfig& c) {
  j = nlohmann::json{{"history", c.history},
                     {"radius", c.radius},
                     {"slot_width", c.slot_width},
                     {"embed_dim", c.embed_dim},
                     {"feature_maps", c.feature_maps},
                     {"hidden", c.hidden},
                     {"attention_hidden", c.attention_hidden},
                     {"horizons", c.horizons},
                     {"init_scale", c.init_scale}};
}

void from_json(const nlohmann::json& j, ModelConfig& c) {
  ModelConfig d;
  c.history = j.value("history", d.history);
  c.radius = j.value("radius", d.radius);
  c.slot_width = j.value("slot_width", d.slot_width);
  c.embed_dim = j.value("embed_dim", d.embed_dim);
  c.feature_maps = j.value("feature_maps", d.feature_maps);
  c.hidden = j.value("hidden", d.hidden);
  c.attention_hidden = j.value("attention_hidden", d.attention_hidden);
  c.horizons = j.value("horizons", d.horizons);
  c.init_scale = j.value("init_scale", d.init_scale);
}

// ------------------------------------------------------------- parameters

namespace {

std::string side_prefix(Direction d) { return d == Direction::upstream ? "up." : "down."; }

}  // namespace

ParamLayout ParamLayout::resolve(const ParamSet& p, const ModelConfig& c) {
  ParamLayout l;
  l.embed_code = p.index("embed.condition");
  l.embed_limit = p.index("embed.limit");
  l.target_w = p.index("target.w");
  l.target_b = p.index("target.b");
  for (Direction d : {Direction::upstream, Direction::downstream}) {
    SideLayout& s = d == Direction::upstream ? l.up : l.down;
    const std::string pre = side_prefix(d);
    s.conv_w = p.index(pre + "conv.w");
    s.conv_b = p.index(pre + "conv.b");
    s.lstm_w = p.index(pre + "lstm.w");
    s.lstm_b = p.index(pre + "lstm.b");
    for (std::size_t k = 0; k < c.horizons.size(); ++k) {
      const std::string att = pre + "attention.h" + std::to_string(c.horizons[k]) + ".";
      s.att_w1.push_back(p.index(att + "w1"));
      s.att_b1.push_back(p.index(att + "b1"));
      s.att_w2.push_back(p.index(att + "w2"));
    }
  }
  for (std::size_t h : c.horizons) {
    l.head_w.push_back(p.index("head.h" + std::to_string(h) + ".w"));
    l.head_b.push_back(p.index("head.h" + std::to_string(h) + ".b"));
  }
  // Shapes are a function of the config alone.
  auto expect = [&](std::size_t i, Shape s) {
    if (p.value(i).shape() != s)
      throw ConfigError("parameter " + p.name(i) + " has shape " + shape_string(p.value(i).shape()) + ", expected " +
                        shape_string(s));
  };
  const std::size_t e = c.embed_dim, m = c.feature_maps, d = c.hidden, a = c.attention_hidden;
  expect(l.embed_code, {kCodeCount, e});
  expect(l.embed_limit, {4, e});
  expect(l.target_w, {d, c.cell_length()});
  expect(l.target_b, {d});
  for (const SideLayout* s : {&l.up, &l.down}) {
    expect(s->conv_w, {m, c.cell_length()});
    expect(s->conv_b, {m});
    expect(s->lstm_w, {4 * d, m + d});
    expect(s->lstm_b, {4 * d});
    for (std::size_t k = 0; k < c.horizons.size(); ++k) {
      expect(s->att_w1[k], {a, 2 * d});
      expect(s->att_b1[k], {a});
      expect(s->att_w2[k], {1, a});
    }
  }
  for (std::size_t k = 0; k < c.horizons.size(); ++k) {
    expect(l.head_w[k], {1, 3 * d});
    expect(l.head_b[k], {1});
  }
  if (p.size() != 4 + 2 * (4 + 3 * c.horizons.size()) + 2 * c.horizons.size())
    throw ConfigError("checkpoint carries parameters the model does not use");
  return l;
}

ModelParams ModelParams::initialize(const ModelConfig& config, std::uint64_t seed) {
  config.validate();
  ModelParams mp;
  mp.config = config;
  ParamSet& p = mp.params;
  auto weight = [&](const std::string& name, std::size_t rows, std::size_t cols) {
    const double bound = config.init_scale * fan_bound(cols, rows);
    p.add(name, init_params({rows, cols}, {-bound, bound}, derive_seed(seed, hash_string(name))));
  };
  auto bias = [&](const std::string& name, std::size_t n) { p.add(name, Tensor({n})); };

  const std::size_t e = config.embed_dim, m = config.feature_maps, d = config.hidden, a = config.attention_hidden;
  const std::size_t cell = config.cell_length();
  weight("embed.condition", kCodeCount, e);
  weight("embed.limit", 4, e);
  weight("target.w", d, cell);
  bias("target.b", d);
  for (Direction dir : {Direction::upstream, Direction::downstream}) {
    const std::string pre = side_prefix(dir);
    weight(pre + "conv.w", m, cell);
    bias(pre + "conv.b", m);
    weight(pre + "lstm.w", 4 * d, m + d);
    bias(pre + "lstm.b", 4 * d);
    for (std::size_t h : config.horizons) {
      const std::string att = pre + "attention.h" + std::to_string(h) + ".";
      weight(att + "w1", a, 2 * d);
      bias(att + "b1", a);
      weight(att + "w2", 1, a);
    }
  }
  for (std::size_t h : config.horizons) {
    weight("head.h" + std::to_string(h) + ".w", 1, 3 * d);
    bias("head.h" + std::to_string(h) + ".b", 1);
  }
  mp.layout = ParamLayout::resolve(p, config);
  return mp;
}

ModelParams ModelParams::from_params(const ModelConfig& config, ParamSet params) {
  config.validate();
  ModelParams mp;
  mp.config = config;
  mp.params = std::move(params);
  mp.layout = ParamLayout::resolve(mp.params, config);
  return mp;
}

// ---------------------------------------------------------------- network

Var embed_cells(Tape& tape, const ModelParams& model, std::span<const Code> codes, std::span<const std::uint8_t> limits) {
  const std::size_t per = model.config.codes_per_cell();
  const std::size_t cells = limits.size();
  if (codes.size() != cells * per) throw ShapeError("embed_cells: code count does not match cell count");
  std::vector<std::size_t> code_idx(codes.size());
  for (std::size_t i = 0; i < codes.size(); ++i) {
    if (codes[i] >= kCodeCount) throw DataError("condition code outside 0..4");
    code_idx[i] = codes[i];
  }
  std::vector<std::size_t> limit_idx(cells);
  for (std::size_t i = 0; i < cells; ++i) {
    if (limits[i] < 1 || limits[i] > 4) throw DataError("limit level outside 1..4");
    limit_idx[i] = limits[i] - 1u;
  }
  const std::size_t e = model.config.embed_dim;
  Var code_rows = tape.gather_rows(tape.param(model.params, model.layout.embed_code), std::move(code_idx));
  Var code_part = tape.reshape(code_rows, {cells, per * e});
  Var limit_part = tape.gather_rows(tape.param(model.params, model.layout.embed_limit), std::move(limit_idx));
  const Var parts[] = {code_part, limit_part};
  return tape.concat(parts, 1);
}

Tensor embed_cell(const ModelParams& model, std::span<const Code> codes, std::uint8_t limit) {
  Tape tape;
  const std::uint8_t limits[] = {limit};
  Var cell = embed_cells(tape, model, codes, limits);
  return Tensor({model.config.cell_length()},
                std::vector<double>(tape.value(cell).values().begin(), tape.value(cell).values().end()));
}

Var side_input(Tape& tape, const ModelParams& model, const PathBlock& block) {
  if (block.orders != model.config.radius || block.rows != model.config.slot_width ||
      block.codes_per_cell != model.config.codes_per_cell())
    throw ShapeError("path block does not match the model configuration");
  Var cells = embed_cells(tape, model, block.codes, block.limits);
  return tape.reshape(cells, {block.rows, block.orders * model.config.cell_length()});
}

std::vector<Var> conv_side(Tape& tape, const ModelParams& model, Direction side, Var slot_matrix) {
  const SideLayout& s = model.layout.side(side);
  const std::size_t m = model.config.feature_maps;
  const std::size_t r = tape.value(slot_matrix).cols() / model.config.cell_length();
  Var conv = tape.conv1d_nonoverlap(slot_matrix, tape.param(model.params, s.conv_w), tape.param(model.params, s.conv_b),
                                    model.config.cell_length());
  Var act = tape.tanh(conv);
  std::vector<Var> out;
  out.reserve(r);
  for (std::size_t j = 0; j < r; ++j) out.push_back(tape.slice_cols(act, j * m, m));
  return out;
}

std::vector<Var> lstm_side(Tape& tape, const ModelParams& model, Direction side, const std::vector<Var>& inputs) {
  const SideLayout& s = model.layout.side(side);
  const std::size_t d = model.config.hidden;
  const std::size_t r = inputs.size();
  if (r == 0) return {};
  const std::size_t rows = tape.value(inputs[0]).rows();
  Var w = tape.param(model.params, s.lstm_w);
  Var b = tape.param(model.params, s.lstm_b);
  Var h = tape.constant(Tensor({rows, d}));
  Var c = tape.constant(Tensor({rows, d}));

  std::vector<Var> out(r);
  for (std::size_t step = 0; step < r; ++step) {
    // Downstream flow is read from the target outwards, upstream flow from
    // the far end towards the target.
    const std::size_t j = side == Direction::downstream ? step : r - 1 - step;
    const Var xin[] = {inputs[j], h};
    Var gates = tape.affine(tape.concat(xin, 1), w, b);
    Var candidate = tape.tanh(tape.slice_cols(gates, 0, d));
    Var output_gate = tape.sigmoid(tape.slice_cols(gates, d, d));
    Var input_gate = tape.sigmoid(tape.slice_cols(gates, 2 * d, d));
    Var forget_gate = tape.sigmoid(tape.slice_cols(gates, 3 * d, d));
    c = tape.add(tape.mul(candidate, input_gate), tape.mul(c, forget_gate));
    h = tape.mul(output_gate, tape.tanh(c));
    out[j] = h;
  }
  return out;
}

std::vector<Var> pool_slots(Tape& tape, const std::vector<Var>& hidden, const Mask& row_mask) {
  std::vector<Var> out;
  out.reserve(hidden.size());
  for (Var h : hidden) {
    Var pooled = tape.masked_max_pool(h, row_mask, 0);
    out.push_back(tape.reshape(pooled, {1, tape.value(pooled).size()}));
  }
  return out;
}

Attended attend(Tape& tape, const ModelParams& model, Direction side, std::size_t horizon_index,
                const std::vector<Var>& slots, Var target) {
  const SideLayout& s = model.layout.side(side);
  if (horizon_index >= s.att_w1.size()) throw ConfigError("attention: horizon index out of range");
  const std::size_t r = slots.size();
  Var stacked = tape.concat(slots, 0);  // [r, d]
  const Var pair[] = {tape.broadcast_rows(target, r), stacked};
  Var hidden = tape.tanh(tape.affine(tape.concat(pair, 1), tape.param(model.params, s.att_w1[horizon_index]),
                                     tape.param(model.params, s.att_b1[horizon_index])));
  // A constant offset on every score cancels in the softmax, so the output
  // layer of the scorer carries no bias.
  Var scores = tape.affine(hidden, tape.param(model.params, s.att_w2[horizon_index]), tape.constant(Tensor({1})));
  Var alpha = tape.softmax(tape.reshape(scores, {r}));
  Var z = tape.matmul(tape.reshape(alpha, {1, r}), stacked);
  return {z, alpha};
}

Attended pool_and_attend(Tape& tape, const ModelParams& model, Direction side, std::size_t horizon_index,
                         const std::vector<Var>& hidden, const Mask& row_mask, Var target) {
  if (std::none_of(row_mask.begin(), row_mask.end(), [](auto m) { return m != 0; }))
    throw DataError("pool_and_attend: every slot row is masked");
  return attend(tape, model, side, horizon_index, pool_slots(tape, hidden, row_mask), target);
}

Var target_encode(Tape& tape, const ModelParams& model, std::span<const Code> codes, std::uint8_t limit) {
  const std::uint8_t limits[] = {limit};
  Var cell = embed_cells(tape, model, codes, limits);
  return tape.tanh(tape.affine(cell, tape.param(model.params, model.layout.target_w),
                               tape.param(model.params, model.layout.target_b)));
}

namespace {

struct SideResult {
  std::vector<Var> slots;
  std::vector<Attended> attended;  // per horizon
};

SideResult run_side(Tape& tape, const ModelParams& model, Direction side, const PathBlock& block, Var g) {
  const ModelConfig& c = model.config;
  SideResult res;
  const bool any_valid = std::any_of(block.row_mask.begin(), block.row_mask.end(), [](auto m) { return m != 0; });
  if (!any_valid) {
    for (std::size_t j = 0; j < c.radius; ++j) res.slots.push_back(tape.constant(Tensor({1, c.hidden})));
    for (std::size_t k = 0; k < c.horizons.size(); ++k)
      res.attended.push_back({tape.constant(Tensor({1, c.hidden})),
                              tape.constant(Tensor({c.radius}, 1.0 / static_cast<double>(c.radius)))});
    return res;
  }
  auto e = conv_side(tape, model, side, side_input(tape, model, block));
  auto h = lstm_side(tape, model, side, e);
  res.slots = pool_slots(tape, h, block.row_mask);
  for (std::size_t k = 0; k < c.horizons.size(); ++k) res.attended.push_back(attend(tape, model, side, k, res.slots, g));
  return res;
}

std::vector<double> to_vector(const Tensor& t) { return {t.values().begin(), t.values().end()}; }

}  // namespace

ForwardTrace forward(Tape& tape, const ModelParams& model, const Sample& sample) {
  const ModelConfig& c = model.config;
  if (sample.target_codes.size() != c.codes_per_cell()) throw ShapeError("sample history does not match the model");
  if (sample.labels.size() != c.horizons.size()) throw ShapeError("sample horizons do not match the model");

  ForwardTrace tr;
  tr.target = target_encode(tape, model, sample.target_codes, sample.target_limit);
  SideResult up = run_side(tape, model, Direction::upstream, sample.upstream, tr.target);
  SideResult down = run_side(tape, model, Direction::downstream, sample.downstream, tr.target);

  std::vector<Var> preds;
  for (std::size_t k = 0; k < c.horizons.size(); ++k) {
    const Var joined[] = {up.attended[k].z, tr.target, down.attended[k].z};
    preds.push_back(tape.reshape(tape.affine(tape.concat(joined, 1), tape.param(model.params, model.layout.head_w[k]),
                                             tape.param(model.params, model.layout.head_b[k])),
                                 {1}));
    tr.attention_up.push_back(up.attended[k].alpha);
    tr.attention_down.push_back(down.attended[k].alpha);
  }
  tr.predictions = tape.concat(preds, 0);
  tr.slots_up = std::move(up.slots);
  tr.slots_down = std::move(down.slots);
  return tr;
}

ForwardOutput forward(const ModelParams& model, const Sample& sample) {
  Tape tape;
  const ForwardTrace tr = forward(tape, model, sample);
  ForwardOutput out;
  out.predictions = to_vector(tape.value(tr.predictions));
  for (Var a : tr.attention_up) out.attention_up.push_back(to_vector(tape.value(a)));
  for (Var a : tr.attention_down) out.attention_down.push_back(to_vector(tape.value(a)));
  for (Var s : tr.slots_up) out.slots_up.push_back(to_vector(tape.value(s)));
  for (Var s : tr.slots_down) out.slots_down.push_back(to_vector(tape.value(s)));
  return out;
}

Var loss(Tape& tape, Var predictions, std::span<const int> labels, const Mask& label_mask) {
  std::vector<double> target(labels.begin(), labels.end());
  return tape.squared_error(predictions, Tensor::vector(std::move(target)), label_mask);
}

double loss(const ForwardOutput& out, std::span<const int> labels, const Mask& label_mask) {
  if (out.predictions.size() != labels.size() || labels.size() != label_mask.size())
    throw ShapeError("loss: prediction/label length mismatch");
  double total = 0.0;
  for (std::size_t k = 0; k < labels.size(); ++k)
    if (label_mask[k]) total += (out.predictions[k] - labels[k]) * (out.predictions[k] - labels[k]);
  return total;
}

}  // namespace deeptransport
