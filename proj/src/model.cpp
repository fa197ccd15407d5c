#include "earlycls/model.hpp"

#include <cmath>
#include <fstream>
#include <stdexcept>

#include "earlycls/rng.hpp"
#include "earlycls/serialize.hpp"

namespace earlycls {

namespace {

constexpr uint64_t kInitSalt = 0x696e6974;     // "init"
constexpr int kModelFormatVersion = 1;

// One dropout mask row per sample, drawn from that sample's stream in a
// fixed (time, layer) order so batched and per-sample passes see the same
// masks.
void fill_mask_row(Rng& rng, double* row, int h, double keep_prob) {
  const double inv_keep = 1.0 / keep_prob;
  for (int j = 0; j < h; ++j) {
    row[j] = rng.uniform() < keep_prob ? inv_keep : 0.0;
  }
}

}  // namespace

void ModelConfig::validate() const {
  if (input_dim < 1) throw std::invalid_argument("ModelConfig: input_dim must be >= 1");
  if (hidden_dim < 1) throw std::invalid_argument("ModelConfig: hidden_dim must be >= 1");
  if (num_layers < 1) throw std::invalid_argument("ModelConfig: num_layers must be >= 1");
  if (num_classes < 2) throw std::invalid_argument("ModelConfig: num_classes must be >= 2");
  if (!(dropout_rate >= 0.0 && dropout_rate < 1.0)) {
    throw std::invalid_argument("ModelConfig: dropout_rate must be in [0, 1)");
  }
  if (!(stop_bias_init_std >= 0.0)) {
    throw std::invalid_argument("ModelConfig: stop_bias_init_std must be nonnegative");
  }
}

std::vector<ParamRef> learnable_parameters(ParameterSet& params) {
  std::vector<ParamRef> refs;
  for (size_t l = 0; l < params.layers.size(); ++l) {
    const std::string prefix = "layer" + std::to_string(l) + ".";
    LstmLayerParams& lp = params.layers[l];
    refs.push_back({prefix + "w_input", &lp.w_input});
    refs.push_back({prefix + "w_recur", &lp.w_recur});
    refs.push_back({prefix + "bias", &lp.bias});
    refs.push_back({prefix + "ln_gain", &lp.ln_gain});
    refs.push_back({prefix + "ln_offset", &lp.ln_offset});
  }
  refs.push_back({"class_weight", &params.class_weight});
  refs.push_back({"class_bias", &params.class_bias});
  refs.push_back({"stop_weight", &params.stop_weight});
  refs.push_back({"stop_bias", &params.stop_bias});
  return refs;
}

std::vector<ParamRef> learnable_parameters(const ParameterSet& params) {
  return learnable_parameters(const_cast<ParameterSet&>(params));
}

ParameterSet init_parameters(const ModelConfig& cfg, uint64_t seed) {
  cfg.validate();
  const int h = cfg.hidden_dim;
  const double bound = 1.0 / std::sqrt(static_cast<double>(h));
  Rng rng(mix_seed(seed, {kInitSalt}));

  auto uniform_array = [&](int rows, int cols) {
    Array a(rows, cols);
    for (double& x : a) x = rng.uniform(-bound, bound);
    return a;
  };

  ParameterSet p;
  p.layers.resize(static_cast<size_t>(cfg.num_layers));
  for (int l = 0; l < cfg.num_layers; ++l) {
    LstmLayerParams& lp = p.layers[static_cast<size_t>(l)];
    const int in_dim = l == 0 ? cfg.input_dim : h;
    lp.w_input = uniform_array(in_dim, 4 * h);
    lp.w_recur = uniform_array(h, 4 * h);
    lp.bias = uniform_array(1, 4 * h);
    for (int j = h; j < 2 * h; ++j) lp.bias[j] = 1.0;  // forget gate open at start
    lp.ln_gain = Array::filled(1, h, 1.0);
    lp.ln_offset = Array(1, h);
  }
  p.class_weight = uniform_array(h, cfg.num_classes);
  p.class_bias = uniform_array(1, cfg.num_classes);
  p.stop_weight = uniform_array(h, 1);
  p.stop_bias = Array(1, 1);
  p.stop_bias[0] = rng.normal(cfg.stop_bias_init_mean, cfg.stop_bias_init_std);
  p.norm_mean = Array(1, cfg.input_dim);
  p.norm_std = Array::filled(1, cfg.input_dim, 1.0);
  return p;
}

BoundModel bind_parameters(Tape& tape, const ParameterSet& params) {
  BoundModel m;
  for (const LstmLayerParams& lp : params.layers) {
    BoundLayer b;
    b.w_input = tape.leaf(lp.w_input);
    b.w_recur = tape.leaf(lp.w_recur);
    b.bias = tape.leaf(lp.bias);
    b.ln_gain = tape.leaf(lp.ln_gain);
    b.ln_offset = tape.leaf(lp.ln_offset);
    m.layers.push_back(b);
    m.all.insert(m.all.end(), {b.w_input, b.w_recur, b.bias, b.ln_gain, b.ln_offset});
  }
  m.class_weight = tape.leaf(params.class_weight);
  m.class_bias = tape.leaf(params.class_bias);
  m.stop_weight = tape.leaf(params.stop_weight);
  m.stop_bias = tape.leaf(params.stop_bias);
  m.all.insert(m.all.end(), {m.class_weight, m.class_bias, m.stop_weight, m.stop_bias});
  return m;
}

LstmOut lstm_cell(const Value& x_in, const Value& h_prev, const Value& c_prev,
                  const BoundLayer& layer) {
  const int h = c_prev.cols();
  Value pre = add(add(matmul(x_in, layer.w_input), matmul(h_prev, layer.w_recur)), layer.bias);
  Value gate_i = sigmoid(slice_cols(pre, 0, h));
  Value gate_f = sigmoid(slice_cols(pre, h, 2 * h));
  Value gate_g = tanh(slice_cols(pre, 2 * h, 3 * h));
  Value gate_o = sigmoid(slice_cols(pre, 3 * h, 4 * h));
  Value c = add(mul(gate_f, c_prev), mul(gate_i, gate_g));
  return {mul(gate_o, tanh(c)), c};
}

BatchInput make_batch_input(std::span<const Array* const> sequences, const Array& norm_mean,
                            const Array& norm_std) {
  if (sequences.empty()) {
    throw std::invalid_argument("make_batch_input: empty batch");
  }
  const int t_len = sequences[0]->rows();
  const int d = sequences[0]->cols();
  if (norm_mean.cols() != d || norm_std.cols() != d) {
    throw std::invalid_argument("make_batch_input: normalization stats are " +
                                norm_mean.shape_str() + " but observations have " +
                                std::to_string(d) + " columns");
  }
  for (const Array* x : sequences) {
    if (x->rows() != t_len || x->cols() != d) {
      throw std::invalid_argument("make_batch_input: sequence shape " + x->shape_str() +
                                  " differs from " + sequences[0]->shape_str());
    }
  }
  BatchInput in;
  in.steps = t_len;
  in.batch = static_cast<int>(sequences.size());
  in.dim = d;
  in.step_rows.reserve(static_cast<size_t>(t_len));
  for (int t = 0; t < t_len; ++t) {
    Array step(in.batch, d);
    for (int r = 0; r < in.batch; ++r) {
      const double* src = sequences[static_cast<size_t>(r)]->row_ptr(t);
      double* dst = step.row_ptr(r);
      for (int j = 0; j < d; ++j) dst[j] = (src[j] - norm_mean[j]) / norm_std[j];
    }
    in.step_rows.push_back(std::move(step));
  }
  return in;
}

BatchTrace forward_on_tape(Tape& tape, const BoundModel& model, const ModelConfig& cfg,
                           const BatchInput& input, bool training,
                           std::span<const uint64_t> dropout_seeds) {
  if (input.steps < 1) {
    throw std::invalid_argument("forward_on_tape: need at least one observation");
  }
  if (input.dim != cfg.input_dim) {
    throw std::invalid_argument("forward_on_tape: input has " + std::to_string(input.dim) +
                                " columns, model expects " + std::to_string(cfg.input_dim));
  }
  const int b = input.batch;
  const int h = cfg.hidden_dim;
  const int layers = cfg.num_layers;
  const bool use_dropout = training && cfg.dropout_rate > 0.0 && layers > 1;

  std::vector<Rng> mask_streams;
  if (use_dropout) {
    if (static_cast<int>(dropout_seeds.size()) != b) {
      throw std::invalid_argument("forward_on_tape: need one dropout seed per sample");
    }
    mask_streams.reserve(static_cast<size_t>(b));
    for (uint64_t s : dropout_seeds) mask_streams.emplace_back(s);
  }

  std::vector<Value> h_state(static_cast<size_t>(layers));
  std::vector<Value> c_state(static_cast<size_t>(layers));
  for (int l = 0; l < layers; ++l) {
    h_state[static_cast<size_t>(l)] = tape.constant(Array(b, h));
    c_state[static_cast<size_t>(l)] = tape.constant(Array(b, h));
  }

  BatchTrace trace;
  trace.class_probs.reserve(static_cast<size_t>(input.steps));
  trace.stop_probs.reserve(static_cast<size_t>(input.steps));

  for (int t = 0; t < input.steps; ++t) {
    Value layer_in = tape.constant(input.step_rows[static_cast<size_t>(t)]);
    for (int l = 0; l < layers; ++l) {
      const BoundLayer& lp = model.layers[static_cast<size_t>(l)];
      LstmOut out = lstm_cell(layer_in, h_state[static_cast<size_t>(l)],
                              c_state[static_cast<size_t>(l)], lp);
      h_state[static_cast<size_t>(l)] = out.h;
      c_state[static_cast<size_t>(l)] = out.c;
      Value activated = cfg.layer_norm ? layer_norm(out.h, lp.ln_gain, lp.ln_offset) : out.h;
      if (use_dropout && l < layers - 1) {
        Array mask(b, h);
        for (int r = 0; r < b; ++r) {
          fill_mask_row(mask_streams[static_cast<size_t>(r)], mask.row_ptr(r), h,
                        1.0 - cfg.dropout_rate);
        }
        activated = mul_const(activated, std::move(mask));
      }
      layer_in = activated;
    }
    trace.class_probs.push_back(softmax(add(matmul(layer_in, model.class_weight),
                                            model.class_bias)));
    if (t == input.steps - 1) {
      trace.stop_probs.push_back(tape.constant(Array::filled(b, 1, 1.0)));
    } else {
      trace.stop_probs.push_back(sigmoid(add(matmul(layer_in, model.stop_weight),
                                             model.stop_bias)));
    }
  }
  return trace;
}

PredictionTrace forward(const ParameterSet& params, const ModelConfig& cfg, const Array& X,
                        bool training, uint64_t dropout_seed) {
  if (X.rows() < 1) {
    throw std::invalid_argument("forward: need at least one observation row");
  }
  if (X.cols() != cfg.input_dim) {
    throw std::invalid_argument("forward: observations have " + std::to_string(X.cols()) +
                                " columns, model expects " + std::to_string(cfg.input_dim));
  }
  const int t_len = X.rows();
  const int h = cfg.hidden_dim;
  const int m = cfg.num_classes;
  const int layers = cfg.num_layers;
  const bool use_dropout = training && cfg.dropout_rate > 0.0 && layers > 1;
  Rng mask_stream(dropout_seed);

  std::vector<Array> h_state(static_cast<size_t>(layers), Array(1, h));
  std::vector<Array> c_state(static_cast<size_t>(layers), Array(1, h));
  Array gates(1, 4 * h);
  Array layer_in(1, cfg.input_dim);
  Array normed(1, h);
  Array mask(1, h);

  PredictionTrace trace;
  trace.class_scores = Array(t_len, m);
  trace.stop_probs.assign(static_cast<size_t>(t_len), 0.0);

  for (int t = 0; t < t_len; ++t) {
    layer_in = Array(1, cfg.input_dim);
    for (int j = 0; j < cfg.input_dim; ++j) {
      layer_in[j] = (X(t, j) - params.norm_mean[j]) / params.norm_std[j];
    }
    for (int l = 0; l < layers; ++l) {
      const LstmLayerParams& lp = params.layers[static_cast<size_t>(l)];
      Array& hs = h_state[static_cast<size_t>(l)];
      Array& cs = c_state[static_cast<size_t>(l)];
      gates.fill(0.0);
      matmul_accumulate(layer_in.data(), lp.w_input.data(), gates.data(), 1, layer_in.cols(),
                        4 * h);
      matmul_accumulate(hs.data(), lp.w_recur.data(), gates.data(), 1, h, 4 * h);
      for (int j = 0; j < 4 * h; ++j) gates[j] += lp.bias[j];
      for (int j = 0; j < h; ++j) {
        const double gi = stable_sigmoid(gates[j]);
        const double gf = stable_sigmoid(gates[h + j]);
        const double gg = std::tanh(gates[2 * h + j]);
        const double go = stable_sigmoid(gates[3 * h + j]);
        cs[j] = gf * cs[j] + gi * gg;
        hs[j] = go * std::tanh(cs[j]);
      }
      if (cfg.layer_norm) {
        double mean = 0.0;
        for (int j = 0; j < h; ++j) mean += hs[j];
        mean /= h;
        double var = 0.0;
        for (int j = 0; j < h; ++j) {
          const double d = hs[j] - mean;
          var += d * d;
        }
        var /= h;
        const double inv_std = 1.0 / std::sqrt(var + 1e-5);
        for (int j = 0; j < h; ++j) {
          normed[j] = lp.ln_gain[j] * ((hs[j] - mean) * inv_std) + lp.ln_offset[j];
        }
      } else {
        normed = hs;
      }
      if (use_dropout && l < layers - 1) {
        fill_mask_row(mask_stream, mask.data(), h, 1.0 - cfg.dropout_rate);
        for (int j = 0; j < h; ++j) normed[j] *= mask[j];
      }
      layer_in = normed;
    }

    // class head: softmax with max subtraction, same order as the tape op
    Array logits(1, m);
    matmul_accumulate(layer_in.data(), params.class_weight.data(), logits.data(), 1, h, m);
    for (int j = 0; j < m; ++j) logits[j] += params.class_bias[j];
    double hi = logits[0];
    for (int j = 1; j < m; ++j) hi = std::max(hi, logits[j]);
    double z = 0.0;
    double* yrow = trace.class_scores.row_ptr(t);
    for (int j = 0; j < m; ++j) {
      yrow[j] = std::exp(logits[j] - hi);
      z += yrow[j];
    }
    for (int j = 0; j < m; ++j) yrow[j] /= z;

    if (t == t_len - 1) {
      trace.stop_probs[static_cast<size_t>(t)] = 1.0;
    } else {
      Array stop_logit(1, 1);
      matmul_accumulate(layer_in.data(), params.stop_weight.data(), stop_logit.data(), 1, h, 1);
      trace.stop_probs[static_cast<size_t>(t)] =
          stable_sigmoid(stop_logit[0] + params.stop_bias[0]);
    }
  }
  return trace;
}

nlohmann::json array_to_json(const Array& a) {
  nlohmann::json j;
  j["shape"] = {a.rows(), a.cols()};
  j["data"] = std::vector<double>(a.begin(), a.end());
  return j;
}

Array array_from_json(const nlohmann::json& j, const std::string& name) {
  if (!j.contains("shape") || !j.contains("data")) {
    throw std::runtime_error("parameter file: array '" + name + "' missing shape/data");
  }
  const int rows = j["shape"].at(0).get<int>();
  const int cols = j["shape"].at(1).get<int>();
  const auto& data = j["data"];
  Array a(rows, cols);
  if (static_cast<int>(data.size()) != a.size()) {
    throw std::runtime_error("parameter file: array '" + name + "' has " +
                             std::to_string(data.size()) + " values for shape " + a.shape_str());
  }
  for (int i = 0; i < a.size(); ++i) a[i] = data.at(static_cast<size_t>(i)).get<double>();
  return a;
}

nlohmann::json model_config_to_json(const ModelConfig& cfg) {
  return {{"input_dim", cfg.input_dim},
          {"hidden_dim", cfg.hidden_dim},
          {"num_layers", cfg.num_layers},
          {"num_classes", cfg.num_classes},
          {"dropout_rate", cfg.dropout_rate},
          {"stop_bias_init_mean", cfg.stop_bias_init_mean},
          {"stop_bias_init_std", cfg.stop_bias_init_std},
          {"layer_norm", cfg.layer_norm}};
}

ModelConfig model_config_from_json(const nlohmann::json& j) {
  ModelConfig cfg;
  cfg.input_dim = j.at("input_dim").get<int>();
  cfg.hidden_dim = j.at("hidden_dim").get<int>();
  cfg.num_layers = j.at("num_layers").get<int>();
  cfg.num_classes = j.at("num_classes").get<int>();
  cfg.dropout_rate = j.at("dropout_rate").get<double>();
  cfg.stop_bias_init_mean = j.at("stop_bias_init_mean").get<double>();
  cfg.stop_bias_init_std = j.at("stop_bias_init_std").get<double>();
  cfg.layer_norm = j.at("layer_norm").get<bool>();
  cfg.validate();
  return cfg;
}

nlohmann::json parameters_to_json(const ParameterSet& params, const ModelConfig& cfg) {
  nlohmann::json j;
  j["format"] = "earlycls-model";
  j["version"] = kModelFormatVersion;
  j["config"] = model_config_to_json(cfg);
  nlohmann::json arrays;
  for (const ParamRef& ref : learnable_parameters(params)) {
    arrays[ref.name] = array_to_json(*ref.array);
  }
  arrays["norm_mean"] = array_to_json(params.norm_mean);
  arrays["norm_std"] = array_to_json(params.norm_std);
  j["arrays"] = std::move(arrays);
  return j;
}

std::pair<ParameterSet, ModelConfig> parameters_from_json(const nlohmann::json& j) {
  if (!j.contains("format") || j["format"] != "earlycls-model") {
    throw std::runtime_error("parameter file: unrecognized format");
  }
  if (j.at("version").get<int>() != kModelFormatVersion) {
    throw std::runtime_error("parameter file: unsupported version " +
                             j.at("version").dump());
  }
  ModelConfig cfg = model_config_from_json(j.at("config"));
  ParameterSet params = init_parameters(cfg, 0);  // shapes only; contents replaced below
  const auto& arrays = j.at("arrays");
  for (const ParamRef& ref : learnable_parameters(params)) {
    if (!arrays.contains(ref.name)) {
      throw std::runtime_error("parameter file: missing array '" + ref.name + "'");
    }
    Array loaded = array_from_json(arrays.at(ref.name), ref.name);
    require_same_shape(*ref.array, loaded, "parameter file");
    *ref.array = std::move(loaded);
  }
  params.norm_mean = array_from_json(arrays.at("norm_mean"), "norm_mean");
  params.norm_std = array_from_json(arrays.at("norm_std"), "norm_std");
  return {std::move(params), cfg};
}

void save_parameters(const std::string& path, const ParameterSet& params, const ModelConfig& cfg) {
  std::ofstream out(path);
  if (!out) {
    throw std::runtime_error("save_parameters: cannot open " + path);
  }
  out << parameters_to_json(params, cfg).dump(1) << "\n";
}

std::pair<ParameterSet, ModelConfig> load_parameters(const std::string& path) {
  std::ifstream in(path);
  if (!in) {
    throw std::runtime_error("load_parameters: cannot open " + path);
  }
  nlohmann::json j;
  try {
    in >> j;
  } catch (const nlohmann::json::exception& e) {
    throw std::runtime_error("load_parameters: " + path + ": " + e.what());
  }
  return parameters_from_json(j);
}

}  // namespace earlycls
