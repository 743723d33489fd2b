#include "ffmerge/model.hpp"

#include <algorithm>
#include <atomic>
#include <cmath>

#include "ffmerge/errors.hpp"

namespace ffmerge {

namespace {

constexpr double kLayerNormEps = 1e-5;

template <typename E>
E enum_from(const Json& j, const char* key, std::initializer_list<std::pair<const char*, E>> table) {
  const std::string s = j.at(key).get<std::string>();
  for (const auto& [name, value] : table)
    if (s == name) return value;
  throw ValidationError(std::string("unknown value '") + s + "' for config field '" + key + "'");
}

void check_vector(const std::vector<float>& v, std::size_t n, const char* what) {
  if (v.size() != n) {
    throw DimensionError(std::string(what) + " has length " + std::to_string(v.size()) +
                         ", expected " + std::to_string(n));
  }
}

void check_matrix(const Matrix& m, std::size_t rows, std::size_t cols, const char* what) {
  if (m.rows() != rows || m.cols() != cols) {
    throw DimensionError(std::string(what) + " has shape " + m.shape_string() + ", expected " +
                         std::to_string(rows) + "x" + std::to_string(cols));
  }
}

std::vector<float> to_vector(const Matrix& m) { return {m.data().begin(), m.data().end()}; }

// Row-wise x·Wᵀ + b.
Matrix linear(const Matrix& x, const Matrix& w, const Matrix* bias) {
  Matrix y = matmul_transposed(x, w);
  if (bias) {
    auto b = bias->data();
    for (std::size_t r = 0; r < y.rows(); ++r) {
      auto row = y.row(r);
      for (std::size_t c = 0; c < row.size(); ++c) row[c] += b[c];
    }
  }
  return y;
}

Matrix layer_norm(const Matrix& x, const Matrix& gain, const Matrix& bias) {
  Matrix y(x.rows(), x.cols());
  auto g = gain.data();
  auto b = bias.data();
  for (std::size_t r = 0; r < x.rows(); ++r) {
    auto in = x.row(r);
    double mean = 0.0;
    for (float v : in) mean += v;
    mean /= double(in.size());
    double var = 0.0;
    for (float v : in) var += (v - mean) * (v - mean);
    var /= double(in.size());
    const double inv = 1.0 / std::sqrt(var + kLayerNormEps);
    auto out = y.row(r);
    for (std::size_t c = 0; c < in.size(); ++c)
      out[c] = static_cast<float>((in[c] - mean) * inv * g[c] + b[c]);
  }
  return y;
}

void add_in_place(Matrix& acc, const Matrix& delta) {
  auto a = acc.data();
  auto d = delta.data();
  for (std::size_t i = 0; i < a.size(); ++i) a[i] += d[i];
}

struct LayerView {
  const Matrix *wq, *wk, *wv, *wo, *bq, *bk, *bv, *bo;
  const Matrix *ln1_gain, *ln1_bias, *ln2_gain, *ln2_bias;
  const Matrix *w_in = nullptr, *b_in = nullptr, *w_out = nullptr, *b_out = nullptr;
  const Matrix *w_up = nullptr, *v_gate = nullptr, *w_down = nullptr;
};

LayerView view_layer(const ParameterStore& p, const ModelConfig& cfg, std::size_t i) {
  auto t = [&](const char* suffix) { return &p.get(layer_tensor_name(i, suffix)); };
  LayerView v{t("attn.wq"), t("attn.wk"),   t("attn.wv"),   t("attn.wo"),
              t("attn.bq"), t("attn.bk"),   t("attn.bv"),   t("attn.bo"),
              t("ln1.gain"), t("ln1.bias"), t("ln2.gain"), t("ln2.bias")};
  if (cfg.ff_kind == FFKind::swiglu) {
    v.w_up = t("ff.w_up");
    v.v_gate = t("ff.v_gate");
    v.w_down = t("ff.w_down");
  } else {
    v.w_in = t("ff.w_in");
    v.w_out = t("ff.w_out");
    if (cfg.has_ff_biases) {
      v.b_in = t("ff.b_in");
      v.b_out = t("ff.b_out");
    }
  }
  return v;
}

Matrix attention(const ModelConfig& cfg, const LayerView& v, const Matrix& x) {
  const std::size_t len = x.rows();
  const std::size_t dh = cfg.d_model / cfg.n_heads;
  const Matrix q = linear(x, *v.wq, v.bq);
  const Matrix k = linear(x, *v.wk, v.bk);
  const Matrix val = linear(x, *v.wv, v.bv);
  const bool causal = cfg.mode == ModelMode::lm;
  const double scale = 1.0 / std::sqrt(double(dh));

  Matrix ctx(len, cfg.d_model);
  std::vector<double> scores(len);
  for (std::size_t h = 0; h < cfg.n_heads; ++h) {
    const std::size_t off = h * dh;
    for (std::size_t i = 0; i < len; ++i) {
      const std::size_t visible = causal ? i + 1 : len;
      double top = -INFINITY;
      for (std::size_t j = 0; j < visible; ++j) {
        double s = 0.0;
        for (std::size_t c = 0; c < dh; ++c) s += double(q(i, off + c)) * k(j, off + c);
        scores[j] = s * scale;
        top = std::max(top, scores[j]);
      }
      double z = 0.0;
      for (std::size_t j = 0; j < visible; ++j) {
        scores[j] = std::exp(scores[j] - top);
        z += scores[j];
      }
      for (std::size_t c = 0; c < dh; ++c) {
        double acc = 0.0;
        for (std::size_t j = 0; j < visible; ++j) acc += scores[j] * val(j, off + c);
        ctx(i, off + c) = static_cast<float>(acc / z);
      }
    }
  }
  return linear(ctx, *v.wo, v.bo);
}

struct FFBatch {
  Matrix pre_act;
  Matrix out;
};

FFBatch feed_forward(const ModelConfig& cfg, const LayerView& v, const Matrix& x) {
  if (cfg.ff_kind == FFKind::swiglu) {
    Matrix up = linear(x, *v.w_up, nullptr);
    const Matrix gate = linear(x, *v.v_gate, nullptr);
    auto u = up.data();
    auto g = gate.data();
    for (std::size_t i = 0; i < u.size(); ++i) u[i] = swish(u[i]) * g[i];
    Matrix out = linear(up, *v.w_down, nullptr);
    return {std::move(up), std::move(out)};
  }
  Matrix pre = linear(x, *v.w_in, v.b_in);
  Matrix act = pre;
  for (float& z : act.data()) z = cfg.ff_kind == FFKind::relu ? std::max(z, 0.0f) : gelu(z);
  Matrix out = linear(act, *v.w_out, v.b_out);
  return {std::move(pre), std::move(out)};
}

std::atomic<std::uint64_t> g_capture_count{0};

double log_softmax_at(std::span<const float> logits, std::size_t index) {
  double top = -INFINITY;
  for (float v : logits) top = std::max(top, double(v));
  double z = 0.0;
  for (float v : logits) z += std::exp(double(v) - top);
  return double(logits[index]) - top - std::log(z);
}

std::size_t argmax(std::span<const float> v) {
  return static_cast<std::size_t>(std::max_element(v.begin(), v.end()) - v.begin());
}

}  // namespace

// ---------------------------------------------------------------------------
// Config

const char* to_string(ModelMode v) { return v == ModelMode::lm ? "lm" : "classifier"; }
const char* to_string(NormPlacement v) { return v == NormPlacement::pre_ln ? "pre_ln" : "post_ln"; }
const char* to_string(Pooling v) { return v == Pooling::mean ? "mean" : "cls"; }
const char* to_string(FFKind v) {
  switch (v) {
    case FFKind::relu: return "relu";
    case FFKind::gelu: return "gelu";
    case FFKind::swiglu: return "swiglu";
  }
  return "?";
}

void ModelConfig::validate() const {
  auto fail = [](const std::string& m) { throw ValidationError("invalid model config: " + m); };
  if (n_layers == 0) fail("n_layers must be positive");
  if (d_model == 0 || d_ff == 0) fail("d_model and d_ff must be positive");
  if (n_heads == 0 || d_model % n_heads != 0) fail("d_model must be divisible by n_heads");
  if (vocab_size == 0) fail("vocab_size must be positive");
  if (max_seq_len == 0) fail("max_seq_len must be positive");
  if (mode == ModelMode::classifier && n_classes == 0) fail("classifier needs n_classes");
  if (ff_kind == FFKind::swiglu && has_ff_biases) fail("swiglu feed-forwards carry no biases");
}

std::size_t ModelConfig::ff_parameter_count() const {
  if (ff_kind == FFKind::swiglu) return 3 * d_ff * d_model;
  return 2 * d_ff * d_model + (has_ff_biases ? d_ff + d_model : 0);
}

std::size_t ModelConfig::attention_parameter_count() const {
  return 4 * d_model * d_model + 4 * d_model;
}

std::size_t ModelConfig::layer_parameter_count() const {
  return attention_parameter_count() + ff_parameter_count() + 4 * d_model;
}

Json to_json(const ModelConfig& c) {
  Json j = Json::object();
  j["mode"] = to_string(c.mode);
  j["n_layers"] = c.n_layers;
  j["d_model"] = c.d_model;
  j["d_ff"] = c.d_ff;
  j["n_heads"] = c.n_heads;
  j["vocab_size"] = c.vocab_size;
  if (c.mode == ModelMode::classifier) {
    j["n_classes"] = c.n_classes;
    j["pooling"] = to_string(c.pooling);
  }
  j["max_seq_len"] = c.max_seq_len;
  j["norm_placement"] = to_string(c.norm_placement);
  j["ff_kind"] = to_string(c.ff_kind);
  j["has_ff_biases"] = c.has_ff_biases;
  j["separator_id"] = c.separator_id;
  return j;
}

ModelConfig config_from_json(const Json& j) {
  ModelConfig c;
  try {
    c.mode = enum_from<ModelMode>(j, "mode", {{"lm", ModelMode::lm},
                                              {"classifier", ModelMode::classifier}});
    c.n_layers = j.at("n_layers").get<std::size_t>();
    c.d_model = j.at("d_model").get<std::size_t>();
    c.d_ff = j.at("d_ff").get<std::size_t>();
    c.n_heads = j.at("n_heads").get<std::size_t>();
    c.vocab_size = j.at("vocab_size").get<std::size_t>();
    if (c.mode == ModelMode::classifier) {
      c.n_classes = j.at("n_classes").get<std::size_t>();
      c.pooling = j.contains("pooling")
                      ? enum_from<Pooling>(j, "pooling", {{"mean", Pooling::mean},
                                                          {"cls", Pooling::cls}})
                      : Pooling::mean;
    }
    c.max_seq_len = j.at("max_seq_len").get<std::size_t>();
    c.norm_placement = enum_from<NormPlacement>(
        j, "norm_placement",
        {{"pre_ln", NormPlacement::pre_ln}, {"post_ln", NormPlacement::post_ln}});
    c.ff_kind = enum_from<FFKind>(
        j, "ff_kind", {{"relu", FFKind::relu}, {"gelu", FFKind::gelu}, {"swiglu", FFKind::swiglu}});
    c.has_ff_biases = j.at("has_ff_biases").get<bool>();
    c.separator_id = j.value("separator_id", kDefaultSeparator);
  } catch (const nlohmann::json::exception& e) {
    throw ValidationError(std::string("invalid model config: ") + e.what());
  }
  c.validate();
  return c;
}

std::string layer_tensor_name(std::size_t layer, const std::string& suffix) {
  return "layer" + std::to_string(layer) + "." + suffix;
}

std::vector<std::string> ff_tensor_suffixes(const ModelConfig& c) {
  if (c.ff_kind == FFKind::swiglu) return {"ff.w_up", "ff.v_gate", "ff.w_down"};
  if (c.has_ff_biases) return {"ff.w_in", "ff.b_in", "ff.w_out", "ff.b_out"};
  return {"ff.w_in", "ff.w_out"};
}

std::vector<std::string> ff_tensor_names(const ModelConfig& c, std::size_t layer) {
  std::vector<std::string> names;
  for (const auto& s : ff_tensor_suffixes(c)) names.push_back(layer_tensor_name(layer, s));
  return names;
}

std::vector<std::string> layer_tensor_names(const ModelConfig& c, std::size_t layer) {
  std::vector<std::string> names;
  for (const char* s : {"attn.wq", "attn.wk", "attn.wv", "attn.wo", "attn.bq", "attn.bk",
                        "attn.bv", "attn.bo", "ln1.gain", "ln1.bias"})
    names.push_back(layer_tensor_name(layer, s));
  for (auto& n : ff_tensor_names(c, layer)) names.push_back(std::move(n));
  names.push_back(layer_tensor_name(layer, "ln2.gain"));
  names.push_back(layer_tensor_name(layer, "ln2.bias"));
  return names;
}

// ---------------------------------------------------------------------------
// Feed-forward sublayers

void FFParams::check_shapes() const {
  const std::size_t d_ff = w_in.rows();
  const std::size_t d_model = w_in.cols();
  check_vector(b_in, d_ff, "b_in");
  check_matrix(w_out, d_model, d_ff, "w_out");
  check_vector(b_out, d_model, "b_out");
}

void SwigluFFParams::check_shapes() const {
  check_matrix(v_gate, w_up.rows(), w_up.cols(), "v_gate");
  check_matrix(w_down, w_up.cols(), w_up.rows(), "w_down");
}

float gelu(float z) {
  const double x = z;
  constexpr double k = 0.7978845608028654;  // sqrt(2/pi)
  return static_cast<float>(0.5 * x * (1.0 + std::tanh(k * (x + 0.044715 * x * x * x))));
}

float swish(float z) {
  const double x = z;
  return static_cast<float>(x / (1.0 + std::exp(-x)));
}

FFOutput ff_forward(const FFParams& p, std::span<const float> x, Activation activation) {
  p.check_shapes();
  FFOutput out;
  out.pre_act = matvec(p.w_in, x);
  for (std::size_t i = 0; i < out.pre_act.size(); ++i) out.pre_act[i] += p.b_in[i];
  std::vector<float> act = out.pre_act;
  for (float& z : act) z = activation == Activation::relu ? std::max(z, 0.0f) : gelu(z);
  out.y = matvec(p.w_out, act);
  for (std::size_t i = 0; i < out.y.size(); ++i) out.y[i] += p.b_out[i];
  return out;
}

FFOutput swiglu_forward(const SwigluFFParams& p, std::span<const float> x) {
  p.check_shapes();
  FFOutput out;
  out.pre_act = matvec(p.w_up, x);
  const auto gate = matvec(p.v_gate, x);
  for (std::size_t i = 0; i < gate.size(); ++i) out.pre_act[i] = swish(out.pre_act[i]) * gate[i];
  out.y = matvec(p.w_down, out.pre_act);
  return out;
}

// ---------------------------------------------------------------------------
// Model

TransformerModel::TransformerModel(ModelConfig config, ParameterStore params)
    : config_(std::move(config)), params_(std::move(params)) {
  config_.validate();
  const auto& c = config_;
  auto expect = [&](const std::string& name, std::size_t rows, std::size_t cols) {
    if (!params_.contains(name)) throw ValidationError("model is missing tensor '" + name + "'");
    const Matrix& m = params_.get(name);
    if (m.rows() != rows || m.cols() != cols) {
      throw ValidationError("tensor '" + name + "' has shape " + m.shape_string() +
                            ", expected " + std::to_string(rows) + "x" + std::to_string(cols));
    }
  };
  expect("embed.tok", c.vocab_size, c.d_model);
  expect("embed.pos", c.max_seq_len, c.d_model);
  expect("head.w", c.output_width(), c.d_model);
  expect("head.b", 1, c.output_width());
  if (c.norm_placement == NormPlacement::pre_ln) {
    expect("final_ln.gain", 1, c.d_model);
    expect("final_ln.bias", 1, c.d_model);
  }
  for (std::size_t i = 0; i < c.n_layers; ++i) {
    auto name = [&](const char* s) { return layer_tensor_name(i, s); };
    for (const char* s : {"attn.wq", "attn.wk", "attn.wv", "attn.wo"})
      expect(name(s), c.d_model, c.d_model);
    for (const char* s : {"attn.bq", "attn.bk", "attn.bv", "attn.bo", "ln1.gain", "ln1.bias",
                          "ln2.gain", "ln2.bias"})
      expect(name(s), 1, c.d_model);
    if (c.ff_kind == FFKind::swiglu) {
      expect(name("ff.w_up"), c.d_ff, c.d_model);
      expect(name("ff.v_gate"), c.d_ff, c.d_model);
      expect(name("ff.w_down"), c.d_model, c.d_ff);
    } else {
      expect(name("ff.w_in"), c.d_ff, c.d_model);
      expect(name("ff.w_out"), c.d_model, c.d_ff);
      if (c.has_ff_biases) {
        expect(name("ff.b_in"), 1, c.d_ff);
        expect(name("ff.b_out"), 1, c.d_model);
      }
    }
  }
}

TransformerModel TransformerModel::deep_copy() const {
  return TransformerModel(config_, params_.deep_copy());
}

FFParams TransformerModel::ff_params(std::size_t layer) const {
  if (config_.ff_kind == FFKind::swiglu) throw DomainError("model uses swiglu feed-forwards");
  if (layer >= config_.n_layers) throw DomainError("layer index out of range");
  auto get = [&](const char* s) { return params_.get(layer_tensor_name(layer, s)); };
  FFParams p{get("ff.w_in"), std::vector<float>(config_.d_ff, 0.0f), get("ff.w_out"),
             std::vector<float>(config_.d_model, 0.0f)};
  if (config_.has_ff_biases) {
    p.b_in = to_vector(get("ff.b_in"));
    p.b_out = to_vector(get("ff.b_out"));
  }
  return p;
}

SwigluFFParams TransformerModel::swiglu_params(std::size_t layer) const {
  if (config_.ff_kind != FFKind::swiglu) throw DomainError("model does not use swiglu");
  if (layer >= config_.n_layers) throw DomainError("layer index out of range");
  auto get = [&](const char* s) { return params_.get(layer_tensor_name(layer, s)); };
  return {get("ff.w_up"), get("ff.v_gate"), get("ff.w_down")};
}

void save_model(const std::filesystem::path& path, const TransformerModel& model) {
  write_checkpoint(path, model.params(), to_json(model.config()));
}

TransformerModel load_model(const std::filesystem::path& path) {
  Checkpoint ckpt = read_checkpoint(path);
  return TransformerModel(config_from_json(ckpt.config), std::move(ckpt.store));
}

// ---------------------------------------------------------------------------
// Forward pass

const char* to_string(Tap tap) {
  switch (tap) {
    case Tap::ff_pre_act: return "ff_pre_act";
    case Tap::ff_out: return "ff_out";
    case Tap::attn_out: return "attn_out";
  }
  return "?";
}

Tap tap_from_string(const std::string& s) {
  if (s == "ff_pre_act" || s == "ff-pre-act") return Tap::ff_pre_act;
  if (s == "ff_out" || s == "ff-out") return Tap::ff_out;
  if (s == "attn_out" || s == "attn-out") return Tap::attn_out;
  throw ValidationError("unknown tap '" + s + "'");
}

Matrix forward(const TransformerModel& model, std::span<const std::uint32_t> tokens,
               const TapObserver& observer) {
  const ModelConfig& cfg = model.config();
  const ParameterStore& p = model.params();
  if (tokens.empty()) throw DomainError("empty input sequence");
  if (tokens.size() > cfg.max_seq_len) {
    throw DomainError("sequence length " + std::to_string(tokens.size()) + " exceeds max_seq_len " +
                      std::to_string(cfg.max_seq_len));
  }

  const Matrix& tok = p.get("embed.tok");
  const Matrix& pos = p.get("embed.pos");
  Matrix h(tokens.size(), cfg.d_model);
  for (std::size_t i = 0; i < tokens.size(); ++i) {
    if (tokens[i] >= cfg.vocab_size) {
      throw DomainError("token " + std::to_string(tokens[i]) + " at position " +
                        std::to_string(i) + " is outside the vocabulary of " +
                        std::to_string(cfg.vocab_size));
    }
    auto row = h.row(i);
    auto t = tok.row(tokens[i]);
    auto e = pos.row(i);
    for (std::size_t c = 0; c < cfg.d_model; ++c) row[c] = t[c] + e[c];
  }

  const bool pre_ln = cfg.norm_placement == NormPlacement::pre_ln;
  for (std::size_t layer = 0; layer < cfg.n_layers; ++layer) {
    const LayerView v = view_layer(p, cfg, layer);

    const Matrix a = attention(cfg, v, pre_ln ? layer_norm(h, *v.ln1_gain, *v.ln1_bias) : h);
    if (observer) observer(layer, Tap::attn_out, a);
    add_in_place(h, a);
    if (!pre_ln) h = layer_norm(h, *v.ln1_gain, *v.ln1_bias);

    const FFBatch f = feed_forward(cfg, v, pre_ln ? layer_norm(h, *v.ln2_gain, *v.ln2_bias) : h);
    if (observer) {
      observer(layer, Tap::ff_pre_act, f.pre_act);
      observer(layer, Tap::ff_out, f.out);
    }
    add_in_place(h, f.out);
    if (!pre_ln) h = layer_norm(h, *v.ln2_gain, *v.ln2_bias);
  }
  if (pre_ln) h = layer_norm(h, p.get("final_ln.gain"), p.get("final_ln.bias"));

  if (cfg.mode == ModelMode::lm) return linear(h, p.get("head.w"), &p.get("head.b"));

  Matrix pooled(1, cfg.d_model);
  if (cfg.pooling == Pooling::cls) {
    auto r = h.row(0);
    std::copy(r.begin(), r.end(), pooled.row(0).begin());
  } else {
    for (std::size_t c = 0; c < cfg.d_model; ++c) {
      double acc = 0.0;
      for (std::size_t i = 0; i < h.rows(); ++i) acc += h(i, c);
      pooled(0, c) = static_cast<float>(acc / double(h.rows()));
    }
  }
  return linear(pooled, p.get("head.w"), &p.get("head.b"));
}

// ---------------------------------------------------------------------------
// Activation capture

const Matrix& ActivationSet::layer(std::size_t index) const {
  auto it = per_layer.find(index);
  if (it == per_layer.end()) {
    throw DomainError("activation set has no layer " + std::to_string(index));
  }
  return it->second;
}

std::uint64_t capture_count() noexcept { return g_capture_count.load(); }

ActivationSet capture_activations(const TransformerModel& model, const Dataset& dataset, Tap tap,
                                  std::size_t max_samples) {
  if (max_samples == 0) throw DomainError("max_samples must be at least 1");
  if (dataset.sequences.empty()) throw DomainError("cannot capture activations: empty dataset");
  g_capture_count.fetch_add(1);

  const ModelConfig& cfg = model.config();
  const std::size_t width = tap == Tap::ff_pre_act ? cfg.d_ff : cfg.d_model;
  std::vector<std::vector<float>> buffers(cfg.n_layers);
  std::size_t rows = 0;
  for (const auto& seq : dataset.sequences) {
    if (rows >= max_samples) break;
    const std::size_t take = std::min(seq.size(), max_samples - rows);
    forward(model, seq, [&](std::size_t layer, Tap t, const Matrix& feats) {
      if (t != tap) return;
      auto data = feats.data();
      buffers[layer].insert(buffers[layer].end(), data.begin(),
                            data.begin() + static_cast<std::ptrdiff_t>(take * width));
    });
    rows += take;
  }
  if (rows == 0) throw DomainError("cannot capture activations: dataset has no tokens");

  ActivationSet acts;
  acts.tap = tap;
  acts.width = width;
  acts.sample_count = rows;
  for (std::size_t layer = 0; layer < cfg.n_layers; ++layer)
    acts.per_layer.emplace(layer, Matrix(rows, width, std::move(buffers[layer])));
  return acts;
}

void write_activations(const std::filesystem::path& path, const ActivationSet& acts) {
  ParameterStore store;
  Json layers = Json::array();
  for (const auto& [index, m] : acts.per_layer) {
    if (m.rows() != acts.sample_count || m.cols() != acts.width) {
      throw ValidationError("activation layer " + std::to_string(index) +
                            " does not match the set's sample count and width");
    }
    store.add("acts.layer" + std::to_string(index), m);
    layers.push_back(index);
  }
  Json config = Json::object();
  config["kind"] = "activations";
  config["tap"] = to_string(acts.tap);
  config["sample_count"] = acts.sample_count;
  config["width"] = acts.width;
  config["layers"] = std::move(layers);
  write_checkpoint(path, store, config);
}

ActivationSet read_activations(const std::filesystem::path& path) {
  Checkpoint ckpt = read_checkpoint(path);
  ActivationSet acts;
  try {
    if (ckpt.config.value("kind", std::string()) != "activations") {
      throw ValidationError("'" + path.string() + "' is not an activation file");
    }
    acts.tap = tap_from_string(ckpt.config.at("tap").get<std::string>());
    acts.sample_count = ckpt.config.at("sample_count").get<std::size_t>();
    acts.width = ckpt.config.at("width").get<std::size_t>();
    for (const auto& index : ckpt.config.at("layers")) {
      const auto i = index.get<std::size_t>();
      const Matrix& m = ckpt.store.get("acts.layer" + std::to_string(i));
      if (m.rows() != acts.sample_count || m.cols() != acts.width) {
        throw ValidationError("activation layer " + std::to_string(i) + " has shape " +
                              m.shape_string());
      }
      acts.per_layer.emplace(i, m);
    }
  } catch (const nlohmann::json::exception& e) {
    throw ValidationError(std::string("invalid activation file header: ") + e.what());
  }
  return acts;
}

// ---------------------------------------------------------------------------
// Evaluation

const char* to_string(MetricKind kind) {
  switch (kind) {
    case MetricKind::cross_entropy: return "cross_entropy";
    case MetricKind::perplexity: return "perplexity";
    case MetricKind::accuracy: return "accuracy";
  }
  return "?";
}

EvalMetric metric_from_string(const std::string& s) {
  if (s == "xent" || s == "cross_entropy") return {MetricKind::cross_entropy};
  if (s == "ppl" || s == "perplexity") return {MetricKind::perplexity};
  if (s == "acc" || s == "accuracy") return {MetricKind::accuracy};
  throw ValidationError("unknown metric '" + s + "'");
}

double evaluate(const TransformerModel& model, const Dataset& dataset, EvalMetric metric) {
  const ModelConfig& cfg = model.config();
  if (dataset.sequences.empty()) throw DomainError("cannot evaluate on an empty dataset");
  const bool classifier = cfg.mode == ModelMode::classifier;
  if (classifier && dataset.labels.size() != dataset.sequences.size()) {
    throw ValidationError("classifier dataset has " + std::to_string(dataset.labels.size()) +
                          " labels for " + std::to_string(dataset.sequences.size()) +
                          " sequences");
  }

  double nll = 0.0;
  std::size_t correct = 0;
  std::size_t count = 0;
  for (std::size_t s = 0; s < dataset.sequences.size(); ++s) {
    const auto& seq = dataset.sequences[s];
    const Matrix logits = forward(model, seq);
    if (classifier) {
      const std::uint32_t label = dataset.labels[s];
      if (label >= cfg.n_classes) throw DomainError("label out of range");
      nll -= log_softmax_at(logits.row(0), label);
      correct += argmax(logits.row(0)) == label;
      ++count;
    } else {
      for (std::size_t i = 0; i + 1 < seq.size(); ++i) {
        nll -= log_softmax_at(logits.row(i), seq[i + 1]);
        correct += argmax(logits.row(i)) == seq[i + 1];
        ++count;
      }
    }
  }
  if (count == 0) throw DomainError("dataset has no predictable tokens");

  const double xent = nll / double(count);
  switch (metric.kind) {
    case MetricKind::cross_entropy: return xent;
    case MetricKind::perplexity: return std::exp(xent);
    case MetricKind::accuracy: return double(correct) / double(count);
  }
  return xent;
}

}  // namespace ffmerge
