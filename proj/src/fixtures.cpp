#include "ffmerge/fixtures.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <random>

#include "ffmerge/errors.hpp"

namespace ffmerge {

namespace {

Matrix gaussian(std::mt19937_64& rng, std::size_t rows, std::size_t cols, double stddev) {
  std::normal_distribution<double> dist(0.0, stddev);
  Matrix m(rows, cols);
  for (float& v : m.data()) v = static_cast<float>(dist(rng));
  return m;
}

void fill(ParameterStore& store, const std::string& name, float value) {
  const Matrix& old = store.get(name);
  store.replace(name, Matrix(old.rows(), old.cols(), value));
}

}  // namespace

const char* to_string(FixtureKind kind) {
  switch (kind) {
    case FixtureKind::random: return "random";
    case FixtureKind::duplicate: return "duplicate";
    case FixtureKind::permuted_copy: return "permuted-copy";
  }
  return "?";
}

FixtureKind fixture_kind_from_string(const std::string& s) {
  if (s == "random") return FixtureKind::random;
  if (s == "duplicate") return FixtureKind::duplicate;
  if (s == "permuted-copy" || s == "permuted_copy") return FixtureKind::permuted_copy;
  throw ValidationError("unknown fixture kind '" + s + "'");
}

ModelConfig fixture_config(std::size_t n_layers, std::size_t d_model, std::size_t d_ff,
                           FFKind ff_kind) {
  ModelConfig c;
  c.mode = ModelMode::lm;
  c.n_layers = n_layers;
  c.d_model = d_model;
  c.d_ff = d_ff;
  c.n_heads = d_model % 2 == 0 ? 2 : 1;
  c.vocab_size = 32;
  c.max_seq_len = 32;
  c.norm_placement = NormPlacement::pre_ln;
  c.ff_kind = ff_kind;
  c.has_ff_biases = ff_kind != FFKind::swiglu;
  return c;
}

TransformerModel random_model(const ModelConfig& cfg, std::uint64_t seed, float ff_out_scale,
                              float head_scale) {
  cfg.validate();
  std::mt19937_64 rng(seed);
  const double dm = double(cfg.d_model);
  const double dff = double(cfg.d_ff);
  ParameterStore p;
  p.add("embed.tok", gaussian(rng, cfg.vocab_size, cfg.d_model, 1.0));
  p.add("embed.pos", gaussian(rng, cfg.max_seq_len, cfg.d_model, 0.3));
  for (std::size_t i = 0; i < cfg.n_layers; ++i) {
    auto name = [&](const char* s) { return layer_tensor_name(i, s); };
    for (const char* w : {"attn.wq", "attn.wk", "attn.wv", "attn.wo"})
      p.add(name(w), gaussian(rng, cfg.d_model, cfg.d_model, 1.0 / std::sqrt(dm)));
    for (const char* b : {"attn.bq", "attn.bk", "attn.bv", "attn.bo"})
      p.add(name(b), {cfg.d_model}, gaussian(rng, 1, cfg.d_model, 0.05));
    p.add(name("ln1.gain"), {cfg.d_model}, Matrix(1, cfg.d_model, 1.0f));
    p.add(name("ln1.bias"), {cfg.d_model}, Matrix(1, cfg.d_model, 0.0f));
    if (cfg.ff_kind == FFKind::swiglu) {
      p.add(name("ff.w_up"), gaussian(rng, cfg.d_ff, cfg.d_model, 1.0 / std::sqrt(dm)));
      p.add(name("ff.v_gate"), gaussian(rng, cfg.d_ff, cfg.d_model, 1.0 / std::sqrt(dm)));
      p.add(name("ff.w_down"),
            gaussian(rng, cfg.d_model, cfg.d_ff, ff_out_scale / std::sqrt(dff)));
    } else {
      p.add(name("ff.w_in"), gaussian(rng, cfg.d_ff, cfg.d_model, 1.0 / std::sqrt(dm)));
      if (cfg.has_ff_biases) p.add(name("ff.b_in"), {cfg.d_ff}, gaussian(rng, 1, cfg.d_ff, 0.1));
      p.add(name("ff.w_out"), gaussian(rng, cfg.d_model, cfg.d_ff, ff_out_scale / std::sqrt(dff)));
      if (cfg.has_ff_biases) {
        p.add(name("ff.b_out"), {cfg.d_model}, gaussian(rng, 1, cfg.d_model, 0.1 * ff_out_scale));
      }
    }
    p.add(name("ln2.gain"), {cfg.d_model}, Matrix(1, cfg.d_model, 1.0f));
    p.add(name("ln2.bias"), {cfg.d_model}, Matrix(1, cfg.d_model, 0.0f));
  }
  if (cfg.norm_placement == NormPlacement::pre_ln) {
    p.add("final_ln.gain", {cfg.d_model}, Matrix(1, cfg.d_model, 1.0f));
    p.add("final_ln.bias", {cfg.d_model}, Matrix(1, cfg.d_model, 0.0f));
  }
  p.add("head.w", gaussian(rng, cfg.output_width(), cfg.d_model, head_scale / std::sqrt(dm)));
  p.add("head.b", {cfg.output_width()}, gaussian(rng, 1, cfg.output_width(), 0.1));
  return TransformerModel(cfg, std::move(p));
}

void zero_attention(TransformerModel& model, std::size_t layer) {
  ParameterStore& p = model.mutable_params();
  for (const char* s : {"attn.wq", "attn.wk", "attn.wv", "attn.wo", "attn.bq", "attn.bk",
                        "attn.bv", "attn.bo"})
    fill(p, layer_tensor_name(layer, s), 0.0f);
}

void zero_layer(TransformerModel& model, std::size_t layer) {
  zero_attention(model, layer);
  for (const auto& name : ff_tensor_names(model.config(), layer))
    fill(model.mutable_params(), name, 0.0f);
}

void copy_permuted_ff(TransformerModel& model, std::size_t source, std::size_t layer,
                      const Permutation& pi) {
  ParameterStore& p = model.mutable_params();
  auto put = [&](const char* suffix, Matrix value) {
    p.replace(layer_tensor_name(layer, suffix), std::move(value));
  };
  if (model.config().ff_kind == FFKind::swiglu) {
    SwigluFFParams ff = apply_permutation_swiglu(model.swiglu_params(source), pi);
    put("ff.w_up", std::move(ff.w_up));
    put("ff.v_gate", std::move(ff.v_gate));
    put("ff.w_down", std::move(ff.w_down));
    return;
  }
  FFParams ff = apply_permutation(model.ff_params(source), pi);
  put("ff.w_in", std::move(ff.w_in));
  put("ff.w_out", std::move(ff.w_out));
  if (model.config().has_ff_biases) {
    put("ff.b_in", Matrix::row_vector(ff.b_in));
    put("ff.b_out", Matrix::row_vector(ff.b_out));
  }
}

Permutation random_permutation(std::size_t n, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  std::vector<std::size_t> map(n);
  std::iota(map.begin(), map.end(), std::size_t{0});
  std::shuffle(map.begin(), map.end(), rng);
  return Permutation(std::move(map));
}

namespace {

float default_ff_out_scale(const FixtureSpec& spec) {
  if (spec.ff_out_scale) return *spec.ff_out_scale;
  return spec.kind == FixtureKind::duplicate ? 0.01f : 0.5f;
}

}  // namespace

Fixture build_fixture(const FixtureSpec& spec) {
  const ModelConfig& cfg = spec.config;
  Fixture out{random_model(cfg, spec.seed, default_ff_out_scale(spec), spec.head_scale), {}};
  TransformerModel& m = out.model;

  switch (spec.kind) {
    case FixtureKind::random:
      break;
    case FixtureKind::duplicate: {
      ParameterStore& p = m.mutable_params();
      for (std::size_t i = 1; i < cfg.n_layers; ++i)
        for (const auto& name : layer_tensor_names(cfg, i)) {
          const std::string suffix = name.substr(name.find('.') + 1);
          p.replace(name, p.get(layer_tensor_name(0, suffix)));
        }
      for (std::size_t i = 0; i < cfg.n_layers; ++i) zero_attention(m, i);
      break;
    }
    case FixtureKind::permuted_copy: {
      const std::size_t start = spec.copy_start.value_or(0);
      const std::size_t end = spec.copy_end.value_or(cfg.n_layers);
      if (end > cfg.n_layers || end < start + 2) {
        throw DomainError("permuted-copy window [" + std::to_string(start) + ", " +
                          std::to_string(end) + ") needs at least two of " +
                          std::to_string(cfg.n_layers) + " layers");
      }
      std::mt19937_64 rng(spec.seed ^ 0x9e3779b97f4a7c15ULL);
      for (std::size_t layer = start + 1; layer < end; ++layer) {
        Permutation pi = random_permutation(cfg.d_ff, rng());
        copy_permuted_ff(m, start, layer, pi);
        out.planted.push_back(std::move(pi));
      }
      for (std::size_t i = 0; i < cfg.n_layers; ++i) zero_attention(m, i);
      break;
    }
  }
  for (std::size_t layer : spec.zero_layers) {
    if (layer >= cfg.n_layers) throw DomainError("zero layer index out of range");
    zero_layer(m, layer);
  }
  return out;
}

Dataset sample_dataset(const TransformerModel& model, std::size_t n_sequences,
                       std::size_t seq_len, std::uint64_t seed) {
  const ModelConfig& cfg = model.config();
  if (seq_len == 0 || seq_len > cfg.max_seq_len) {
    throw DomainError("sequence length must lie in [1, max_seq_len]");
  }
  std::mt19937_64 rng(seed);
  std::uniform_int_distribution<std::uint32_t> uniform(0, std::uint32_t(cfg.vocab_size - 1));
  Dataset data;
  if (cfg.mode == ModelMode::classifier) {
    for (std::size_t s = 0; s < n_sequences; ++s) {
      TokenSequence seq(seq_len);
      for (auto& t : seq) t = uniform(rng);
      const Matrix logits = forward(model, seq);
      auto row = logits.row(0);
      data.labels.push_back(
          static_cast<std::uint32_t>(std::max_element(row.begin(), row.end()) - row.begin()));
      data.sequences.push_back(std::move(seq));
    }
    return data;
  }
  std::uniform_real_distribution<double> unit(0.0, 1.0);
  for (std::size_t s = 0; s < n_sequences; ++s) {
    TokenSequence seq{uniform(rng)};
    while (seq.size() < seq_len) {
      const Matrix logits = forward(model, seq);
      auto last = logits.row(logits.rows() - 1);
      const double top = *std::max_element(last.begin(), last.end());
      std::vector<double> weights(last.size());
      for (std::size_t v = 0; v < last.size(); ++v) weights[v] = std::exp(double(last[v]) - top);
      const double total = std::accumulate(weights.begin(), weights.end(), 0.0);
      double u = unit(rng) * total;
      std::size_t pick = 0;
      while (pick + 1 < weights.size() && u >= weights[pick]) u -= weights[pick++];
      seq.push_back(static_cast<std::uint32_t>(pick));
    }
    data.sequences.push_back(std::move(seq));
  }
  return data;
}

Dataset random_dataset(std::size_t vocab_size, std::size_t n_sequences, std::size_t seq_len,
                       std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  std::uniform_int_distribution<std::uint32_t> uniform(0, std::uint32_t(vocab_size - 1));
  Dataset data;
  for (std::size_t s = 0; s < n_sequences; ++s) {
    TokenSequence seq(seq_len);
    for (auto& t : seq) t = uniform(rng);
    data.sequences.push_back(std::move(seq));
  }
  return data;
}

}  // namespace ffmerge
