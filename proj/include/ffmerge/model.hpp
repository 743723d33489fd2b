#pragma once

// Desk-scale transformer used for activation capture and candidate scoring.
//
// Weights are stored output-major (out × in) and applied as y = W·x + b.
// Layer norm uses eps = 1e-5. GELU is the tanh approximation
//   gelu(z) = 0.5·z·(1 + tanh(sqrt(2/pi)·(z + 0.044715·z³)))
// and Swish₁(z) = z·sigmoid(z).
//
// Pre-LN:  h += attn(ln1(h)); h += ff(ln2(h)); ... ; h = final_ln(h)
// Post-LN: h = ln1(h + attn(h)); h = ln2(h + ff(h))      (no final_ln)

#include <cstdint>
#include <filesystem>
#include <functional>
#include <map>
#include <span>
#include <string>
#include <vector>

#include "ffmerge/checkpoint.hpp"
#include "ffmerge/tensor.hpp"

namespace ffmerge {

enum class ModelMode { lm, classifier };
enum class NormPlacement { pre_ln, post_ln };
enum class FFKind { relu, gelu, swiglu };
enum class Pooling { mean, cls };

inline constexpr std::uint32_t kDefaultSeparator = 0xFFFFFFFFu;

struct ModelConfig {
  ModelMode mode = ModelMode::lm;
  std::size_t n_layers = 0;
  std::size_t d_model = 0;
  std::size_t d_ff = 0;
  std::size_t n_heads = 1;
  std::size_t vocab_size = 0;
  std::size_t n_classes = 0;  // classifier only
  std::size_t max_seq_len = 0;
  NormPlacement norm_placement = NormPlacement::pre_ln;
  FFKind ff_kind = FFKind::gelu;
  bool has_ff_biases = true;
  Pooling pooling = Pooling::mean;
  std::uint32_t separator_id = kDefaultSeparator;

  // Throws ValidationError.
  void validate() const;

  std::size_t output_width() const { return mode == ModelMode::lm ? vocab_size : n_classes; }
  std::size_t ff_parameter_count() const;
  std::size_t attention_parameter_count() const;
  std::size_t layer_parameter_count() const;

  bool operator==(const ModelConfig&) const = default;
};

Json to_json(const ModelConfig& config);
ModelConfig config_from_json(const Json& j);

const char* to_string(ModelMode v);
const char* to_string(NormPlacement v);
const char* to_string(FFKind v);
const char* to_string(Pooling v);

// Canonical tensor names.
std::string layer_tensor_name(std::size_t layer, const std::string& suffix);
std::vector<std::string> ff_tensor_suffixes(const ModelConfig& config);
std::vector<std::string> ff_tensor_names(const ModelConfig& config, std::size_t layer);
std::vector<std::string> layer_tensor_names(const ModelConfig& config, std::size_t layer);

struct FFParams {
  Matrix w_in;                // d_ff × d_model
  std::vector<float> b_in;    // d_ff
  Matrix w_out;               // d_model × d_ff
  std::vector<float> b_out;   // d_model

  void check_shapes() const;
};

struct SwigluFFParams {
  Matrix w_up;    // d_ff × d_model
  Matrix v_gate;  // d_ff × d_model
  Matrix w_down;  // d_model × d_ff

  void check_shapes() const;
};

enum class Activation { relu, gelu };

float gelu(float z);
float swish(float z);

struct FFOutput {
  std::vector<float> pre_act;  // W_in·x + b_in, or the gated product for SwiGLU
  std::vector<float> y;
};

FFOutput ff_forward(const FFParams& params, std::span<const float> x, Activation activation);
FFOutput swiglu_forward(const SwigluFFParams& params, std::span<const float> x);

class TransformerModel {
 public:
  // Checks that every canonical tensor exists with the right shape.
  TransformerModel(ModelConfig config, ParameterStore params);

  const ModelConfig& config() const noexcept { return config_; }
  const ParameterStore& params() const noexcept { return params_; }
  ParameterStore& mutable_params() noexcept { return params_; }

  TransformerModel deep_copy() const;

  FFParams ff_params(std::size_t layer) const;
  SwigluFFParams swiglu_params(std::size_t layer) const;

 private:
  ModelConfig config_;
  ParameterStore params_;
};

void save_model(const std::filesystem::path& path, const TransformerModel& model);
TransformerModel load_model(const std::filesystem::path& path);

enum class Tap { ff_pre_act, ff_out, attn_out };
const char* to_string(Tap tap);
Tap tap_from_string(const std::string& s);

// Called once per layer and tap with a (seq_len × width) matrix.
using TapObserver = std::function<void(std::size_t layer, Tap tap, const Matrix& features)>;

// LM mode: (seq_len × vocab_size) with causal attention.
// Classifier mode: (1 × n_classes) from pooled bidirectional states.
Matrix forward(const TransformerModel& model, std::span<const std::uint32_t> tokens,
               const TapObserver& observer = {});

using TokenSequence = std::vector<std::uint32_t>;

struct Dataset {
  std::vector<TokenSequence> sequences;
  std::vector<std::uint32_t> labels;  // one per sequence in classifier mode
};

struct ActivationSet {
  Tap tap = Tap::ff_pre_act;
  std::map<std::size_t, Matrix> per_layer;
  std::size_t width = 0;
  std::size_t sample_count = 0;

  const Matrix& layer(std::size_t index) const;
};

ActivationSet capture_activations(const TransformerModel& model, const Dataset& dataset, Tap tap,
                                  std::size_t max_samples);

// Number of capture_activations calls made by this process.
std::uint64_t capture_count() noexcept;

void write_activations(const std::filesystem::path& path, const ActivationSet& acts);
ActivationSet read_activations(const std::filesystem::path& path);

enum class MetricKind { cross_entropy, perplexity, accuracy };

struct EvalMetric {
  MetricKind kind = MetricKind::cross_entropy;
  bool higher_is_better() const noexcept { return kind == MetricKind::accuracy; }
};

const char* to_string(MetricKind kind);
EvalMetric metric_from_string(const std::string& s);

// Cross-entropy in nats averaged over predicted tokens (LM) or sequences
// (classifier); perplexity is its exp; accuracy is top-1.
double evaluate(const TransformerModel& model, const Dataset& dataset, EvalMetric metric);

}  // namespace ffmerge
