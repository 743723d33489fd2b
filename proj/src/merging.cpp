#include "ffmerge/merging.hpp"

#include "ffmerge/errors.hpp"

namespace ffmerge {

namespace {

// Running f64 sum of same-shape matrices.
class Accumulator {
 public:
  explicit Accumulator(const Matrix& first) : rows_(first.rows()), cols_(first.cols()) {
    sum_.assign(first.data().begin(), first.data().end());
  }

  void add(const Matrix& m) {
    if (m.rows() != rows_ || m.cols() != cols_) {
      throw DimensionError("merge members disagree in shape: " + m.shape_string() + " vs " +
                           std::to_string(rows_) + "x" + std::to_string(cols_));
    }
    auto d = m.data();
    for (std::size_t i = 0; i < sum_.size(); ++i) sum_[i] += d[i];
  }

  Matrix mean(std::size_t k) const {
    Matrix out(rows_, cols_);
    auto o = out.data();
    for (std::size_t i = 0; i < sum_.size(); ++i) o[i] = static_cast<float>(sum_[i] / double(k));
    return out;
  }

 private:
  std::size_t rows_, cols_;
  std::vector<double> sum_;
};

std::vector<float> as_vector(const Matrix& m) { return {m.data().begin(), m.data().end()}; }

template <typename Params>
void check_counts(const std::vector<Params>& others, const std::vector<Permutation>& perms) {
  if (others.empty()) throw DomainError("merge needs at least one non-anchor member");
  if (others.size() != perms.size()) {
    throw DomainError("merge got " + std::to_string(others.size()) + " members but " +
                      std::to_string(perms.size()) + " permutations");
  }
}

}  // namespace

const char* to_string(AnchorPosition anchor) {
  switch (anchor) {
    case AnchorPosition::first: return "first";
    case AnchorPosition::middle: return "middle";
    case AnchorPosition::last: return "last";
  }
  return "?";
}

AnchorPosition anchor_from_string(const std::string& s) {
  if (s == "first") return AnchorPosition::first;
  if (s == "middle") return AnchorPosition::middle;
  if (s == "last") return AnchorPosition::last;
  throw ValidationError("unknown anchor position '" + s + "'");
}

std::size_t MergeSpec::anchor_layer() const {
  switch (anchor) {
    case AnchorPosition::first: return start_layer;
    case AnchorPosition::middle: return start_layer + (k - 1) / 2;
    case AnchorPosition::last: return start_layer + k - 1;
  }
  return start_layer;
}

void MergeSpec::validate(std::size_t n_layers) const {
  if (k < 2) throw DomainError("merge window needs k >= 2, got " + std::to_string(k));
  if (start_layer + k > n_layers) {
    throw DomainError("merge window [" + std::to_string(start_layer) + ", " +
                      std::to_string(start_layer + k) + ") exceeds " + std::to_string(n_layers) +
                      " layers");
  }
}

FFParams merge_ff(const FFParams& anchor, const std::vector<FFParams>& others,
                  const std::vector<Permutation>& perms) {
  check_counts(others, perms);
  anchor.check_shapes();
  const std::size_t k = others.size() + 1;

  Accumulator w_in(anchor.w_in), w_out(anchor.w_out);
  Accumulator b_in(Matrix::row_vector(anchor.b_in)), b_out(Matrix::row_vector(anchor.b_out));
  for (std::size_t i = 0; i < others.size(); ++i) {
    const FFParams aligned = apply_permutation(others[i], perms[i]);
    w_in.add(aligned.w_in);
    b_in.add(Matrix::row_vector(aligned.b_in));
    w_out.add(aligned.w_out);
    b_out.add(Matrix::row_vector(others[i].b_out));
  }
  return {w_in.mean(k), as_vector(b_in.mean(k)), w_out.mean(k), as_vector(b_out.mean(k))};
}

SwigluFFParams merge_swiglu(const SwigluFFParams& anchor, const std::vector<SwigluFFParams>& others,
                            const std::vector<Permutation>& perms) {
  check_counts(others, perms);
  anchor.check_shapes();
  const std::size_t k = others.size() + 1;

  Accumulator w_up(anchor.w_up), v_gate(anchor.v_gate), w_down(anchor.w_down);
  for (std::size_t i = 0; i < others.size(); ++i) {
    const SwigluFFParams aligned = apply_permutation_swiglu(others[i], perms[i]);
    w_up.add(aligned.w_up);
    v_gate.add(aligned.v_gate);
    w_down.add(aligned.w_down);
  }
  return {w_up.mean(k), v_gate.mean(k), w_down.mean(k)};
}

MergeResult merge_window(const TransformerModel& model, const MergeSpec& spec,
                         const ActivationSet& acts) {
  const ModelConfig& cfg = model.config();
  spec.validate(cfg.n_layers);
  if (acts.tap != Tap::ff_pre_act) {
    throw DomainError(std::string("merging needs ff_pre_act activations, got ") +
                      to_string(acts.tap));
  }
  if (acts.width != cfg.d_ff) {
    throw DimensionError("activation width " + std::to_string(acts.width) +
                         " does not match d_ff " + std::to_string(cfg.d_ff));
  }

  const std::size_t anchor = spec.anchor_layer();
  const Matrix& anchor_acts = acts.layer(anchor);

  MergeDiagnostics diag;
  diag.anchor_layer = anchor;
  std::vector<Permutation> perms;
  for (std::size_t layer = spec.start_layer; layer < spec.start_layer + spec.k; ++layer) {
    if (layer == anchor) continue;
    const CorrelationMatrix corr = cross_correlation(anchor_acts, acts.layer(layer));
    Permutation pi =
        spec.use_permutation ? solve_assignment(corr) : Permutation::identity(cfg.d_ff);
    const double mean = assignment_total(corr.c, pi) / double(cfg.d_ff);
    diag.pairs.push_back({layer, pi, mean});
    perms.push_back(std::move(pi));
  }

  TransformerModel merged = model.deep_copy();
  ParameterStore& store = merged.mutable_params();
  auto install = [&](const char* suffix, Matrix value) {
    const std::string root = layer_tensor_name(anchor, suffix);
    store.replace(root, std::move(value));
    for (std::size_t layer = spec.start_layer; layer < spec.start_layer + spec.k; ++layer)
      if (layer != anchor) store.tie(layer_tensor_name(layer, suffix), root);
  };

  if (cfg.ff_kind == FFKind::swiglu) {
    std::vector<SwigluFFParams> others;
    for (const auto& p : diag.pairs) others.push_back(model.swiglu_params(p.layer));
    SwigluFFParams avg = merge_swiglu(model.swiglu_params(anchor), others, perms);
    install("ff.w_up", std::move(avg.w_up));
    install("ff.v_gate", std::move(avg.v_gate));
    install("ff.w_down", std::move(avg.w_down));
  } else {
    std::vector<FFParams> others;
    for (const auto& p : diag.pairs) others.push_back(model.ff_params(p.layer));
    FFParams avg = merge_ff(model.ff_params(anchor), others, perms);
    install("ff.w_in", std::move(avg.w_in));
    install("ff.w_out", std::move(avg.w_out));
    if (cfg.has_ff_biases) {
      install("ff.b_in", Matrix::row_vector(avg.b_in));
      install("ff.b_out", Matrix::row_vector(avg.b_out));
    }
  }
  return {std::move(merged), std::move(diag)};
}

}  // namespace ffmerge
