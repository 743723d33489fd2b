#pragma once

#include <cstddef>
#include <string>
#include <vector>

#include "ffmerge/alignment.hpp"
#include "ffmerge/model.hpp"

namespace ffmerge {

enum class AnchorPosition { first, middle, last };

const char* to_string(AnchorPosition anchor);
AnchorPosition anchor_from_string(const std::string& s);

// A window of k adjacent FF sublayers [start_layer, start_layer + k).
struct MergeSpec {
  std::size_t start_layer = 0;
  std::size_t k = 2;
  AnchorPosition anchor = AnchorPosition::first;
  bool use_permutation = true;  // false: plain averaging

  // Global index of the anchor; middle is start + floor((k-1)/2).
  std::size_t anchor_layer() const;
  void validate(std::size_t n_layers) const;
};

// Uniform average after aligning each non-anchor member with P_i:
//   W_in*  = (W_in,a  + Σ P_i W_in,i)   / k
//   b_in*  = (b_in,a  + Σ P_i b_in,i)   / k
//   W_out* = (W_out,a + Σ W_out,i P_iᵀ) / k
//   b_out* = (Σ over all k members of b_out) / k     (no permutation)
FFParams merge_ff(const FFParams& anchor, const std::vector<FFParams>& others,
                  const std::vector<Permutation>& perms);

// Same scheme for gated FFs: W_up and V_gate permuted on the left, W_down on
// the right.
SwigluFFParams merge_swiglu(const SwigluFFParams& anchor, const std::vector<SwigluFFParams>& others,
                            const std::vector<Permutation>& perms);

struct PairDiagnostic {
  std::size_t layer = 0;
  Permutation permutation;
  double mean_correlation = 0.0;  // Σ_j C(j, π(j)) / d_ff under the applied π
};

struct MergeDiagnostics {
  std::size_t anchor_layer = 0;
  std::vector<PairDiagnostic> pairs;  // one per non-anchor member, in layer order
};

struct MergeResult {
  TransformerModel model;
  MergeDiagnostics diagnostics;
};

// Aligns every non-anchor member to the anchor using `acts` (ff_pre_act tap),
// averages, stores the result under the anchor's tensor names and turns the
// other members' FF tensors into aliases of them.
MergeResult merge_window(const TransformerModel& model, const MergeSpec& spec,
                         const ActivationSet& acts);

}  // namespace ffmerge
