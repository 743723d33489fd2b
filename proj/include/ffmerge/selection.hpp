#pragma once

#include <cstddef>
#include <optional>
#include <string>
#include <vector>

#include "ffmerge/merging.hpp"
#include "ffmerge/model.hpp"

namespace ffmerge {

// Window starts for k-wide windows over n layers. The default bound stops one
// short of the last window (starts 0..n-1-k); include_final_window adds
// start n-k.
std::vector<std::size_t> enumerate_windows(std::size_t n_layers, std::size_t k,
                                           bool include_final_window = false);

struct WindowCandidate {
  std::size_t start = 0;
  std::size_t k = 0;
  double score = 0.0;
  EvalMetric metric;
};

struct SelectionOptions {
  AnchorPosition anchor = AnchorPosition::first;
  bool use_permutation = true;
  bool include_final_window = false;
  std::size_t jobs = 1;
};

struct SelectionReport {
  enum class Kind { merge, drop };

  Kind kind = Kind::merge;
  std::size_t k = 0;  // window width (layers merged or dropped)
  EvalMetric metric;
  AnchorPosition anchor = AnchorPosition::first;
  bool use_permutation = true;
  bool include_final_window = false;
  double reference_score = 0.0;  // the unmodified model
  std::vector<WindowCandidate> candidates;
  WindowCandidate best;
  std::optional<std::vector<WindowCandidate>> baseline;  // drop-window candidates
};

Json to_json(const SelectionReport& report);

struct SelectionResult {
  SelectionReport report;
  TransformerModel model;  // the best candidate
};

// Scores a merge of every window against `eval_data`, reusing the one
// activation set for all of them. Ties go to the smallest start.
SelectionResult select_best_window(const TransformerModel& model, const ActivationSet& acts,
                                   std::size_t k, const Dataset& eval_data, EvalMetric metric,
                                   const SelectionOptions& options = {});

// Removes layers [start, start + count) and renumbers the rest.
TransformerModel drop_layers(const TransformerModel& model, std::size_t start, std::size_t count);

// Sliding-window layer dropping; every start 0..n-count is a candidate.
SelectionResult select_best_drop(const TransformerModel& model, std::size_t count,
                                 const Dataset& eval_data, EvalMetric metric,
                                 std::size_t jobs = 1);

// Whole layers to drop for roughly the parameter saving of merging k FFs
// (rounded to nearest, at least 1).
std::size_t matched_drop_count(const ModelConfig& config, std::size_t k);

// Merge selection with the drop baseline at a matched budget attached.
SelectionResult compare_merge_and_drop(const TransformerModel& model, const ActivationSet& acts,
                                       std::size_t k, const Dataset& eval_data, EvalMetric metric,
                                       const SelectionOptions& options = {});

}  // namespace ffmerge
