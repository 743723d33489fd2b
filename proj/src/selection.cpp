#include "ffmerge/selection.hpp"

#include <atomic>
#include <cmath>
#include <exception>
#include <functional>
#include <mutex>
#include <thread>
#include <unordered_map>

#include "ffmerge/errors.hpp"

namespace ffmerge {

namespace {

// Evaluates score(i) for every i in [0, n), spreading work over `jobs` threads.
std::vector<double> score_all(std::size_t n, std::size_t jobs,
                              const std::function<double(std::size_t)>& score) {
  std::vector<double> scores(n);
  jobs = std::max<std::size_t>(1, std::min(jobs, n));
  if (jobs == 1) {
    for (std::size_t i = 0; i < n; ++i) scores[i] = score(i);
    return scores;
  }
  std::atomic<std::size_t> next{0};
  std::exception_ptr failure;
  std::mutex failure_mutex;
  std::vector<std::thread> workers;
  for (std::size_t w = 0; w < jobs; ++w) {
    workers.emplace_back([&] {
      for (std::size_t i = next++; i < n; i = next++) {
        try {
          scores[i] = score(i);
        } catch (...) {
          std::lock_guard lock(failure_mutex);
          if (!failure) failure = std::current_exception();
        }
      }
    });
  }
  for (auto& t : workers) t.join();
  if (failure) std::rethrow_exception(failure);
  return scores;
}

std::vector<WindowCandidate> make_candidates(const std::vector<std::size_t>& starts,
                                             const std::vector<double>& scores, std::size_t k,
                                             EvalMetric metric) {
  std::vector<WindowCandidate> out;
  for (std::size_t i = 0; i < starts.size(); ++i) {
    if (!std::isfinite(scores[i])) {
      throw DomainError("candidate at start " + std::to_string(starts[i]) +
                        " produced a non-finite score");
    }
    out.push_back({starts[i], k, scores[i], metric});
  }
  return out;
}

// First candidate wins ties; candidates are in ascending start order.
WindowCandidate pick_best(const std::vector<WindowCandidate>& candidates, EvalMetric metric) {
  WindowCandidate best = candidates.front();
  for (const auto& c : candidates) {
    const bool better =
        metric.higher_is_better() ? c.score > best.score : c.score < best.score;
    if (better) best = c;
  }
  return best;
}

Json candidate_json(const WindowCandidate& c) {
  Json j = Json::object();
  j["start"] = c.start;
  j["end"] = c.start + c.k;
  j["layers"] = std::to_string(c.start) + "-" + std::to_string(c.start + c.k - 1);
  j["score"] = c.score;
  return j;
}

// "layer{i}.rest" -> i
std::optional<std::size_t> layer_of(const std::string& name, std::string* rest = nullptr) {
  constexpr std::string_view prefix = "layer";
  if (name.rfind(prefix, 0) != 0) return std::nullopt;
  const auto dot = name.find('.', prefix.size());
  if (dot == std::string::npos || dot == prefix.size()) return std::nullopt;
  std::size_t index = 0;
  for (std::size_t i = prefix.size(); i < dot; ++i) {
    if (name[i] < '0' || name[i] > '9') return std::nullopt;
    index = index * 10 + std::size_t(name[i] - '0');
  }
  if (rest) *rest = name.substr(dot + 1);
  return index;
}

}  // namespace

std::vector<std::size_t> enumerate_windows(std::size_t n_layers, std::size_t k,
                                           bool include_final_window) {
  if (k < 2 || k > n_layers) {
    throw DomainError("window size k=" + std::to_string(k) + " must lie in [2, " +
                      std::to_string(n_layers) + "]");
  }
  const std::size_t count = n_layers - k + (include_final_window ? 1 : 0);
  std::vector<std::size_t> starts(count);
  for (std::size_t i = 0; i < count; ++i) starts[i] = i;
  return starts;
}

Json to_json(const SelectionReport& r) {
  Json j = Json::object();
  j["kind"] = r.kind == SelectionReport::Kind::merge ? "merge" : "drop";
  j["k"] = r.k;
  j["metric"] = to_string(r.metric.kind);
  j["higher_is_better"] = r.metric.higher_is_better();
  if (r.kind == SelectionReport::Kind::merge) {
    j["anchor"] = to_string(r.anchor);
    j["use_permutation"] = r.use_permutation;
  }
  j["include_final_window"] = r.include_final_window;
  j["reference_score"] = r.reference_score;
  Json candidates = Json::array();
  for (const auto& c : r.candidates) candidates.push_back(candidate_json(c));
  j["candidates"] = std::move(candidates);
  j["best"] = candidate_json(r.best);
  if (r.baseline) {
    Json baseline = Json::array();
    for (const auto& c : *r.baseline) baseline.push_back(candidate_json(c));
    j["baseline"] = std::move(baseline);
  } else {
    j["baseline"] = nullptr;
  }
  j["recovery_finetune"] = "not performed; would follow selection of the best candidate";
  return j;
}

SelectionResult select_best_window(const TransformerModel& model, const ActivationSet& acts,
                                   std::size_t k, const Dataset& eval_data, EvalMetric metric,
                                   const SelectionOptions& options) {
  const auto starts = enumerate_windows(model.config().n_layers, k, options.include_final_window);
  if (starts.empty()) {
    throw DomainError("no merge windows for k=" + std::to_string(k) + " over " +
                      std::to_string(model.config().n_layers) +
                      " layers without include_final_window");
  }
  auto spec_at = [&](std::size_t start) {
    return MergeSpec{start, k, options.anchor, options.use_permutation};
  };

  const auto scores = score_all(starts.size(), options.jobs, [&](std::size_t i) {
    const MergeResult merged = merge_window(model, spec_at(starts[i]), acts);
    return evaluate(merged.model, eval_data, metric);
  });

  SelectionReport report;
  report.kind = SelectionReport::Kind::merge;
  report.k = k;
  report.metric = metric;
  report.anchor = options.anchor;
  report.use_permutation = options.use_permutation;
  report.include_final_window = options.include_final_window;
  report.reference_score = evaluate(model, eval_data, metric);
  report.candidates = make_candidates(starts, scores, k, metric);
  report.best = pick_best(report.candidates, metric);

  TransformerModel best = merge_window(model, spec_at(report.best.start), acts).model;
  return {std::move(report), std::move(best)};
}

TransformerModel drop_layers(const TransformerModel& model, std::size_t start, std::size_t count) {
  const ModelConfig& cfg = model.config();
  if (start + count > cfg.n_layers) {
    throw DomainError("drop range [" + std::to_string(start) + ", " +
                      std::to_string(start + count) + ") exceeds " +
                      std::to_string(cfg.n_layers) + " layers");
  }
  if (count == 0) return model.deep_copy();
  if (count == cfg.n_layers) throw DomainError("cannot drop every layer");

  const ParameterStore& src = model.params();
  auto rename = [&](const std::string& name) -> std::optional<std::string> {
    std::string rest;
    const auto layer = layer_of(name, &rest);
    if (!layer) return name;
    if (*layer >= start && *layer < start + count) return std::nullopt;
    const std::size_t renumbered = *layer < start ? *layer : *layer - count;
    return layer_tensor_name(renumbered, rest);
  };

  std::vector<TensorEntry> entries;
  std::unordered_map<std::string, Matrix> payloads;
  std::unordered_map<std::string, std::string> promoted;  // dropped root -> surviving new name
  for (const auto& e : src.entries()) {
    const auto name = rename(e.name);
    if (!name) continue;
    TensorEntry out{*name, e.shape, std::nullopt};
    if (e.alias_of) {
      if (const auto target = rename(*e.alias_of)) {
        out.alias_of = *target;
      } else if (auto it = promoted.find(*e.alias_of); it != promoted.end()) {
        out.alias_of = it->second;
      } else {
        promoted.emplace(*e.alias_of, *name);
        payloads.emplace(*name, src.get(e.name));
      }
    } else {
      payloads.emplace(*name, src.get(e.name));
    }
    entries.push_back(std::move(out));
  }

  ModelConfig reduced = cfg;
  reduced.n_layers -= count;
  return TransformerModel(reduced, ParameterStore::assemble(entries, std::move(payloads)));
}

SelectionResult select_best_drop(const TransformerModel& model, std::size_t count,
                                 const Dataset& eval_data, EvalMetric metric, std::size_t jobs) {
  const std::size_t n = model.config().n_layers;
  if (count == 0 || count >= n) {
    throw DomainError("drop count must lie in [1, " + std::to_string(n - 1) + "], got " +
                      std::to_string(count));
  }
  std::vector<std::size_t> starts(n - count + 1);
  for (std::size_t i = 0; i < starts.size(); ++i) starts[i] = i;

  const auto scores = score_all(starts.size(), jobs, [&](std::size_t i) {
    return evaluate(drop_layers(model, starts[i], count), eval_data, metric);
  });

  SelectionReport report;
  report.kind = SelectionReport::Kind::drop;
  report.k = count;
  report.metric = metric;
  report.include_final_window = true;
  report.reference_score = evaluate(model, eval_data, metric);
  report.candidates = make_candidates(starts, scores, count, metric);
  report.best = pick_best(report.candidates, metric);
  TransformerModel best = drop_layers(model, report.best.start, count);
  return {std::move(report), std::move(best)};
}

std::size_t matched_drop_count(const ModelConfig& config, std::size_t k) {
  const double saved = double(k - 1) * double(config.ff_parameter_count());
  const auto layers =
      static_cast<std::size_t>(std::llround(saved / double(config.layer_parameter_count())));
  return std::clamp<std::size_t>(layers, 1, config.n_layers - 1);
}

SelectionResult compare_merge_and_drop(const TransformerModel& model, const ActivationSet& acts,
                                       std::size_t k, const Dataset& eval_data, EvalMetric metric,
                                       const SelectionOptions& options) {
  SelectionResult merged = select_best_window(model, acts, k, eval_data, metric, options);
  const std::size_t count = matched_drop_count(model.config(), k);
  const SelectionResult dropped = select_best_drop(model, count, eval_data, metric, options.jobs);
  merged.report.baseline = dropped.report.candidates;
  return merged;
}

}  // namespace ffmerge
