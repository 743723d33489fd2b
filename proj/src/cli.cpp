#include "ffmerge/cli.hpp"

#include <CLI11.hpp>

#include <cstdio>
#include <ostream>

#include "ffmerge/analysis.hpp"
#include "ffmerge/dataset.hpp"
#include "ffmerge/errors.hpp"
#include "ffmerge/fixtures.hpp"
#include "ffmerge/merging.hpp"
#include "ffmerge/selection.hpp"

namespace ffmerge::cli {

namespace {

struct Window {
  std::size_t start = 0;
  std::size_t end = 0;
};

Window parse_window(const std::string& text) {
  const auto colon = text.find(':');
  auto number = [&](const std::string& s) -> std::size_t {
    if (s.empty() || s.find_first_not_of("0123456789") != std::string::npos) {
      throw ValidationError("window '" + text + "' must look like START:END");
    }
    return std::stoul(s);
  };
  if (colon == std::string::npos) throw ValidationError("window '" + text + "' must look like START:END");
  Window w{number(text.substr(0, colon)), number(text.substr(colon + 1))};
  if (w.end < w.start + 2) {
    throw ValidationError("window '" + text + "' must cover at least two layers (END is exclusive)");
  }
  return w;
}

std::string inclusive_range(std::size_t start, std::size_t k) {
  return std::to_string(start) + "-" + std::to_string(start + k - 1);
}

std::string fixed(double v, int digits = 6) {
  char buf[64];
  std::snprintf(buf, sizeof buf, "%.*f", digits, v);
  return buf;
}

void write_text(const std::string& path, const std::string& text) {
  write_file_atomic(path, std::vector<char>(text.begin(), text.end()));
}

Dataset load_data(const ModelConfig& cfg, const std::string& tokens, const std::string& labels) {
  return load_dataset(cfg, tokens,
                      labels.empty() ? std::nullopt
                                     : std::optional<std::filesystem::path>(labels));
}

const std::map<std::string, std::string> kTapNames{
    {"ff-pre-act", "ff_pre_act"}, {"ff-out", "ff_out"}, {"attn-out", "attn_out"}};
const std::map<std::string, std::string> kMetricNames{
    {"xent", "xent"}, {"ppl", "ppl"}, {"acc", "acc"}};
const std::map<std::string, std::string> kAnchorNames{
    {"first", "first"}, {"middle", "middle"}, {"last", "last"}};

}  // namespace

int run(const std::vector<std::string>& args, std::ostream& out, std::ostream& err) {
  CLI::App app{"Feed-forward merge and tie toolkit for transformer checkpoints", "ffmerge"};
  app.require_subcommand(1);

  // capture
  struct {
    std::string model, data, labels, tap = "ff-pre-act", out;
    std::size_t max_samples = 0;
  } cap;
  auto* capture = app.add_subcommand("capture", "Capture per-layer activations at a tap point");
  capture->add_option("--model", cap.model, "Model checkpoint")->required();
  capture->add_option("--data", cap.data, "Token file")->required();
  capture->add_option("--labels", cap.labels, "Label file (classifier models)");
  capture->add_option("--tap", cap.tap, "ff-pre-act|ff-out|attn-out")
      ->transform(CLI::IsMember(kTapNames));
  capture->add_option("--max-samples", cap.max_samples, "Rows to keep")
      ->required()
      ->check(CLI::PositiveNumber);
  capture->add_option("--out", cap.out, "Activation file to write")->required();

  // merge
  struct {
    std::string model, acts, window, anchor = "first", out;
    bool no_permute = false;
  } mrg;
  auto* merge = app.add_subcommand(
      "merge", "Align, average and tie one window of FF sublayers (window START:END, END exclusive)");
  merge->add_option("--model", mrg.model)->required();
  merge->add_option("--acts", mrg.acts, "ff-pre-act activations of the model")->required();
  merge->add_option("--window", mrg.window, "START:END, END exclusive (k = END-START)")->required();
  merge->add_option("--anchor", mrg.anchor)->transform(CLI::IsMember(kAnchorNames));
  merge->add_flag("--no-permute", mrg.no_permute, "Plain averaging without alignment");
  merge->add_option("--out", mrg.out)->required();

  // select
  struct {
    std::string model, acts, eval_data, eval_labels, metric, anchor = "first", out, report;
    std::size_t k = 0, jobs = 1;
    bool no_permute = false, include_final = false, baseline = false;
  } sel;
  auto* select = app.add_subcommand("select", "Score every merge window and keep the best");
  select->add_option("--model", sel.model)->required();
  select->add_option("--acts", sel.acts)->required();
  select->add_option("--k", sel.k, "FF sublayers per window")->required();
  select->add_option("--eval-data", sel.eval_data)->required();
  select->add_option("--eval-labels", sel.eval_labels);
  select->add_option("--metric", sel.metric)->required()->transform(CLI::IsMember(kMetricNames));
  select->add_option("--anchor", sel.anchor)->transform(CLI::IsMember(kAnchorNames));
  select->add_flag("--no-permute", sel.no_permute);
  select->add_flag("--include-final-window", sel.include_final,
                   "Also score the window ending at the last layer");
  select->add_option("--jobs", sel.jobs)->check(CLI::PositiveNumber);
  select->add_flag("--baseline", sel.baseline,
                   "Attach layer-drop candidates at a matched parameter budget");
  select->add_option("--out", sel.out)->required();
  select->add_option("--report", sel.report)->required();

  // drop
  struct {
    std::string model, eval_data, eval_labels, metric, out, report;
    std::size_t count = 0, jobs = 1;
  } drp;
  auto* drop = app.add_subcommand("drop", "Layer-dropping baseline over a sliding window");
  drop->add_option("--model", drp.model)->required();
  drop->add_option("--count", drp.count, "Adjacent layers to drop")->required();
  drop->add_option("--eval-data", drp.eval_data)->required();
  drop->add_option("--eval-labels", drp.eval_labels);
  drop->add_option("--metric", drp.metric)->required()->transform(CLI::IsMember(kMetricNames));
  drop->add_option("--jobs", drp.jobs)->check(CLI::PositiveNumber);
  drop->add_option("--out", drp.out)->required();
  drop->add_option("--report", drp.report)->required();

  // eval
  struct {
    std::string model, data, labels, metric;
  } ev;
  auto* eval = app.add_subcommand("eval", "Score a model on a dataset");
  eval->add_option("--model", ev.model)->required();
  eval->add_option("--data", ev.data)->required();
  eval->add_option("--labels", ev.labels);
  eval->add_option("--metric", ev.metric)->required()->transform(CLI::IsMember(kMetricNames));

  // cka
  struct {
    std::string acts, out, format = "csv";
  } ck;
  auto* cka = app.add_subcommand("cka", "Pairwise linear CKA between layers of an activation file");
  cka->add_option("--acts", ck.acts)->required();
  cka->add_option("--out", ck.out)->required();
  cka->add_option("--format", ck.format)->check(CLI::IsMember({"csv", "json"}));

  // info
  std::string info_model;
  auto* info = app.add_subcommand("info", "Describe a checkpoint and its weight tying");
  info->add_option("--model", info_model)->required();

  // gen-fixture
  struct {
    std::string kind, ff_kind = "gelu", out, copy_window, norm = "pre-ln", pooling = "mean";
    std::size_t layers = 0, d_model = 0, d_ff = 0, heads = 0, vocab = 32, max_seq_len = 32,
                classes = 0;
    std::uint64_t seed = 0;
    std::vector<std::size_t> zero_layers;
  } fx;
  auto* gen = app.add_subcommand("gen-fixture", "Write a seeded test model");
  gen->add_option("--kind", fx.kind)
      ->required()
      ->check(CLI::IsMember({"duplicate", "permuted-copy", "random"}));
  gen->add_option("--layers", fx.layers)->required()->check(CLI::PositiveNumber);
  gen->add_option("--d-model", fx.d_model)->required()->check(CLI::PositiveNumber);
  gen->add_option("--d-ff", fx.d_ff)->required()->check(CLI::PositiveNumber);
  gen->add_option("--ff-kind", fx.ff_kind)->check(CLI::IsMember({"relu", "gelu", "swiglu"}));
  gen->add_option("--seed", fx.seed)->required();
  gen->add_option("--out", fx.out)->required();
  gen->add_option("--copy-window", fx.copy_window,
                  "permuted-copy: START:END of the layers sharing one FF (default all)");
  gen->add_option("--zero-layer", fx.zero_layers, "Zero every weight of this layer (repeatable)");
  gen->add_option("--norm", fx.norm)->check(CLI::IsMember({"pre-ln", "post-ln"}));
  gen->add_option("--heads", fx.heads);
  gen->add_option("--vocab", fx.vocab)->check(CLI::PositiveNumber);
  gen->add_option("--max-seq-len", fx.max_seq_len)->check(CLI::PositiveNumber);
  gen->add_option("--classes", fx.classes, "Build a sequence classifier with this many classes")
      ->check(CLI::PositiveNumber);
  gen->add_option("--pooling", fx.pooling, "Classifier pooling")->check(CLI::IsMember({"mean", "cls"}));

  // gen-data
  struct {
    std::string model, out, labels_out;
    std::size_t sequences = 0, seq_len = 0;
    std::uint64_t seed = 0;
  } gd;
  auto* gendata = app.add_subcommand("gen-data", "Sample a token dataset from a model");
  gendata->add_option("--model", gd.model)->required();
  gendata->add_option("--sequences", gd.sequences)->required()->check(CLI::PositiveNumber);
  gendata->add_option("--seq-len", gd.seq_len)->required()->check(CLI::PositiveNumber);
  gendata->add_option("--seed", gd.seed)->required();
  gendata->add_option("--out", gd.out)->required();
  gendata->add_option("--labels-out", gd.labels_out, "Label file (classifier models)");

  std::vector<std::string> reversed(args.rbegin(), args.rend());
  try {
    app.parse(reversed);
  } catch (const CLI::CallForHelp&) {
    out << app.help();
    return kExitOk;
  } catch (const CLI::CallForAllHelp&) {
    out << app.help("", CLI::AppFormatMode::All);
    return kExitOk;
  } catch (const CLI::ParseError& e) {
    err << "error: " << e.what() << "\n\n" << app.help();
    return kExitValidation;
  }

  try {
    if (*capture) {
      const TransformerModel model = load_model(cap.model);
      const Dataset data = load_data(model.config(), cap.data, cap.labels);
      const ActivationSet acts =
          capture_activations(model, data, tap_from_string(cap.tap), cap.max_samples);
      write_activations(cap.out, acts);
      out << "captured " << acts.sample_count << " rows x " << acts.width << " at "
          << to_string(acts.tap) << " for " << acts.per_layer.size() << " layers\n";
    } else if (*merge) {
      const Window w = parse_window(mrg.window);
      const TransformerModel model = load_model(mrg.model);
      const ActivationSet acts = read_activations(mrg.acts);
      const MergeSpec spec{w.start, w.end - w.start, anchor_from_string(mrg.anchor),
                           !mrg.no_permute};
      const MergeResult result = merge_window(model, spec, acts);
      save_model(mrg.out, result.model);
      out << "merged layers " << inclusive_range(spec.start_layer, spec.k) << " (window "
          << w.start << ":" << w.end << "), anchor layer " << result.diagnostics.anchor_layer
          << (spec.use_permutation ? "" : ", no permutation") << "\n";
      for (const auto& pair : result.diagnostics.pairs)
        out << "  layer " << pair.layer << ": mean matched correlation "
            << fixed(pair.mean_correlation) << "\n";
    } else if (*select) {
      const TransformerModel model = load_model(sel.model);
      const ActivationSet acts = read_activations(sel.acts);
      const Dataset data = load_data(model.config(), sel.eval_data, sel.eval_labels);
      const SelectionOptions options{anchor_from_string(sel.anchor), !sel.no_permute,
                                     sel.include_final, sel.jobs};
      const EvalMetric metric = metric_from_string(sel.metric);
      const SelectionResult result =
          sel.baseline ? compare_merge_and_drop(model, acts, sel.k, data, metric, options)
                       : select_best_window(model, acts, sel.k, data, metric, options);
      save_model(sel.out, result.model);
      write_text(sel.report, to_json(result.report).dump(2) + "\n");
      out << "scored " << result.report.candidates.size() << " windows; best layers "
          << inclusive_range(result.report.best.start, sel.k) << " (window "
          << result.report.best.start << ":" << result.report.best.start + sel.k << ") "
          << to_string(metric.kind) << " " << fixed(result.report.best.score) << " vs unmerged "
          << fixed(result.report.reference_score) << "\n";
    } else if (*drop) {
      const TransformerModel model = load_model(drp.model);
      const Dataset data = load_data(model.config(), drp.eval_data, drp.eval_labels);
      const EvalMetric metric = metric_from_string(drp.metric);
      const SelectionResult result = select_best_drop(model, drp.count, data, metric, drp.jobs);
      save_model(drp.out, result.model);
      write_text(drp.report, to_json(result.report).dump(2) + "\n");
      out << "scored " << result.report.candidates.size() << " drop windows; best drops layers "
          << inclusive_range(result.report.best.start, drp.count) << " "
          << to_string(metric.kind) << " " << fixed(result.report.best.score) << " vs original "
          << fixed(result.report.reference_score) << "\n";
    } else if (*eval) {
      const TransformerModel model = load_model(ev.model);
      const Dataset data = load_data(model.config(), ev.data, ev.labels);
      const EvalMetric metric = metric_from_string(ev.metric);
      out << to_string(metric.kind) << " " << fixed(evaluate(model, data, metric), 9) << "\n";
    } else if (*cka) {
      const CkaMatrix m = cka_matrix(read_activations(ck.acts));
      write_text(ck.out, ck.format == "json" ? to_json(m).dump() + "\n" : to_csv(m));
      out << "cka over " << m.layers.size() << " layers at " << to_string(m.tap) << " from "
          << m.sample_count << " samples\n";
    } else if (*info) {
      const TransformerModel model = load_model(info_model);
      const ModelConfig& c = model.config();
      const TieReport tie = tie_report(model.params());
      std::size_t aliases = 0;
      for (const auto& e : model.params().entries()) aliases += e.alias_of.has_value();
      out << "layers: " << c.n_layers << "\n"
          << "mode: " << to_string(c.mode) << "\n"
          << "ff_kind: " << to_string(c.ff_kind) << "\n"
          << "norm_placement: " << to_string(c.norm_placement) << "\n"
          << "d_model: " << c.d_model << "\n"
          << "d_ff: " << c.d_ff << "\n"
          << "n_heads: " << c.n_heads << "\n"
          << "ff_params_per_layer: " << c.ff_parameter_count() << "\n"
          << "alias_entries: " << aliases << "\n"
          << "total_parameters: " << tie.total_parameters << "\n"
          << "unique_parameters: " << tie.unique_parameters << "\n"
          << "reduction_ratio: " << fixed(tie.reduction_ratio) << "\n";
    } else if (*gen) {
      FixtureSpec spec;
      spec.kind = fixture_kind_from_string(fx.kind);
      spec.config = fixture_config(fx.layers, fx.d_model, fx.d_ff,
                                   fx.ff_kind == "relu"     ? FFKind::relu
                                   : fx.ff_kind == "swiglu" ? FFKind::swiglu
                                                            : FFKind::gelu);
      spec.config.norm_placement =
          fx.norm == "post-ln" ? NormPlacement::post_ln : NormPlacement::pre_ln;
      if (fx.heads) spec.config.n_heads = fx.heads;
      spec.config.vocab_size = fx.vocab;
      spec.config.max_seq_len = fx.max_seq_len;
      if (fx.classes) {
        spec.config.mode = ModelMode::classifier;
        spec.config.n_classes = fx.classes;
        spec.config.pooling = fx.pooling == "cls" ? Pooling::cls : Pooling::mean;
      }
      spec.seed = fx.seed;
      spec.zero_layers = fx.zero_layers;
      if (!fx.copy_window.empty()) {
        if (spec.kind != FixtureKind::permuted_copy) {
          throw ValidationError("--copy-window applies to --kind permuted-copy only");
        }
        const Window w = parse_window(fx.copy_window);
        spec.copy_start = w.start;
        spec.copy_end = w.end;
      }
      const Fixture fixture = build_fixture(spec);
      save_model(fx.out, fixture.model);
      out << "wrote " << to_string(spec.kind) << " fixture with " << fx.layers << " layers\n";
    } else if (*gendata) {
      const TransformerModel model = load_model(gd.model);
      const ModelConfig& c = model.config();
      if (c.mode == ModelMode::classifier && gd.labels_out.empty()) {
        throw ValidationError("classifier models need --labels-out");
      }
      const Dataset data = sample_dataset(model, gd.sequences, gd.seq_len, gd.seed);
      write_token_file(gd.out, join_sequences(data.sequences, c.separator_id));
      if (!gd.labels_out.empty()) write_label_file(gd.labels_out, data.labels);
      out << "wrote " << data.sequences.size() << " sequences of " << gd.seq_len << " tokens\n";
    }
  } catch (const IoError& e) {
    err << "error: " << e.what() << "\n";
    return kExitIo;
  } catch (const ParseError& e) {
    err << "error: " << e.what() << "\n";
    return kExitIo;
  } catch (const std::exception& e) {
    err << "error: " << e.what() << "\n";
    return kExitValidation;
  }
  return kExitOk;
}

}  // namespace ffmerge::cli
