#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <filesystem>
#include <fstream>
#include <sstream>

#include "ffmerge/analysis.hpp"
#include "ffmerge/checkpoint.hpp"
#include "ffmerge/cli.hpp"
#include "ffmerge/model.hpp"
#include "ffmerge/selection.hpp"

using namespace ffmerge;
namespace fs = std::filesystem;

namespace {

struct Run {
  int code;
  std::string out;
  std::string err;
};

Run ffm(const std::vector<std::string>& args) {
  std::ostringstream out, err;
  const int code = cli::run(args, out, err);
  return {code, out.str(), err.str()};
}

class Workdir {
 public:
  Workdir() : path_(fs::temp_directory_path() / ("ffmerge_cli_" + std::to_string(::getpid()))) {
    fs::remove_all(path_);
    fs::create_directories(path_);
  }
  ~Workdir() { fs::remove_all(path_); }
  std::string operator/(const std::string& name) const { return (path_ / name).string(); }

 private:
  fs::path path_;
};

std::string slurp(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  return {std::istreambuf_iterator<char>(in), {}};
}

// 6-layer model whose layers 2..4 share one FF up to permutation, plus data
// and ff_pre_act activations.
void build_pipeline(const Workdir& w) {
  REQUIRE(ffm({"gen-fixture", "--kind", "permuted-copy", "--layers", "6", "--d-model", "16", "--d-ff",
               "32", "--seed", "7", "--copy-window", "2:5", "--out", w / "model.ffmc"})
              .code == 0);
  REQUIRE(ffm({"gen-data", "--model", w / "model.ffmc", "--sequences", "24", "--seq-len", "24",
               "--seed", "1", "--out", w / "train.toks"})
              .code == 0);
  REQUIRE(ffm({"gen-data", "--model", w / "model.ffmc", "--sequences", "8", "--seq-len", "24",
               "--seed", "2", "--out", w / "eval.toks"})
              .code == 0);
  REQUIRE(ffm({"capture", "--model", w / "model.ffmc", "--data", w / "train.toks", "--tap",
               "ff-pre-act", "--max-samples", "400", "--out", w / "acts.ffmc"})
              .code == 0);
}

}  // namespace

TEST_CASE("help and usage errors") {
  CHECK(ffm({"--help"}).code == 0);
  const Run unknown = ffm({"info", "--model", "x", "--bogus"});
  CHECK(unknown.code == cli::kExitValidation);
  CHECK_FALSE(unknown.err.empty());
  CHECK(ffm({"merge"}).code == cli::kExitValidation);
  CHECK(ffm({"capture", "--model", "m", "--data", "d", "--tap", "nowhere", "--max-samples", "5",
             "--out", "o"})
            .code == cli::kExitValidation);
}

TEST_CASE("missing and corrupt files exit with the I/O code") {
  Workdir w;
  const Run missing = ffm({"info", "--model", w / "absent.ffmc"});
  CHECK(missing.code == cli::kExitIo);
  CHECK(missing.err.find("absent.ffmc") != std::string::npos);
  std::ofstream(w / "junk.ffmc") << "not a checkpoint";
  CHECK(ffm({"info", "--model", w / "junk.ffmc"}).code == cli::kExitIo);
}

TEST_CASE("info reports tying") {
  Workdir w;
  build_pipeline(w);
  const Run r = ffm({"info", "--model", w / "model.ffmc"});
  REQUIRE(r.code == 0);
  CHECK(r.out.find("layers: 6\n") != std::string::npos);
  CHECK(r.out.find("alias_entries: 0\n") != std::string::npos);
  CHECK(r.out.find("reduction_ratio: 0") != std::string::npos);
}

TEST_CASE("merge ties the window and reduces unique parameters") {
  Workdir w;
  build_pipeline(w);
  const Run r = ffm({"merge", "--model", w / "model.ffmc", "--acts", w / "acts.ffmc", "--window", "2:5",
                     "--anchor", "middle", "--out", w / "merged.ffmc"});
  REQUIRE(r.code == 0);
  CHECK(r.out.find("2-4") != std::string::npos);

  const TransformerModel before = load_model(w / "model.ffmc");
  const TransformerModel after = load_model(w / "merged.ffmc");
  const std::size_t p = before.config().ff_parameter_count();
  CHECK(tie_report(after.params()).unique_parameters == tie_report(before.params()).unique_parameters - 2 * p);

  const Run e0 = ffm({"eval", "--model", w / "model.ffmc", "--data", w / "eval.toks", "--metric", "xent"});
  const Run e1 = ffm({"eval", "--model", w / "merged.ffmc", "--data", w / "eval.toks", "--metric", "xent"});
  REQUIRE(e0.code == 0);
  REQUIRE(e1.code == 0);
  auto value = [](const std::string& line) { return std::stod(line.substr(line.find(' ') + 1)); };
  CHECK(std::abs(value(e0.out) - value(e1.out)) <= 1e-4);

  CHECK(ffm({"merge", "--model", w / "model.ffmc", "--acts", w / "acts.ffmc", "--window", "4:8", "--out",
             w / "bad.ffmc"})
            .code == cli::kExitValidation);
  CHECK(ffm({"merge", "--model", w / "model.ffmc", "--acts", w / "acts.ffmc", "--window", "two", "--out",
             w / "bad.ffmc"})
            .code == cli::kExitValidation);
}

TEST_CASE("select writes a report with every window") {
  Workdir w;
  build_pipeline(w);
  const Run r = ffm({"select", "--model", w / "model.ffmc", "--acts", w / "acts.ffmc", "--k", "3",
                     "--eval-data", w / "eval.toks", "--metric", "xent", "--baseline", "--out",
                     w / "best.ffmc", "--report", w / "report.json"});
  REQUIRE(r.code == 0);
  const Json report = Json::parse(slurp(w / "report.json"));
  CHECK(report["candidates"].size() == enumerate_windows(6, 3).size());
  CHECK(report["best"]["start"] == 2);
  CHECK(report["baseline"].is_array());

  const Run with_final = ffm({"select", "--model", w / "model.ffmc", "--acts", w / "acts.ffmc", "--k", "3",
                              "--eval-data", w / "eval.toks", "--metric", "ppl", "--include-final-window",
                              "--jobs", "2", "--out", w / "best2.ffmc", "--report", w / "report2.json"});
  REQUIRE(with_final.code == 0);
  CHECK(Json::parse(slurp(w / "report2.json"))["candidates"].size() == enumerate_windows(6, 3, true).size());
}

TEST_CASE("drop, cka and outputs are byte-identical across runs") {
  Workdir w;
  build_pipeline(w);
  for (const char* suffix : {"a", "b"}) {
    const std::string s = suffix;
    REQUIRE(ffm({"drop", "--model", w / "model.ffmc", "--count", "2", "--eval-data", w / "eval.toks",
                 "--metric", "acc", "--out", w / ("dropped_" + s + ".ffmc"), "--report",
                 w / ("drop_" + s + ".json")})
                .code == 0);
    REQUIRE(ffm({"select", "--model", w / "model.ffmc", "--acts", w / "acts.ffmc", "--k", "2",
                 "--eval-data", w / "eval.toks", "--metric", "xent", "--out", w / ("sel_" + s + ".ffmc"),
                 "--report", w / ("sel_" + s + ".json")})
                .code == 0);
    REQUIRE(ffm({"cka", "--acts", w / "acts.ffmc", "--out", w / ("cka_" + s + ".csv")}).code == 0);
    REQUIRE(ffm({"cka", "--acts", w / "acts.ffmc", "--format", "json", "--out", w / ("cka_" + s + ".json")})
                .code == 0);
  }
  for (const char* name : {"dropped_%.ffmc", "drop_%.json", "sel_%.ffmc", "sel_%.json", "cka_%.csv", "cka_%.json"}) {
    std::string a = name, b = name;
    a.replace(a.find('%'), 1, "a");
    b.replace(b.find('%'), 1, "b");
    INFO(name);
    CHECK(slurp(w / a) == slurp(w / b));
  }
  const Json drop = Json::parse(slurp(w / "drop_a.json"));
  CHECK(drop["kind"] == "drop");
  CHECK(drop["candidates"].size() == 5);
  CHECK(load_model(w / "dropped_a.ffmc").config().n_layers == 4);

  const std::string csv = slurp(w / "cka_a.csv");
  CHECK(std::count(csv.begin(), csv.end(), '\n') == 6);
  CHECK(Json::parse(slurp(w / "cka_a.json"))["tap"] == "ff_pre_act");
}

TEST_CASE("classifier pipeline with labels") {
  Workdir w;
  REQUIRE(ffm({"gen-fixture", "--kind", "random", "--layers", "3", "--d-model", "8", "--d-ff", "16",
               "--seed", "3", "--out", w / "cls.ffmc", "--classes", "4"})
              .code == 0);
  REQUIRE(ffm({"gen-data", "--model", w / "cls.ffmc", "--sequences", "10", "--seq-len", "6", "--seed",
               "1", "--out", w / "cls.toks", "--labels-out", w / "cls.lbls"})
              .code == 0);
  CHECK(ffm({"eval", "--model", w / "cls.ffmc", "--data", w / "cls.toks", "--metric", "acc"}).code ==
        cli::kExitValidation);
  const Run r = ffm({"eval", "--model", w / "cls.ffmc", "--data", w / "cls.toks", "--labels",
                     w / "cls.lbls", "--metric", "acc"});
  REQUIRE(r.code == 0);
  CHECK(r.out == "accuracy 1.000000000\n");
}
