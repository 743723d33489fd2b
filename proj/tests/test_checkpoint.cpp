#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cstring>
#include <filesystem>

#include "ffmerge/checkpoint.hpp"
#include "ffmerge/errors.hpp"
#include "ffmerge/fixtures.hpp"
#include "test_support.hpp"

using namespace ffmerge;
using ffmerge::testing::random_matrix;

namespace {

std::uint64_t header_length(const std::vector<char>& bytes) {
  std::uint64_t h = 0;
  std::memcpy(&h, bytes.data() + 8, 8);
  return h;
}

std::vector<char> assemble_file(const std::string& header, const std::vector<float>& data) {
  const std::uint64_t h = header.size();
  std::vector<char> out(16 + h + 4 * data.size());
  std::memcpy(out.data(), kCheckpointMagic, 8);
  std::memcpy(out.data() + 8, &h, 8);
  std::memcpy(out.data() + 16, header.data(), h);
  for (std::size_t i = 0; i < data.size(); ++i) std::memcpy(out.data() + 16 + h + 4 * i, &data[i], 4);
  return out;
}

ParseErrorKind parse_kind(const std::vector<char>& bytes, std::uint64_t* position = nullptr) {
  try {
    decode_checkpoint(bytes);
  } catch (const ParseError& e) {
    if (position) *position = e.position();
    return e.kind();
  }
  FAIL("expected a ParseError");
  return ParseErrorKind::bad_magic;
}

}  // namespace

TEST_CASE("file size follows the format arithmetic") {
  ParameterStore store;
  store.add("w", Matrix{{1, 2}, {3, 4}});
  const auto bytes = encode_checkpoint(store, Json::object());
  const std::uint64_t h = header_length(bytes);
  CHECK(bytes.size() == 8 + 8 + h + 16);
  CHECK(std::memcmp(bytes.data(), "FFMCKPT1", 8) == 0);
  const auto header = Json::parse(bytes.begin() + 16, bytes.begin() + 16 + long(h));
  CHECK(header.begin().key() == "__config__");
  CHECK(header["w"]["offset"] == 0);
  CHECK(header["w"]["length"] == 16);
  CHECK(header["w"]["dtype"] == "f32");
}

TEST_CASE("hand-assembled minimal file decodes") {
  const std::string header =
      R"({"__config__":{"note":"x"},"one":{"dtype":"f32","shape":[1,1],"offset":0,"length":4}})";
  // 1.0f little-endian is 00 00 80 3F.
  std::vector<char> bytes = assemble_file(header, {});
  for (unsigned char b : {0x00, 0x00, 0x80, 0x3F}) bytes.push_back(static_cast<char>(b));
  const Checkpoint ckpt = decode_checkpoint(bytes);
  CHECK(ckpt.config["note"] == "x");
  REQUIRE(ckpt.store.size() == 1);
  CHECK(ckpt.store.get("one") == Matrix{{1.0f}});
}

TEST_CASE("parse errors are distinct and carry positions") {
  const std::string good =
      R"({"__config__":{},"a":{"dtype":"f32","shape":[2],"offset":0,"length":8}})";
  std::uint64_t pos = 99;

  auto bad_magic = assemble_file(good, {1, 2});
  bad_magic[0] = 'X';
  CHECK(parse_kind(bad_magic, &pos) == ParseErrorKind::bad_magic);
  CHECK(pos == 0);

  auto truncated = assemble_file(good, {1, 2});
  truncated.pop_back();
  CHECK(parse_kind(truncated, &pos) == ParseErrorKind::truncated_data);
  CHECK(pos == 16 + good.size());

  auto short_header = assemble_file(good, {});
  short_header.resize(20);
  CHECK(parse_kind(short_header, &pos) == ParseErrorKind::truncated_header);
  CHECK(pos == 8);

  CHECK(parse_kind(assemble_file(R"({"__config__":{},"a":)", {})) == ParseErrorKind::bad_header);

  const std::string chain = R"({"__config__":{},"a":{"dtype":"f32","shape":[2],"offset":0,"length":8},)"
                            R"("b":{"alias_of":"a","shape":[2]},"c":{"alias_of":"b","shape":[2]}})";
  CHECK(parse_kind(assemble_file(chain, {1, 2})) == ParseErrorKind::alias_chain);

  const std::string missing =
      R"({"__config__":{},"b":{"alias_of":"nope","shape":[2]}})";
  CHECK(parse_kind(assemble_file(missing, {})) == ParseErrorKind::alias_missing);

  const std::string wrong_len =
      R"({"__config__":{},"a":{"dtype":"f32","shape":[3],"offset":0,"length":8}})";
  CHECK(parse_kind(assemble_file(wrong_len, {1, 2})) == ParseErrorKind::shape_length_mismatch);

  const std::string alias_shape = R"({"__config__":{},"a":{"dtype":"f32","shape":[2],"offset":0,"length":8},)"
                                  R"("b":{"alias_of":"a","shape":[1,2]}})";
  CHECK(parse_kind(assemble_file(alias_shape, {1, 2})) == ParseErrorKind::shape_length_mismatch);
}

TEST_CASE("aliases share storage") {
  ParameterStore store;
  store.add("a", Matrix{{1, 2}});
  store.add_alias("b", "a");
  CHECK(store.storage("a") == store.storage("b"));
  (*store.storage("a"))(0, 1) = 7.0f;
  CHECK(store.get("b")(0, 1) == 7.0f);
  CHECK_THROWS_AS(store.add_alias("c", "b"), ValidationError);

  const auto back = decode_checkpoint(encode_checkpoint(store, Json::object()));
  CHECK(back.store.storage("a") == back.store.storage("b"));
}

TEST_CASE("tie_report counts aliases in total only") {
  ParameterStore store;
  store.add("a", Matrix(3, 4));
  store.add("b", Matrix(3, 4));
  TieReport r = tie_report(store);
  CHECK(r.total_parameters == 24);
  CHECK(r.unique_parameters == 24);
  CHECK(r.reduction_ratio == 0.0);

  store.tie("b", "a");
  r = tie_report(store);
  CHECK(r.total_parameters == 24);
  CHECK(r.unique_parameters == 12);
  CHECK(r.reduction_ratio == 0.5);
}

TEST_CASE("tie_report for a 12-layer store with one k=5 window tied") {
  // FF tensors of p = 6 + 2 + 6 + 3 = 17 values per layer, q other values.
  ParameterStore store;
  std::size_t q = 0;
  store.add("embed.tok", Matrix(5, 3));
  q += 15;
  for (int i = 0; i < 12; ++i) {
    const std::string l = "layer" + std::to_string(i);
    store.add(l + ".ff.w_in", Matrix(2, 3, float(i)));
    store.add_vector(l + ".ff.b_in", std::vector<float>(2, float(i)));
    store.add(l + ".ff.w_out", Matrix(3, 2, float(i)));
    store.add_vector(l + ".ff.b_out", std::vector<float>(3, float(i)));
    store.add(l + ".attn.wq", Matrix(3, 3));
    q += 9;
  }
  const std::size_t p = 17;
  const auto before = tie_report(store);
  CHECK(before.total_parameters == 12 * p + q);

  for (int i = 4; i <= 8; ++i) {
    for (const char* s : {".ff.w_in", ".ff.b_in", ".ff.w_out", ".ff.b_out"}) {
      if (i != 4) store.tie("layer" + std::to_string(i) + s, std::string("layer4") + s);
    }
  }
  const auto after = tie_report(store);
  CHECK(after.total_parameters == before.total_parameters);
  CHECK(after.unique_parameters == before.total_parameters - 4 * p);
  CHECK(after.reduction_ratio == doctest::Approx(double(4 * p) / double(12 * p + q)));
}

TEST_CASE("replace keeps former aliases on the old storage") {
  ParameterStore store;
  store.add("a", Matrix{{1}});
  store.add_alias("b", "a");
  store.add_alias("c", "a");
  store.replace("a", Matrix{{2}});
  CHECK(store.get("a")(0, 0) == 2.0f);
  CHECK(store.get("b")(0, 0) == 1.0f);
  CHECK_FALSE(store.is_alias("b"));
  CHECK(store.entry("c").alias_of == std::optional<std::string>("b"));
  CHECK(store.storage("b") == store.storage("c"));
  store.validate();
}

TEST_CASE("unique count strictly decreases when a root becomes an alias") {
  std::mt19937_64 rng(1);
  ParameterStore store;
  for (int i = 0; i < 5; ++i) store.add("t" + std::to_string(i), random_matrix(rng, 2, 3));
  auto last = tie_report(store);
  for (int i = 1; i < 5; ++i) {
    store.tie("t" + std::to_string(i), "t0");
    const auto now = tie_report(store);
    CHECK(now.total_parameters == last.total_parameters);
    CHECK(now.unique_parameters < last.unique_parameters);
    last = now;
  }
}

TEST_CASE("random toy model round trips byte-identically through files") {
  const auto dir = std::filesystem::temp_directory_path() / "ffmerge_ckpt_test";
  std::filesystem::create_directories(dir);
  const TransformerModel model = random_model(fixture_config(6, 8, 16), 42);
  save_model(dir / "m.ffmc", model);
  const auto first = read_file_bytes(dir / "m.ffmc");
  const TransformerModel back = load_model(dir / "m.ffmc");
  CHECK(back.config() == model.config());
  save_model(dir / "m2.ffmc", back);
  CHECK(read_file_bytes(dir / "m2.ffmc") == first);
  CHECK_FALSE(std::filesystem::exists(dir / "m.ffmc.tmp"));
  std::filesystem::remove_all(dir);
}

TEST_CASE("aliases may precede their targets in header order") {
  ParameterStore store;
  store.add("a", Matrix{{1, 2}});
  store.add("b", Matrix{{3, 4}});
  store.tie("a", "b");  // a now aliases b, which comes later
  const auto bytes = encode_checkpoint(store, Json::object());
  const auto back = decode_checkpoint(bytes);
  CHECK(back.store.entries().front().name == "a");
  CHECK(back.store.is_alias("a"));
  CHECK(encode_checkpoint(back.store, back.config) == bytes);
}

TEST_CASE("invalid stores are rejected before encoding") {
  ParameterStore store;
  store.add("a", Matrix{{std::numeric_limits<float>::quiet_NaN()}});
  CHECK_THROWS_AS(encode_checkpoint(store, Json::object()), ValidationError);
  ParameterStore dup;
  dup.add("a", Matrix{{1}});
  CHECK_THROWS_AS(dup.add("a", Matrix{{1}}), ValidationError);
  CHECK_THROWS_AS(dup.add("__config__", Matrix{{1}}), ValidationError);
}

TEST_CASE("reading a missing file is an I/O error") {
  CHECK_THROWS_AS(read_checkpoint("/nonexistent/dir/x.ffmc"), IoError);
}
