#pragma once

// FFMC-v1 container.
//
//   bytes 0..7    magic "FFMCKPT1"
//   bytes 8..15   u64 little-endian header length H
//   bytes 16..    H bytes of UTF-8 JSON:
//                   "__config__": free-form config object
//                   "<tensor>":   {"dtype":"f32","shape":[...],"offset":o,"length":l}
//                              or {"alias_of":"<tensor>","shape":[...]}
//   bytes 16+H..  data region, row-major little-endian f32, packed in header order
//
// Offsets are relative to the start of the data region. Aliases point at
// non-alias entries only.

#include <cstdint>
#include <filesystem>
#include <memory>
#include <optional>
#include <string>
#include <unordered_map>
#include <vector>

#include <json.hpp>

#include "ffmerge/tensor.hpp"

namespace ffmerge {

using Json = nlohmann::ordered_json;

inline constexpr char kCheckpointMagic[9] = "FFMCKPT1";
inline constexpr const char* kConfigKey = "__config__";

struct TensorEntry {
  std::string name;
  std::vector<std::size_t> shape;
  std::optional<std::string> alias_of;

  std::size_t element_count() const;
};

struct TieReport {
  std::uint64_t total_parameters = 0;
  std::uint64_t unique_parameters = 0;
  double reduction_ratio = 0.0;
};

// Named tensors in insertion order. An alias entry shares the storage object
// of its target, so writes through one name are visible through the other.
class ParameterStore {
 public:
  void add(std::string name, std::vector<std::size_t> shape, Matrix value);
  void add(std::string name, Matrix value);
  void add_vector(std::string name, std::vector<float> values);
  void add_alias(std::string name, const std::string& target);

  // Builds a store from entries in any order (aliases may precede their
  // targets). `payloads` holds one matrix per non-alias entry.
  static ParameterStore assemble(const std::vector<TensorEntry>& entries,
                                 std::unordered_map<std::string, Matrix> payloads);

  bool contains(const std::string& name) const;
  bool is_alias(const std::string& name) const;
  const TensorEntry& entry(const std::string& name) const;
  std::vector<TensorEntry> entries() const;
  std::size_t size() const noexcept { return slots_.size(); }

  const Matrix& get(const std::string& name) const;
  std::shared_ptr<Matrix> storage(const std::string& name) const;

  // Gives `name` fresh storage holding `value`. Entries that aliased `name`
  // keep the old storage: the first of them becomes its owner and the rest
  // are repointed to it.
  void replace(const std::string& name, Matrix value);

  // Turns `name` into an alias of `target` (or of the entry `target` aliases).
  void tie(const std::string& name, const std::string& target);

  // Independent copy with the same alias structure.
  ParameterStore deep_copy() const;

  // Checks every TensorEntry invariant; throws ValidationError.
  void validate() const;

 private:
  struct Slot {
    TensorEntry meta;
    std::shared_ptr<Matrix> storage;
  };

  Slot& slot(const std::string& name);
  const Slot& slot(const std::string& name) const;
  void detach(const std::string& name);

  std::vector<Slot> slots_;
  std::unordered_map<std::string, std::size_t> index_;
};

TieReport tie_report(const ParameterStore& store);

struct Checkpoint {
  ParameterStore store;
  Json config;
};

std::vector<char> encode_checkpoint(const ParameterStore& store, const Json& config);
Checkpoint decode_checkpoint(const std::vector<char>& bytes);

// Writes through a temporary sibling file and renames it into place.
void write_checkpoint(const std::filesystem::path& path, const ParameterStore& store,
                      const Json& config);
Checkpoint read_checkpoint(const std::filesystem::path& path);

// Shared helpers for the binary formats in this project.
std::vector<char> read_file_bytes(const std::filesystem::path& path);
void write_file_atomic(const std::filesystem::path& path, const std::vector<char>& bytes);

}  // namespace ffmerge
