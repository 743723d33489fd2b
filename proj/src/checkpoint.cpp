#include "ffmerge/checkpoint.hpp"

#include <bit>
#include <cmath>
#include <cstring>
#include <fstream>
#include <numeric>
#include <unordered_set>

#include "ffmerge/errors.hpp"

namespace ffmerge {

static_assert(std::endian::native == std::endian::little,
              "FFMC I/O assumes a little-endian host");

namespace {

Matrix shaped(const std::vector<std::size_t>& shape, std::vector<float> data) {
  if (shape.empty()) return Matrix(1, 1, std::move(data));
  const std::size_t cols = shape.back();
  const std::size_t rows =
      std::accumulate(shape.begin(), shape.end() - 1, std::size_t{1}, std::multiplies<>());
  return Matrix(rows, cols, std::move(data));
}

std::string shape_text(const std::vector<std::size_t>& shape) {
  std::string s = "[";
  for (std::size_t i = 0; i < shape.size(); ++i) {
    if (i) s += ",";
    s += std::to_string(shape[i]);
  }
  return s + "]";
}

void put_u64(std::vector<char>& out, std::uint64_t v) {
  char buf[8];
  std::memcpy(buf, &v, 8);
  out.insert(out.end(), buf, buf + 8);
}

}  // namespace

std::size_t TensorEntry::element_count() const {
  return std::accumulate(shape.begin(), shape.end(), std::size_t{1}, std::multiplies<>());
}

// ---------------------------------------------------------------------------
// ParameterStore

void ParameterStore::add(std::string name, std::vector<std::size_t> shape, Matrix value) {
  if (index_.count(name)) throw ValidationError("duplicate tensor name '" + name + "'");
  if (name == kConfigKey) throw ValidationError("tensor name '" + name + "' is reserved");
  TensorEntry meta{name, std::move(shape), std::nullopt};
  if (meta.element_count() != value.size()) {
    throw ValidationError("tensor '" + name + "' shape " + shape_text(meta.shape) +
                          " does not match " + std::to_string(value.size()) + " values");
  }
  index_.emplace(name, slots_.size());
  slots_.push_back({std::move(meta), std::make_shared<Matrix>(std::move(value))});
}

void ParameterStore::add(std::string name, Matrix value) {
  std::vector<std::size_t> shape{value.rows(), value.cols()};
  add(std::move(name), std::move(shape), std::move(value));
}

void ParameterStore::add_vector(std::string name, std::vector<float> values) {
  const std::size_t n = values.size();
  add(std::move(name), {n}, Matrix(1, n, std::move(values)));
}

void ParameterStore::add_alias(std::string name, const std::string& target) {
  if (index_.count(name)) throw ValidationError("duplicate tensor name '" + name + "'");
  const Slot& t = slot(target);
  if (t.meta.alias_of) {
    throw ValidationError("alias '" + name + "' targets alias '" + target + "'");
  }
  TensorEntry meta{name, t.meta.shape, target};
  auto storage = t.storage;
  index_.emplace(name, slots_.size());
  slots_.push_back({std::move(meta), std::move(storage)});
}

ParameterStore ParameterStore::assemble(const std::vector<TensorEntry>& entries,
                                        std::unordered_map<std::string, Matrix> payloads) {
  ParameterStore out;
  for (const auto& e : entries) {
    if (out.index_.count(e.name)) throw ValidationError("duplicate tensor name '" + e.name + "'");
    std::shared_ptr<Matrix> storage;
    if (!e.alias_of) {
      auto it = payloads.find(e.name);
      if (it == payloads.end()) throw ValidationError("no payload for tensor '" + e.name + "'");
      storage = std::make_shared<Matrix>(std::move(it->second));
    }
    out.index_.emplace(e.name, out.slots_.size());
    out.slots_.push_back({e, std::move(storage)});
  }
  for (auto& s : out.slots_) {
    if (!s.meta.alias_of) continue;
    auto it = out.index_.find(*s.meta.alias_of);
    if (it == out.index_.end()) {
      throw ValidationError("alias '" + s.meta.name + "' targets missing '" + *s.meta.alias_of +
                            "'");
    }
    s.storage = out.slots_[it->second].storage;
  }
  out.validate();
  return out;
}

bool ParameterStore::contains(const std::string& name) const { return index_.count(name) != 0; }

bool ParameterStore::is_alias(const std::string& name) const {
  return slot(name).meta.alias_of.has_value();
}

const TensorEntry& ParameterStore::entry(const std::string& name) const { return slot(name).meta; }

std::vector<TensorEntry> ParameterStore::entries() const {
  std::vector<TensorEntry> out;
  out.reserve(slots_.size());
  for (const auto& s : slots_) out.push_back(s.meta);
  return out;
}

const Matrix& ParameterStore::get(const std::string& name) const { return *slot(name).storage; }

std::shared_ptr<Matrix> ParameterStore::storage(const std::string& name) const {
  return slot(name).storage;
}

ParameterStore::Slot& ParameterStore::slot(const std::string& name) {
  auto it = index_.find(name);
  if (it == index_.end()) throw DomainError("no tensor named '" + name + "'");
  return slots_[it->second];
}

const ParameterStore::Slot& ParameterStore::slot(const std::string& name) const {
  auto it = index_.find(name);
  if (it == index_.end()) throw DomainError("no tensor named '" + name + "'");
  return slots_[it->second];
}

void ParameterStore::detach(const std::string& name) {
  Slot& s = slot(name);
  if (s.meta.alias_of) {
    s.meta.alias_of.reset();
    return;
  }
  Slot* heir = nullptr;
  for (auto& other : slots_) {
    if (other.meta.alias_of != name) continue;
    if (!heir) {
      heir = &other;
      heir->meta.alias_of.reset();
    } else {
      other.meta.alias_of = heir->meta.name;
    }
  }
}

void ParameterStore::replace(const std::string& name, Matrix value) {
  Slot& s = slot(name);
  if (s.meta.element_count() != value.size()) {
    throw ValidationError("replacement for '" + name + "' has " + std::to_string(value.size()) +
                          " values, expected shape " + shape_text(s.meta.shape));
  }
  detach(name);
  s.storage = std::make_shared<Matrix>(std::move(value));
}

void ParameterStore::tie(const std::string& name, const std::string& target) {
  const Slot& t = slot(target);
  const std::string root = t.meta.alias_of ? *t.meta.alias_of : target;
  if (root == name) return;
  Slot& s = slot(name);
  if (s.meta.shape != t.meta.shape) {
    throw ValidationError("cannot tie '" + name + "' " + shape_text(s.meta.shape) + " to '" +
                          target + "' " + shape_text(t.meta.shape));
  }
  if (s.meta.alias_of == root) return;
  detach(name);
  s.meta.alias_of = root;
  s.storage = slot(root).storage;
}

ParameterStore ParameterStore::deep_copy() const {
  std::unordered_map<std::string, Matrix> payloads;
  for (const auto& s : slots_)
    if (!s.meta.alias_of) payloads.emplace(s.meta.name, *s.storage);
  return assemble(entries(), std::move(payloads));
}

void ParameterStore::validate() const {
  for (const auto& s : slots_) {
    if (!s.storage) throw ValidationError("tensor '" + s.meta.name + "' has no storage");
    if (s.meta.alias_of) {
      auto it = index_.find(*s.meta.alias_of);
      if (it == index_.end()) {
        throw ValidationError("alias '" + s.meta.name + "' targets missing '" +
                              *s.meta.alias_of + "'");
      }
      const Slot& t = slots_[it->second];
      if (t.meta.alias_of) {
        throw ValidationError("alias '" + s.meta.name + "' targets alias '" + t.meta.name + "'");
      }
      if (t.meta.shape != s.meta.shape) {
        throw ValidationError("alias '" + s.meta.name + "' shape differs from its target");
      }
      if (t.storage != s.storage) {
        throw ValidationError("alias '" + s.meta.name + "' does not share its target's storage");
      }
    } else {
      if (s.meta.element_count() != s.storage->size()) {
        throw ValidationError("tensor '" + s.meta.name + "' shape does not match its payload");
      }
      if (!all_finite(*s.storage)) {
        throw ValidationError("tensor '" + s.meta.name + "' has non-finite values");
      }
    }
  }
}

TieReport tie_report(const ParameterStore& store) {
  TieReport r;
  for (const auto& e : store.entries()) {
    r.total_parameters += e.element_count();
    if (!e.alias_of) r.unique_parameters += e.element_count();
  }
  r.reduction_ratio =
      r.total_parameters == 0
          ? 0.0
          : double(r.total_parameters - r.unique_parameters) / double(r.total_parameters);
  return r;
}

// ---------------------------------------------------------------------------
// Encoding

std::vector<char> encode_checkpoint(const ParameterStore& store, const Json& config) {
  store.validate();

  Json header = Json::object();
  header[kConfigKey] = config;
  std::uint64_t offset = 0;
  for (const auto& e : store.entries()) {
    Json j = Json::object();
    if (e.alias_of) {
      j["alias_of"] = *e.alias_of;
      j["shape"] = e.shape;
    } else {
      const std::uint64_t length = 4 * e.element_count();
      j["dtype"] = "f32";
      j["shape"] = e.shape;
      j["offset"] = offset;
      j["length"] = length;
      offset += length;
    }
    header[e.name] = std::move(j);
  }
  const std::string text = header.dump();

  std::vector<char> out;
  out.reserve(16 + text.size() + offset);
  out.insert(out.end(), kCheckpointMagic, kCheckpointMagic + 8);
  put_u64(out, text.size());
  out.insert(out.end(), text.begin(), text.end());
  for (const auto& e : store.entries()) {
    if (e.alias_of) continue;
    auto data = store.get(e.name).data();
    const char* raw = reinterpret_cast<const char*>(data.data());
    out.insert(out.end(), raw, raw + data.size_bytes());
  }
  return out;
}

Checkpoint decode_checkpoint(const std::vector<char>& bytes) {
  using K = ParseErrorKind;
  if (bytes.size() < 8 || std::memcmp(bytes.data(), kCheckpointMagic, 8) != 0) {
    throw ParseError(K::bad_magic, 0, "expected \"FFMCKPT1\"");
  }
  if (bytes.size() < 16) {
    throw ParseError(K::truncated_header, bytes.size(), "missing header length");
  }
  std::uint64_t header_len = 0;
  std::memcpy(&header_len, bytes.data() + 8, 8);
  if (header_len > bytes.size() - 16) {
    throw ParseError(K::truncated_header, 8,
                     "header length " + std::to_string(header_len) + " exceeds file size " +
                         std::to_string(bytes.size()));
  }
  const std::uint64_t data_start = 16 + header_len;
  const std::uint64_t data_size = bytes.size() - data_start;

  Json header;
  try {
    header = Json::parse(bytes.begin() + 16, bytes.begin() + static_cast<std::ptrdiff_t>(data_start));
  } catch (const nlohmann::json::parse_error& e) {
    throw ParseError(K::bad_header, 16 + (e.byte > 0 ? e.byte - 1 : 0), e.what());
  }
  if (!header.is_object()) throw ParseError(K::bad_header, 16, "header is not a JSON object");

  Checkpoint ckpt;
  if (auto it = header.find(kConfigKey); it != header.end()) {
    ckpt.config = *it;
  } else {
    throw ParseError(K::bad_header, 16, "missing \"__config__\"");
  }

  std::unordered_set<std::string> alias_names;
  for (const auto& [name, j] : header.items()) {
    if (name == kConfigKey) continue;
    if (j.is_object() && j.contains("alias_of")) alias_names.insert(name);
  }

  std::vector<std::pair<std::string, bool>> order;
  ParameterStore roots;
  for (const auto& [name, j] : header.items()) {
    if (name == kConfigKey) continue;
    std::vector<std::size_t> shape;
    try {
      if (!j.is_object()) throw std::runtime_error("entry is not an object");
      shape = j.at("shape").get<std::vector<std::size_t>>();
      if (j.contains("alias_of")) {
        const std::string target = j.at("alias_of").get<std::string>();
        if (!header.contains(target) || target == kConfigKey) {
          throw ParseError(K::alias_missing, 16,
                           "alias '" + name + "' targets missing '" + target + "'");
        }
        if (alias_names.count(target)) {
          throw ParseError(K::alias_chain, 16,
                           "alias '" + name + "' targets alias '" + target + "'");
        }
        const auto target_shape = header[target].at("shape").get<std::vector<std::size_t>>();
        if (target_shape != shape) {
          throw ParseError(K::shape_length_mismatch, 16,
                           "alias '" + name + "' shape " + shape_text(shape) +
                               " differs from target shape " + shape_text(target_shape));
        }
        order.emplace_back(name, true);
        continue;
      }
      if (j.at("dtype").get<std::string>() != "f32") {
        throw ParseError(K::bad_header, 16, "tensor '" + name + "' has unsupported dtype");
      }
      const auto offset = j.at("offset").get<std::uint64_t>();
      const auto length = j.at("length").get<std::uint64_t>();
      TensorEntry probe{name, shape, std::nullopt};
      if (length != 4 * probe.element_count()) {
        throw ParseError(K::shape_length_mismatch, 16,
                         "tensor '" + name + "' shape " + shape_text(shape) + " needs " +
                             std::to_string(4 * probe.element_count()) + " bytes, header says " +
                             std::to_string(length));
      }
      if (offset > data_size || length > data_size - offset) {
        throw ParseError(K::truncated_data, data_start + offset,
                         "tensor '" + name + "' extends past end of file");
      }
      std::vector<float> values(probe.element_count());
      std::memcpy(values.data(), bytes.data() + data_start + offset, length);
      for (float v : values) {
        if (!std::isfinite(v)) {
          throw ParseError(K::bad_header, data_start + offset,
                           "tensor '" + name + "' holds non-finite values");
        }
      }
      roots.add(name, shape, shaped(shape, std::move(values)));
      order.emplace_back(name, false);
    } catch (const ParseError&) {
      throw;
    } catch (const std::exception& e) {
      throw ParseError(K::bad_header, 16, "entry '" + name + "': " + e.what());
    }
  }

  std::vector<TensorEntry> entries;
  std::unordered_map<std::string, Matrix> payloads;
  for (const auto& [name, is_alias] : order) {
    if (is_alias) {
      entries.push_back({name, header[name].at("shape").get<std::vector<std::size_t>>(),
                         header[name].at("alias_of").get<std::string>()});
    } else {
      entries.push_back(roots.entry(name));
      payloads.emplace(name, std::move(*roots.storage(name)));
    }
  }
  ckpt.store = ParameterStore::assemble(entries, std::move(payloads));
  return ckpt;
}

// ---------------------------------------------------------------------------
// Files

std::vector<char> read_file_bytes(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open '" + path.string() + "' for reading");
  std::vector<char> bytes((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
  if (in.bad()) throw IoError("error reading '" + path.string() + "'");
  return bytes;
}

void write_file_atomic(const std::filesystem::path& path, const std::vector<char>& bytes) {
  auto tmp = path;
  tmp += ".tmp";
  {
    std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
    if (!out) throw IoError("cannot open '" + tmp.string() + "' for writing");
    out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
    if (!out) throw IoError("error writing '" + tmp.string() + "'");
  }
  std::error_code ec;
  std::filesystem::rename(tmp, path, ec);
  if (ec) {
    std::filesystem::remove(tmp, ec);
    throw IoError("cannot move output into place at '" + path.string() + "'");
  }
}

void write_checkpoint(const std::filesystem::path& path, const ParameterStore& store,
                      const Json& config) {
  write_file_atomic(path, encode_checkpoint(store, config));
}

Checkpoint read_checkpoint(const std::filesystem::path& path) {
  return decode_checkpoint(read_file_bytes(path));
}

}  // namespace ffmerge
