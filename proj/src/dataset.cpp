#include "ffmerge/dataset.hpp"

#include <cstring>

#include "ffmerge/errors.hpp"

namespace ffmerge {

namespace {

std::vector<char> encode_ids(const char* magic, std::span<const std::uint32_t> ids) {
  std::vector<char> out(16 + 4 * ids.size());
  std::memcpy(out.data(), magic, 8);
  const std::uint64_t n = ids.size();
  std::memcpy(out.data() + 8, &n, 8);
  if (!ids.empty()) std::memcpy(out.data() + 16, ids.data(), 4 * ids.size());
  return out;
}

std::vector<std::uint32_t> decode_ids(const char* magic, const std::vector<char>& bytes) {
  if (bytes.size() < 8 || std::memcmp(bytes.data(), magic, 8) != 0) {
    throw ParseError(ParseErrorKind::bad_magic, 0, std::string("expected \"") + magic + "\"");
  }
  if (bytes.size() < 16) {
    throw ParseError(ParseErrorKind::truncated_header, bytes.size(), "missing count");
  }
  std::uint64_t n = 0;
  std::memcpy(&n, bytes.data() + 8, 8);
  if (n > (bytes.size() - 16) / 4 || bytes.size() - 16 != 4 * n) {
    throw ParseError(ParseErrorKind::truncated_data, 16,
                     "count " + std::to_string(n) + " does not match " +
                         std::to_string(bytes.size() - 16) + " payload bytes");
  }
  std::vector<std::uint32_t> ids(n);
  if (n) std::memcpy(ids.data(), bytes.data() + 16, 4 * n);
  return ids;
}

}  // namespace

void write_token_file(const std::filesystem::path& path, std::span<const std::uint32_t> tokens) {
  write_file_atomic(path, encode_ids(kTokenMagic, tokens));
}

std::vector<std::uint32_t> read_token_file(const std::filesystem::path& path) {
  return decode_ids(kTokenMagic, read_file_bytes(path));
}

void write_label_file(const std::filesystem::path& path, std::span<const std::uint32_t> labels) {
  write_file_atomic(path, encode_ids(kLabelMagic, labels));
}

std::vector<std::uint32_t> read_label_file(const std::filesystem::path& path) {
  return decode_ids(kLabelMagic, read_file_bytes(path));
}

std::vector<std::uint32_t> join_sequences(const std::vector<TokenSequence>& sequences,
                                          std::uint32_t separator) {
  std::vector<std::uint32_t> out;
  for (std::size_t i = 0; i < sequences.size(); ++i) {
    if (i) out.push_back(separator);
    out.insert(out.end(), sequences[i].begin(), sequences[i].end());
  }
  return out;
}

Dataset build_dataset(const ModelConfig& config, std::span<const std::uint32_t> stream,
                      std::optional<std::vector<std::uint32_t>> labels) {
  std::vector<TokenSequence> pieces(1);
  for (std::uint32_t id : stream) {
    if (id == config.separator_id) {
      pieces.emplace_back();
    } else {
      pieces.back().push_back(id);
    }
  }
  std::erase_if(pieces, [](const TokenSequence& s) { return s.empty(); });

  Dataset out;
  if (config.mode == ModelMode::classifier) {
    if (!labels) throw ValidationError("classifier datasets need a label file");
    if (labels->size() != pieces.size()) {
      throw ValidationError("label count " + std::to_string(labels->size()) +
                            " does not match sequence count " + std::to_string(pieces.size()));
    }
    out.sequences = std::move(pieces);
    out.labels = std::move(*labels);
    return out;
  }
  for (auto& piece : pieces) {
    for (std::size_t start = 0; start < piece.size(); start += config.max_seq_len) {
      const std::size_t end = std::min(piece.size(), start + config.max_seq_len);
      out.sequences.emplace_back(piece.begin() + static_cast<std::ptrdiff_t>(start),
                                 piece.begin() + static_cast<std::ptrdiff_t>(end));
    }
  }
  return out;
}

Dataset load_dataset(const ModelConfig& config, const std::filesystem::path& tokens,
                     const std::optional<std::filesystem::path>& labels) {
  const auto stream = read_token_file(tokens);
  std::optional<std::vector<std::uint32_t>> label_ids;
  if (labels) label_ids = read_label_file(*labels);
  return build_dataset(config, stream, std::move(label_ids));
}

}  // namespace ffmerge
