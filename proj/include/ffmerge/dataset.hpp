#pragma once

// Pre-tokenized dataset files.
//
//   token file: "FFMTOKS1" | u64 count | count × u32 token id   (little-endian)
//   label file: "FFMLBLS1" | u64 count | count × u32 label
//
// The token stream holds sequences separated by the model config's
// separator_id. A label file, when present, carries one label per sequence.

#include <cstdint>
#include <filesystem>
#include <optional>
#include <span>
#include <vector>

#include "ffmerge/model.hpp"

namespace ffmerge {

inline constexpr char kTokenMagic[9] = "FFMTOKS1";
inline constexpr char kLabelMagic[9] = "FFMLBLS1";

void write_token_file(const std::filesystem::path& path, std::span<const std::uint32_t> tokens);
std::vector<std::uint32_t> read_token_file(const std::filesystem::path& path);

void write_label_file(const std::filesystem::path& path, std::span<const std::uint32_t> labels);
std::vector<std::uint32_t> read_label_file(const std::filesystem::path& path);

// Flattens sequences into a stream with `separator` between them.
std::vector<std::uint32_t> join_sequences(const std::vector<TokenSequence>& sequences,
                                          std::uint32_t separator);

// Splits a stream at separators, dropping empty pieces. In LM mode pieces
// longer than max_seq_len are cut into consecutive chunks; classifier
// sequences are kept whole and paired with `labels`.
Dataset build_dataset(const ModelConfig& config, std::span<const std::uint32_t> stream,
                      std::optional<std::vector<std::uint32_t>> labels = std::nullopt);

Dataset load_dataset(const ModelConfig& config, const std::filesystem::path& tokens,
                     const std::optional<std::filesystem::path>& labels = std::nullopt);

}  // namespace ffmerge
