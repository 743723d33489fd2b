#pragma once

// Seeded model and dataset constructions with known merge behaviour. Used by
// the gen-fixture subcommand and the test suites.

#include <cstdint>
#include <optional>
#include <vector>

#include "ffmerge/alignment.hpp"
#include "ffmerge/model.hpp"

namespace ffmerge {

enum class FixtureKind {
  random,         // independent random layers
  duplicate,      // every layer identical, attention zeroed
  permuted_copy,  // FFs in the copy window are permutations of its first member, attention zeroed
};

const char* to_string(FixtureKind kind);
FixtureKind fixture_kind_from_string(const std::string& s);

struct FixtureSpec {
  FixtureKind kind = FixtureKind::random;
  ModelConfig config;
  std::uint64_t seed = 0;
  // permuted_copy only: layers [copy_start, copy_end) share one FF up to
  // permutation. Defaults to every layer.
  std::optional<std::size_t> copy_start;
  std::optional<std::size_t> copy_end;
  // Layers whose attention and FF weights are all zero.
  std::vector<std::size_t> zero_layers;
  // Scale of W_out (and b_out). Unset: 0.5, or 0.01 for duplicate fixtures so
  // the copies' residual contributions barely move each other's inputs.
  std::optional<float> ff_out_scale;
  float head_scale = 2.0f;
};

// Default desk-scale config: LM, pre-LN, 2 heads, vocab 32, max_seq_len 32.
ModelConfig fixture_config(std::size_t n_layers, std::size_t d_model, std::size_t d_ff,
                           FFKind ff_kind = FFKind::gelu);

TransformerModel random_model(const ModelConfig& config, std::uint64_t seed,
                              float ff_out_scale = 0.5f, float head_scale = 2.0f);

struct Fixture {
  TransformerModel model;
  // permuted_copy: planted[i] maps the copy-window's first FF onto layer
  // copy_start + 1 + i, i.e. that layer's FF = apply_permutation(first, planted[i]).
  std::vector<Permutation> planted;
};

Fixture build_fixture(const FixtureSpec& spec);

void zero_attention(TransformerModel& model, std::size_t layer);
void zero_layer(TransformerModel& model, std::size_t layer);

// Overwrites layer `layer`'s FF tensors with `source`'s FF permuted by pi.
void copy_permuted_ff(TransformerModel& model, std::size_t source, std::size_t layer,
                      const Permutation& pi);

Permutation random_permutation(std::size_t n, std::uint64_t seed);

// LM: sequences sampled autoregressively from the model's own distribution.
// Classifier: uniform random tokens labelled with the model's argmax class.
Dataset sample_dataset(const TransformerModel& model, std::size_t n_sequences,
                       std::size_t seq_len, std::uint64_t seed);

// Uniform random token sequences (no labels).
Dataset random_dataset(std::size_t vocab_size, std::size_t n_sequences, std::size_t seq_len,
                       std::uint64_t seed);

}  // namespace ffmerge
