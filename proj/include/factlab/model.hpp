#pragma once

#include <cstdint>
#include <string>
#include <unordered_map>
#include <utility>
#include <vector>

#include "factlab/tensor.hpp"
#include "factlab/tokenizer.hpp"

namespace factlab {

struct TransformerConfig {
    int n_layers = 4;
    int d_model = 128;
    int n_heads = 4;
    int d_ff = 512;
    int context_length = 320;
    int vocab_size = ByteTokenizer::kVocabSize;
    std::uint64_t seed = 0;

    void validate() const;
    bool operator==(const TransformerConfig&) const = default;
};

// Ordered name -> Tensor collection; order is fixed at construction and is
// the serialization order everywhere (checkpoints, snapshots, deltas).
using NamedTensors = std::vector<std::pair<std::string, Tensor>>;

// All trainable parameters of the decoder-only transformer, keyed by a fixed
// name set derived from the config.
class ModelParameters {
public:
    // Fresh init: normal(0, 0.02) weights, zero biases, ones layer-norm gains,
    // zero unembedding. Deterministic in cfg.seed.
    explicit ModelParameters(const TransformerConfig& cfg);

    const TransformerConfig& config() const { return cfg_; }
    NamedTensors& entries() { return entries_; }
    const NamedTensors& entries() const { return entries_; }

    Tensor& at(const std::string& name);
    const Tensor& at(const std::string& name) const;
    bool has(const std::string& name) const { return index_.count(name) > 0; }

    std::int64_t total_params() const;
    void zero_all_grads();

private:
    TransformerConfig cfg_;
    NamedTensors entries_;
    std::unordered_map<std::string, std::size_t> index_;

    Tensor& add(const std::string& name, Tensor t);
};

// Causal forward pass over a token sequence: logits [T, vocab]. Position t of
// the output depends only on tokens 0..t. Pass a tape to record gradients;
// nullptr runs inference only.
Tensor forward(const ModelParameters& params, const std::vector<TokenId>& tokens,
               Tape* tape = nullptr);

// Greedy argmax continuation; emits exactly max_new tokens after the prefix.
// Ties break toward the lowest token id.
std::vector<TokenId> generate(const ModelParameters& params, std::vector<TokenId> prefix,
                              int max_new);

// Argmax with lowest-id tie break over one logits row.
TokenId argmax_row(const double* row, std::int64_t n);

}  // namespace factlab
