#include "factlab/model.hpp"

#include <numeric>

#include "factlab/rng.hpp"

namespace factlab {

void TransformerConfig::validate() const {
    if (n_layers < 1) throw ContractError("config: n_layers must be >= 1");
    if (n_heads < 1 || d_model % n_heads != 0)
        throw ContractError("config: d_model " + std::to_string(d_model) +
                            " not divisible by n_heads " + std::to_string(n_heads));
    if (d_ff < 1) throw ContractError("config: d_ff must be >= 1");
    if (context_length < 2) throw ContractError("config: context_length must be >= 2");
    if (vocab_size != ByteTokenizer::kVocabSize)
        throw ContractError("config: vocab_size must be " +
                            std::to_string(ByteTokenizer::kVocabSize));
}

Tensor& ModelParameters::add(const std::string& name, Tensor t) {
    index_[name] = entries_.size();
    entries_.emplace_back(name, std::move(t));
    return entries_.back().second;
}

ModelParameters::ModelParameters(const TransformerConfig& cfg) : cfg_(cfg) {
    cfg_.validate();
    Rng rng(cfg_.seed);
    const std::int64_t d = cfg_.d_model, f = cfg_.d_ff, v = cfg_.vocab_size,
                       c = cfg_.context_length;
    auto normal = [&rng](Shape shape) {
        Tensor t = Tensor::zeros(std::move(shape), true);
        for (auto& x : t.data()) x = rng.normal(0.0, 0.02);
        return t;
    };
    auto zerosp = [](Shape shape) { return Tensor::zeros(std::move(shape), true); };
    auto ones = [](Shape shape) {
        Tensor t = Tensor::zeros(std::move(shape), true);
        for (auto& x : t.data()) x = 1.0;
        return t;
    };

    add("tok_embed", normal({v, d}));
    add("pos_embed", normal({c, d}));
    for (int i = 0; i < cfg_.n_layers; ++i) {
        const std::string p = "block" + std::to_string(i) + ".";
        add(p + "ln1.gain", ones({d}));
        add(p + "ln1.bias", zerosp({d}));
        add(p + "attn.wq", normal({d, d}));
        add(p + "attn.bq", zerosp({d}));
        add(p + "attn.wk", normal({d, d}));
        add(p + "attn.bk", zerosp({d}));
        add(p + "attn.wv", normal({d, d}));
        add(p + "attn.bv", zerosp({d}));
        add(p + "attn.wo", normal({d, d}));
        add(p + "attn.bo", zerosp({d}));
        add(p + "ln2.gain", ones({d}));
        add(p + "ln2.bias", zerosp({d}));
        add(p + "mlp.w1", normal({d, f}));
        add(p + "mlp.b1", zerosp({f}));
        add(p + "mlp.w2", normal({f, d}));
        add(p + "mlp.b2", zerosp({d}));
    }
    add("final_ln.gain", ones({d}));
    add("final_ln.bias", zerosp({d}));
    add("unembed", zerosp({d, v}));  // zero init: untrained model is uniform
}

Tensor& ModelParameters::at(const std::string& name) {
    auto it = index_.find(name);
    if (it == index_.end()) throw ContractError("unknown parameter \"" + name + "\"");
    return entries_[it->second].second;
}

const Tensor& ModelParameters::at(const std::string& name) const {
    auto it = index_.find(name);
    if (it == index_.end()) throw ContractError("unknown parameter \"" + name + "\"");
    return entries_[it->second].second;
}

std::int64_t ModelParameters::total_params() const {
    std::int64_t n = 0;
    for (const auto& [name, t] : entries_) n += t.size();
    return n;
}

void ModelParameters::zero_all_grads() {
    for (auto& [name, t] : entries_) t.zero_grad();
}

Tensor forward(const ModelParameters& params, const std::vector<TokenId>& tokens, Tape* tape) {
    const auto& cfg = params.config();
    if (tokens.empty()) throw ContractError("forward: empty token sequence");
    if (static_cast<int>(tokens.size()) > cfg.context_length)
        throw ContractError("forward: sequence of " + std::to_string(tokens.size()) +
                            " tokens exceeds context_length " +
                            std::to_string(cfg.context_length));
    const int t = static_cast<int>(tokens.size());
    std::vector<TokenId> positions(static_cast<size_t>(t));
    std::iota(positions.begin(), positions.end(), 0);

    Tensor x = ops::add(tape, ops::embedding_lookup(tape, params.at("tok_embed"), tokens),
                        ops::embedding_lookup(tape, params.at("pos_embed"), positions));
    for (int i = 0; i < cfg.n_layers; ++i) {
        const std::string p = "block" + std::to_string(i) + ".";
        Tensor h = ops::layer_norm(tape, x, params.at(p + "ln1.gain"), params.at(p + "ln1.bias"));
        Tensor q = ops::add_bias(tape, ops::matmul(tape, h, params.at(p + "attn.wq")),
                                 params.at(p + "attn.bq"));
        Tensor k = ops::add_bias(tape, ops::matmul(tape, h, params.at(p + "attn.wk")),
                                 params.at(p + "attn.bk"));
        Tensor v = ops::add_bias(tape, ops::matmul(tape, h, params.at(p + "attn.wv")),
                                 params.at(p + "attn.bv"));
        Tensor att = ops::causal_attention(tape, q, k, v, cfg.n_heads);
        x = ops::add(tape, x,
                     ops::add_bias(tape, ops::matmul(tape, att, params.at(p + "attn.wo")),
                                   params.at(p + "attn.bo")));
        Tensor h2 = ops::layer_norm(tape, x, params.at(p + "ln2.gain"), params.at(p + "ln2.bias"));
        Tensor ff = ops::add_bias(
            tape,
            ops::matmul(tape,
                        ops::gelu(tape, ops::add_bias(tape,
                                                      ops::matmul(tape, h2, params.at(p + "mlp.w1")),
                                                      params.at(p + "mlp.b1"))),
                        params.at(p + "mlp.w2")),
            params.at(p + "mlp.b2"));
        x = ops::add(tape, x, ff);
    }
    Tensor xf = ops::layer_norm(tape, x, params.at("final_ln.gain"), params.at("final_ln.bias"));
    return ops::matmul(tape, xf, params.at("unembed"));
}

TokenId argmax_row(const double* row, std::int64_t n) {
    TokenId best = 0;
    double bv = row[0];
    for (std::int64_t j = 1; j < n; ++j)
        if (row[j] > bv) {
            bv = row[j];
            best = static_cast<TokenId>(j);
        }
    return best;
}

std::vector<TokenId> generate(const ModelParameters& params, std::vector<TokenId> prefix,
                              int max_new) {
    if (prefix.empty()) throw ContractError("generate: empty prefix");
    const std::int64_t v = params.config().vocab_size;
    for (int s = 0; s < max_new; ++s) {
        Tensor logits = forward(params, prefix, nullptr);
        const double* last = logits.data().data() + (logits.dim(0) - 1) * v;
        prefix.push_back(argmax_row(last, v));
    }
    return prefix;
}

}  // namespace factlab
