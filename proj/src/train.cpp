#include "factlab/train.hpp"

#include <cmath>

namespace factlab {

AdamState::AdamState(const NamedTensors& params, AdamConfig cfg) : cfg_(cfg) {
    m_.reserve(params.size());
    v_.reserve(params.size());
    for (const auto& [name, t] : params) {
        m_.emplace_back(name, Tensor::zeros(t.shape()));
        v_.emplace_back(name, Tensor::zeros(t.shape()));
    }
}

void AdamState::step(NamedTensors& params) {
    if (params.size() != m_.size())
        throw ContractError("adam: parameter collection changed size");
    ++step_count_;
    const double b1 = cfg_.beta1, b2 = cfg_.beta2;
    const double corr1 = 1.0 - std::pow(b1, static_cast<double>(step_count_));
    const double corr2 = 1.0 - std::pow(b2, static_cast<double>(step_count_));
    for (std::size_t p = 0; p < params.size(); ++p) {
        auto& [name, t] = params[p];
        if (m_[p].first != name)
            throw ContractError("adam: parameter order changed at \"" + name + "\"");
        auto& m = m_[p].second.data();
        auto& v = v_[p].second.data();
        auto& x = t.data();
        const bool has_grad = t.has_grad();
        const double* g = has_grad ? t.grad().data() : nullptr;
        for (std::size_t i = 0; i < x.size(); ++i) {
            const double gi = g ? g[i] : 0.0;
            m[i] = b1 * m[i] + (1.0 - b1) * gi;
            v[i] = b2 * v[i] + (1.0 - b2) * gi * gi;
            const double mhat = m[i] / corr1;
            const double vhat = v[i] / corr2;
            x[i] -= cfg_.learning_rate * mhat / (std::sqrt(vhat) + cfg_.eps);
        }
        t.zero_grad();
    }
}

double train_step(ModelParameters& params, AdamState& adam,
                  const std::vector<TokenSeq>& minibatch) {
    if (minibatch.empty()) throw ContractError("train_step: empty minibatch");
    Tape tape;
    Tensor total;
    for (std::size_t s = 0; s < minibatch.size(); ++s) {
        const auto& seq = minibatch[s];
        if (seq.size() < 2)
            throw ContractError("train_step: sample " + std::to_string(s) +
                                " has fewer than 2 tokens");
        TokenSeq input(seq.begin(), seq.end() - 1);
        TokenSeq targets(seq.begin() + 1, seq.end());
        Tensor logits = forward(params, input, &tape);
        Tensor loss = ops::cross_entropy(&tape, logits, targets);
        if (!std::isfinite(loss.item()))
            throw NumericError("train_step: non-finite loss on sample " + std::to_string(s) +
                               " of the minibatch (" + std::to_string(seq.size()) + " tokens)");
        total = total.defined() ? ops::add(&tape, total, loss) : loss;
    }
    Tensor mean = ops::scale(&tape, total, 1.0 / static_cast<double>(minibatch.size()));
    tape.backward(mean);
    adam.step(params.entries());
    return mean.item();
}

double sequence_loss(const ModelParameters& params, const TokenSeq& seq) {
    if (seq.size() < 2) throw ContractError("sequence_loss: need at least 2 tokens");
    TokenSeq input(seq.begin(), seq.end() - 1);
    TokenSeq targets(seq.begin() + 1, seq.end());
    Tensor logits = forward(params, input, nullptr);
    return ops::cross_entropy(nullptr, logits, targets).item();
}

}  // namespace factlab
