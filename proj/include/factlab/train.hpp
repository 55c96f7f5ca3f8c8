#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "factlab/model.hpp"

namespace factlab {

using TokenSeq = std::vector<TokenId>;

struct AdamConfig {
    double learning_rate = 5e-5;
    double beta1 = 0.9;
    double beta2 = 0.999;
    double eps = 1e-8;
};

// Adam with constant learning rate over an ordered named-tensor collection.
// Moment buffers are aligned by entry index and shaped like their parameters.
class AdamState {
public:
    AdamState(const NamedTensors& params, AdamConfig cfg);

    // Consumes the accumulated grads (missing grad buffers count as zero),
    // applies one bias-corrected update in place, clears the grads.
    void step(NamedTensors& params);

    std::int64_t step_count() const { return step_count_; }
    AdamConfig& config() { return cfg_; }
    const AdamConfig& config() const { return cfg_; }

    NamedTensors& first_moments() { return m_; }
    NamedTensors& second_moments() { return v_; }
    void set_step_count(std::int64_t t) { step_count_ = t; }

private:
    AdamConfig cfg_;
    std::int64_t step_count_ = 0;
    NamedTensors m_;
    NamedTensors v_;
};

// One training step: mean cross-entropy over the minibatch (next-token
// prediction on each sequence), backward, Adam update in place. Returns the
// minibatch loss in nats per token position.
double train_step(ModelParameters& params, AdamState& adam,
                  const std::vector<TokenSeq>& minibatch);

// Per-sequence next-token loss without any update (no tape).
double sequence_loss(const ModelParameters& params, const TokenSeq& seq);

}  // namespace factlab
