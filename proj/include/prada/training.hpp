#pragma once

#include <cstddef>
#include <random>
#include <span>
#include <vector>

#include "prada/records.hpp"
#include "prada/scores.hpp"

namespace prada {

/// Which coordinates of a ScoreModel are trainable, and where they live in the
/// flat parameter vector. Canonical order: [α] [w1 b1 w2 b2 w3 b3] [w_0 .. w_{S-1}].
struct ParamLayout {
    bool has_alpha = false;
    std::size_t mlp_count = 0;
    std::size_t n_weights = 0;  // 0 when scale weights are frozen

    /// α is trainable only in ratio1d mode; w only when S > 1.
    static ParamLayout for_model(const ScoreModel& model, bool learn_alpha = true,
                                 bool learn_weights = true);

    std::size_t size() const noexcept { return (has_alpha ? 1 : 0) + mlp_count + n_weights; }
    std::size_t mlp_offset() const noexcept { return has_alpha ? 1 : 0; }
    std::size_t weights_offset() const noexcept { return mlp_offset() + mlp_count; }
};

std::vector<double> pack_params(const ScoreModel& model, const ParamLayout& layout);
void unpack_params(std::span<const double> params, const ParamLayout& layout, ScoreModel& model);

struct LabeledRecord {
    const TokenLikelihoodRecord* record = nullptr;
    double target = 0.0;  // 1 = generated, 0 = real
};

struct LossOptions {
    double label_smoothing = 0.1;
    double lambda_w = 1e-2;
    /// Per-scale std of the Gaussian noise added to every f_θ input. Empty disables noise.
    std::span<const double> noise_sigmas;
};

struct LossAndGrad {
    double loss = 0.0;
    std::vector<double> grad;  // laid out per ParamLayout
};

/// Mean binary cross-entropy of sigmoid(P(x)) against smoothed targets, plus
/// λ_w·| ‖w‖₁ − 1 |, and its exact gradient. Noise draws come from `rng` and are
/// held constant during differentiation. Throws DivergenceError on a non-finite loss.
LossAndGrad loss_and_grad(const ScoreModel& model, const ParamLayout& layout,
                          std::span<const LabeledRecord> batch, const LossOptions& options,
                          std::mt19937_64* rng = nullptr);

struct AdamWConfig {
    double lr = 3e-3;
    double beta1 = 0.9;
    double beta2 = 0.999;
    double eps = 1e-8;
    double weight_decay = 1e-4;

    bool operator==(const AdamWConfig&) const = default;
};

struct OptimizerState {
    AdamWConfig hyper;
    std::size_t step = 0;
    std::vector<double> m;
    std::vector<double> v;
    std::vector<bool> decay_mask;  // empty = decay every coordinate

    OptimizerState() = default;
    OptimizerState(AdamWConfig config, std::size_t n)
        : hyper(config), m(n, 0.0), v(n, 0.0) {}
};

/// One AdamW update with decoupled weight decay, in place.
/// Throws DivergenceError if any updated parameter is non-finite.
void adamw_step(OptimizerState& state, std::span<double> params, std::span<const double> grad);

} // namespace prada
