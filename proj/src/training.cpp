#include "prada/training.hpp"

#include <algorithm>
#include <cmath>

#include "prada/errors.hpp"

namespace prada {

ParamLayout ParamLayout::for_model(const ScoreModel& model, bool learn_alpha, bool learn_weights) {
    ParamLayout layout;
    layout.has_alpha = learn_alpha && model.mode() == ScoreMode::ratio1d;
    layout.mlp_count = model.mlp.parameter_count();
    layout.n_weights = (learn_weights && model.num_scales() > 1) ? model.num_scales() : 0;
    return layout;
}

namespace {

// Visits the MLP parameter blocks in canonical order.
template <typename Mlp, typename Fn>
void for_each_mlp_block(Mlp& mlp, Fn&& fn) {
    fn(std::span(mlp.w1));
    fn(std::span(mlp.b1));
    fn(std::span(mlp.w2));
    fn(std::span(mlp.b2));
    fn(std::span(mlp.w3));
    fn(std::span(&mlp.b3, 1));
}

double sign(double x) { return x > 0.0 ? 1.0 : (x < 0.0 ? -1.0 : 0.0); }

double softplus(double x) { return std::max(x, 0.0) + std::log1p(std::exp(-std::abs(x))); }

double sigmoid(double x) {
    if (x >= 0.0) return 1.0 / (1.0 + std::exp(-x));
    const double e = std::exp(x);
    return e / (1.0 + e);
}

} // namespace

std::vector<double> pack_params(const ScoreModel& model, const ParamLayout& layout) {
    std::vector<double> params;
    params.reserve(layout.size());
    if (layout.has_alpha) params.push_back(model.alpha);
    for_each_mlp_block(model.mlp, [&params](std::span<const double> block) {
        params.insert(params.end(), block.begin(), block.end());
    });
    if (layout.n_weights > 0) {
        params.insert(params.end(), model.scale_weights.begin(), model.scale_weights.end());
    }
    return params;
}

void unpack_params(std::span<const double> params, const ParamLayout& layout, ScoreModel& model) {
    if (params.size() != layout.size()) {
        throw ValidationError("parameter vector has " + std::to_string(params.size()) +
                              " entries, layout expects " + std::to_string(layout.size()));
    }
    std::size_t pos = 0;
    if (layout.has_alpha) model.alpha = params[pos++];
    for_each_mlp_block(model.mlp, [&](std::span<double> block) {
        std::copy_n(params.begin() + static_cast<std::ptrdiff_t>(pos), block.size(), block.begin());
        pos += block.size();
    });
    if (layout.n_weights > 0) {
        std::copy_n(params.begin() + static_cast<std::ptrdiff_t>(pos), layout.n_weights,
                    model.scale_weights.begin());
    }
}

namespace {

struct GradView {
    double* alpha = nullptr;
    double* w1 = nullptr;
    double* b1 = nullptr;
    double* w2 = nullptr;
    double* b2 = nullptr;
    double* w3 = nullptr;
    double* b3 = nullptr;
    double* weights = nullptr;
};

// Forward and backward pass over the tokens of one record. kHidden > 0 fixes the
// hidden width at compile time; 0 reads it from the model. Token activations are
// cached row-major (token × unit) so the backward sums run over whole records.
template <std::size_t kHidden>
class RecordPass {
public:
    RecordPass(const ScoreModel& model, const LossOptions& options, std::mt19937_64* rng)
        : model_(model),
          mlp_(model.mlp),
          hidden_(kHidden > 0 ? kHidden : model.mlp.n_hidden),
          dim_(model.mlp.input_dim()),
          options_(options),
          rng_(rng),
          w2t_(hidden_ * hidden_),
          scale_means_(model.num_scales()),
          acc_(hidden_) {
        const std::size_t h = hidden();
        for (std::size_t k = 0; k < h; ++k) {
            for (std::size_t j = 0; j < h; ++j) w2t_[j * h + k] = mlp_.w2[k * h + j];
        }
    }

    // Returns this record's contribution to the loss and accumulates its gradient.
    double run(const LabeledRecord& item, double inv_batch, const GradView& g) {
        const TokenLikelihoodRecord& record = *item.record;
        const std::size_t tokens = record.num_tokens();
        resize(tokens);

        double score = 0.0;
        std::size_t tok = 0;
        for (std::size_t s = 0; s < record.num_scales(); ++s) {
            const std::size_t n = record.scales[s].size();
            fill_inputs(record.scales[s], s, tok);
            double sum = 0.0;
            for (std::size_t t = tok; t < tok + n; ++t) sum += forward(t);
            scale_means_[s] = sum / static_cast<double>(n);
            score += model_.scale_weights[s] * scale_means_[s];
            tok += n;
        }

        const double eps = options_.label_smoothing;
        const double target = item.target * (1.0 - eps) + 0.5 * eps;
        const double loss = (softplus(score) - target * score) * inv_batch;
        const double g_score = (sigmoid(score) - target) * inv_batch;
        if (g.weights != nullptr) {
            for (std::size_t s = 0; s < record.num_scales(); ++s) g.weights[s] += g_score * scale_means_[s];
        }

        tok = 0;
        for (std::size_t s = 0; s < record.num_scales(); ++s) {
            const std::size_t n = record.scales[s].size();
            const double g_y = g_score * model_.scale_weights[s] / static_cast<double>(n);
            std::fill_n(&g_y_[tok], n, g_y);
            tok += n;
        }
        backward(tokens, g);

        if (g.alpha != nullptr) {
            tok = 0;
            for (const ScaleBlock& block : record.scales) {
                for (std::size_t t = 0; t < block.size(); ++t, ++tok) {
                    if (clamped_[tok * dim_]) continue;
                    // dΔ^α/dα = −(log p_cond + log p_uncond)
                    *g.alpha -= g_x0_[tok] * (block.log_p_cond[t] + block.log_p_uncond[t]);
                }
            }
        }
        return loss;
    }

private:
    std::size_t hidden() const noexcept { return kHidden > 0 ? kHidden : hidden_; }

    void resize(std::size_t tokens) {
        const std::size_t h = hidden();
        x_.resize(tokens * dim_);
        clamped_.resize(tokens * dim_);
        z1_.resize(tokens * h);
        h1_.resize(tokens * h);
        z2_.resize(tokens * h);
        h2_.resize(tokens * h);
        gz1_.resize(tokens * h);
        gz2_.resize(tokens * h);
        g_y_.resize(tokens);
        g_x0_.resize(tokens);
    }

    void fill_inputs(const ScaleBlock& block, std::size_t s, std::size_t first) {
        const std::size_t d = dim_;
        const bool noisy = !options_.noise_sigmas.empty();
        const double sigma = noisy ? options_.noise_sigmas[s] : 0.0;
        const double clamp = model_.input_clamp;
        for (std::size_t t = 0; t < block.size(); ++t) {
            double* x = &x_[(first + t) * d];
            char* clipped = &clamped_[(first + t) * d];
            if (mlp_.mode == ScoreMode::ratio1d) {
                x[0] = delta_alpha(block.log_p_cond[t], block.log_p_uncond[t], model_.alpha);
            } else {
                x[0] = block.log_p_cond[t];
                x[1] = block.log_p_uncond[t];
            }
            for (std::size_t i = 0; i < d; ++i) {
                if (noisy) x[i] += sigma * normal_(*rng_);
                clipped[i] = clamp > 0.0 && std::abs(x[i]) > clamp;
                if (clipped[i]) x[i] = std::clamp(x[i], -clamp, clamp);
            }
        }
    }

    double forward(std::size_t t) {
        const std::size_t h = hidden();
        const std::size_t d = dim_;
        const double* __restrict x = &x_[t * d];
        const double* __restrict w1 = mlp_.w1.data();
        const double* __restrict b1 = mlp_.b1.data();
        const double* __restrict w2t = w2t_.data();
        double* __restrict z1 = &z1_[t * h];
        double* __restrict h1 = &h1_[t * h];
        double* __restrict z2 = &z2_[t * h];
        double* __restrict h2 = &h2_[t * h];
        for (std::size_t j = 0; j < h; ++j) {
            double z = b1[j];
            for (std::size_t i = 0; i < d; ++i) z += w1[j * d + i] * x[i];
            z1[j] = z;
            h1[j] = elu(z);
        }
        double local[kHidden > 0 ? kHidden : 1];
        double* __restrict acc = kHidden > 0 ? local : acc_.data();
        for (std::size_t k = 0; k < h; ++k) acc[k] = mlp_.b2[k];
        for (std::size_t j = 0; j < h; ++j) {
            const double hj = h1[j];
            const double* __restrict col = w2t + j * h;
            for (std::size_t k = 0; k < h; ++k) acc[k] += col[k] * hj;
        }
        double y = mlp_.b3;
        for (std::size_t k = 0; k < h; ++k) {
            z2[k] = acc[k];
            h2[k] = elu(acc[k]);
            y += mlp_.w3[k] * h2[k];
        }
        return y;
    }

    // Accumulates parameter gradients for dL/dy_t = g_y_[t]; leaves dL/dx_t[0] in g_x0_.
    void backward(std::size_t tokens, const GradView& g) {
        const std::size_t h = hidden();
        const std::size_t d = dim_;
        const double* __restrict w1 = mlp_.w1.data();
        const double* __restrict w2 = mlp_.w2.data();
        const double* __restrict w3 = mlp_.w3.data();
        const double* __restrict z1 = z1_.data();
        const double* __restrict h1 = h1_.data();
        const double* __restrict z2 = z2_.data();
        const double* __restrict h2 = h2_.data();
        const double* __restrict x = x_.data();
        const double* __restrict g_y = g_y_.data();
        double* __restrict gz1 = gz1_.data();
        double* __restrict gz2 = gz2_.data();
        double local[kHidden > 0 ? kHidden : 1];
        double* __restrict acc = kHidden > 0 ? local : acc_.data();

        for (std::size_t t = 0; t < tokens; ++t) {
            *g.b3 += g_y[t];
            for (std::size_t k = 0; k < h; ++k) {
                const std::size_t i = t * h + k;
                gz2[i] = g_y[t] * w3[k] * (z2[i] >= 0.0 ? 1.0 : h2[i] + 1.0);
            }
        }
        for (std::size_t k = 0; k < h; ++k) acc[k] = 0.0;
        for (std::size_t t = 0; t < tokens; ++t) {
            for (std::size_t k = 0; k < h; ++k) acc[k] += g_y[t] * h2[t * h + k];
        }
        for (std::size_t k = 0; k < h; ++k) g.w3[k] += acc[k];
        for (std::size_t k = 0; k < h; ++k) acc[k] = 0.0;
        for (std::size_t t = 0; t < tokens; ++t) {
            for (std::size_t k = 0; k < h; ++k) acc[k] += gz2[t * h + k];
        }
        for (std::size_t k = 0; k < h; ++k) g.b2[k] += acc[k];

        for (std::size_t k = 0; k < h; ++k) {
            for (std::size_t j = 0; j < h; ++j) acc[j] = 0.0;
            for (std::size_t t = 0; t < tokens; ++t) {
                const double gk = gz2[t * h + k];
                for (std::size_t j = 0; j < h; ++j) acc[j] += gk * h1[t * h + j];
            }
            for (std::size_t j = 0; j < h; ++j) g.w2[k * h + j] += acc[j];
        }

        for (std::size_t t = 0; t < tokens; ++t) {
            for (std::size_t j = 0; j < h; ++j) acc[j] = 0.0;
            for (std::size_t k = 0; k < h; ++k) {
                const double gk = gz2[t * h + k];
                for (std::size_t j = 0; j < h; ++j) acc[j] += gk * w2[k * h + j];
            }
            double g_x0 = 0.0;
            for (std::size_t j = 0; j < h; ++j) {
                const std::size_t i = t * h + j;
                gz1[i] = acc[j] * (z1[i] >= 0.0 ? 1.0 : h1[i] + 1.0);
                g_x0 += gz1[i] * w1[j * d];
            }
            g_x0_[t] = g_x0;
        }

        for (std::size_t j = 0; j < h; ++j) acc[j] = 0.0;
        for (std::size_t t = 0; t < tokens; ++t) {
            for (std::size_t j = 0; j < h; ++j) acc[j] += gz1[t * h + j];
        }
        for (std::size_t j = 0; j < h; ++j) g.b1[j] += acc[j];
        for (std::size_t i = 0; i < d; ++i) {
            for (std::size_t j = 0; j < h; ++j) acc[j] = 0.0;
            for (std::size_t t = 0; t < tokens; ++t) {
                const double xi = x[t * d + i];
                for (std::size_t j = 0; j < h; ++j) acc[j] += gz1[t * h + j] * xi;
            }
            for (std::size_t j = 0; j < h; ++j) g.w1[j * d + i] += acc[j];
        }
    }

    const ScoreModel& model_;
    const MlpParams& mlp_;
    std::size_t hidden_;
    std::size_t dim_;
    const LossOptions& options_;
    std::mt19937_64* rng_;
    std::normal_distribution<double> normal_{0.0, 1.0};
    std::vector<double> w2t_;
    std::vector<double> scale_means_;
    std::vector<double> acc_;
    std::vector<double> x_;
    std::vector<char> clamped_;
    std::vector<double> z1_, h1_, z2_, h2_, gz1_, gz2_;
    std::vector<double> g_y_, g_x0_;
};

template <std::size_t kHidden>
double run_batch(const ScoreModel& model, std::span<const LabeledRecord> batch,
                 const LossOptions& options, std::mt19937_64* rng, const GradView& g) {
    RecordPass<kHidden> pass(model, options, rng);
    const double inv_batch = 1.0 / static_cast<double>(batch.size());
    double loss = 0.0;
    for (const LabeledRecord& item : batch) loss += pass.run(item, inv_batch, g);
    return loss;
}

} // namespace

LossAndGrad loss_and_grad(const ScoreModel& model, const ParamLayout& layout,
                          std::span<const LabeledRecord> batch, const LossOptions& options,
                          std::mt19937_64* rng) {
    if (batch.empty()) throw ValidationError("loss_and_grad needs a nonempty batch");
    const bool noisy = !options.noise_sigmas.empty();
    if (noisy && (rng == nullptr || options.noise_sigmas.size() != model.num_scales())) {
        throw ValidationError("noise needs one sigma per scale and a random generator");
    }
    for (const LabeledRecord& item : batch) {
        const TokenLikelihoodRecord& record = *item.record;
        bool match = record.num_scales() == model.num_scales();
        for (std::size_t s = 0; match && s < record.num_scales(); ++s) {
            match = record.scales[s].size() == model.token_counts[s];
        }
        if (!match) {
            throw ValidationError("record '" + record.image_id +
                                  "' scale layout does not match the score model");
        }
        if (item.target != 0.0 && item.target != 1.0) {
            throw ValidationError("targets must be 0 (real) or 1 (generated)");
        }
    }

    const std::size_t hidden = model.mlp.n_hidden;
    const std::size_t d = model.mlp.input_dim();
    LossAndGrad result;
    result.grad.assign(layout.size(), 0.0);
    GradView g;
    g.alpha = layout.has_alpha ? &result.grad[0] : nullptr;
    g.w1 = result.grad.data() + layout.mlp_offset();
    g.b1 = g.w1 + hidden * d;
    g.w2 = g.b1 + hidden;
    g.b2 = g.w2 + hidden * hidden;
    g.w3 = g.b2 + hidden;
    g.b3 = g.w3 + hidden;
    g.weights = layout.n_weights > 0 ? result.grad.data() + layout.weights_offset() : nullptr;

    result.loss = hidden == kDefaultHidden ? run_batch<kDefaultHidden>(model, batch, options, rng, g)
                                           : run_batch<0>(model, batch, options, rng, g);

    double l1 = 0.0;
    for (double w : model.scale_weights) l1 += std::abs(w);
    result.loss += options.lambda_w * std::abs(l1 - 1.0);
    if (g.weights != nullptr) {
        const double outer = options.lambda_w * sign(l1 - 1.0);
        for (std::size_t s = 0; s < layout.n_weights; ++s) {
            g.weights[s] += outer * sign(model.scale_weights[s]);
        }
    }

    if (!std::isfinite(result.loss)) throw DivergenceError("calibration loss is not finite");
    return result;
}

void adamw_step(OptimizerState& state, std::span<double> params, std::span<const double> grad) {
    if (params.size() != grad.size() || state.m.size() != params.size() ||
        state.v.size() != params.size()) {
        throw ValidationError("adamw_step: parameter, gradient and moment sizes differ");
    }
    if (!state.decay_mask.empty() && state.decay_mask.size() != params.size()) {
        throw ValidationError("adamw_step: decay mask size differs from parameter count");
    }
    const AdamWConfig& h = state.hyper;
    ++state.step;
    const double t = static_cast<double>(state.step);
    const double correction1 = 1.0 - std::pow(h.beta1, t);
    const double correction2 = 1.0 - std::pow(h.beta2, t);
    for (std::size_t i = 0; i < params.size(); ++i) {
        const double g = grad[i];
        state.m[i] = h.beta1 * state.m[i] + (1.0 - h.beta1) * g;
        state.v[i] = h.beta2 * state.v[i] + (1.0 - h.beta2) * g * g;
        const double m_hat = state.m[i] / correction1;
        const double v_hat = state.v[i] / correction2;
        const bool decay = state.decay_mask.empty() || state.decay_mask[i];
        const double update = m_hat / (std::sqrt(v_hat) + h.eps) + (decay ? h.weight_decay * params[i] : 0.0);
        params[i] -= h.lr * update;
        if (!std::isfinite(params[i]) || !std::isfinite(state.m[i]) || !std::isfinite(state.v[i])) {
            throw DivergenceError("AdamW update produced a non-finite value at coordinate " +
                                  std::to_string(i));
        }
    }
}

} // namespace prada
