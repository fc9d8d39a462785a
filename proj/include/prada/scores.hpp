#pragma once

#include <cmath>
#include <cstddef>
#include <filesystem>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "prada/records.hpp"

namespace prada {

/// What the token scoring network sees per token.
enum class ScoreMode {
    ratio1d,  // [Δ^α]
    pair2d,   // [log p_cond, log p_uncond]; α is not used
};

std::string_view to_string(ScoreMode mode);
ScoreMode parse_score_mode(std::string_view text);

inline constexpr std::size_t kDefaultHidden = 16;
inline constexpr double kIcasA = 1.75;
inline constexpr double kIcasB = 1.3;
inline constexpr double kDefaultInputClamp = 50.0;

std::size_t mlp_parameter_count(std::size_t input_dim, std::size_t n_hidden);

/// Token scoring network: input_dim -> n_hidden -> n_hidden -> 1, ELU on both
/// hidden layers. Weight matrices are row-major with one row per output unit.
struct MlpParams {
    ScoreMode mode = ScoreMode::ratio1d;
    std::size_t n_hidden = kDefaultHidden;
    std::vector<double> w1;  // n_hidden x input_dim
    std::vector<double> b1;  // n_hidden
    std::vector<double> w2;  // n_hidden x n_hidden
    std::vector<double> b2;  // n_hidden
    std::vector<double> w3;  // n_hidden
    double b3 = 0.0;

    static MlpParams zeros(ScoreMode mode, std::size_t n_hidden = kDefaultHidden);

    std::size_t input_dim() const noexcept { return mode == ScoreMode::ratio1d ? 1 : 2; }
    std::size_t parameter_count() const noexcept {
        return mlp_parameter_count(input_dim(), n_hidden);
    }
    /// Throws ValidationError on inconsistent sizes or non-finite values.
    void validate() const;

    bool operator==(const MlpParams&) const = default;
};

/// Calibrated scoring function of one generator.
struct ScoreModel {
    std::string generator_id;
    double alpha = 1.0;
    MlpParams mlp;
    std::vector<double> scale_weights;
    std::vector<std::size_t> token_counts;
    std::vector<double> noise_sigmas;
    double input_clamp = kDefaultInputClamp;  // 0 disables clamping
    std::string config_json;                  // resolved calibration config, canonical JSON
    std::string config_digest;

    std::size_t num_scales() const noexcept { return token_counts.size(); }
    ScoreMode mode() const noexcept { return mlp.mode; }
    void validate() const;

    bool operator==(const ScoreModel&) const = default;
};

inline double delta(double log_pc, double log_pu) { return log_pc - log_pu; }

inline double delta_alpha(double log_pc, double log_pu, double alpha) {
    return (2.0 - alpha) * log_pc - alpha * log_pu;
}

double icas_token(double delta_value, double a = kIcasA, double b = kIcasB);

/// Flat token average of icas_token over every scale.
double icas_image(const TokenLikelihoodRecord& record, double a = kIcasA, double b = kIcasB);

/// Flat mean of Δ over all tokens.
double mean_delta(const TokenLikelihoodRecord& record);

inline double elu(double z) { return z >= 0.0 ? z : std::expm1(z); }

double mlp_forward(const MlpParams& mlp, std::span<const double> input);

/// Clamped f_θ input of one token for the model's mode. `out` receives input_dim values.
void token_input(const ScoreModel& model, double log_pc, double log_pu, std::span<double> out);

/// Weighted sum over scales of the per-scale mean token score.
/// Throws ValidationError on a scale layout or generator mismatch.
double prada_score(const TokenLikelihoodRecord& record, const ScoreModel& model);

std::vector<double> prada_scores(const std::vector<TokenLikelihoodRecord>& records,
                                 const ScoreModel& model);

/// Single-document JSON form; doubles round-trip exactly.
std::string serialize_model(const ScoreModel& model);
ScoreModel deserialize_model(const std::string& text);

void save_model(const ScoreModel& model, const std::filesystem::path& path);
ScoreModel load_model(const std::filesystem::path& path);

} // namespace prada
