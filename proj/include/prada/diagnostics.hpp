#pragma once

#include <cstddef>
#include <filesystem>
#include <span>
#include <string_view>
#include <vector>

#include "prada/records.hpp"
#include "prada/scores.hpp"

namespace prada {

/// Closed-form token scores usable without calibration.
enum class TokenScore { delta, icas };

TokenScore parse_token_score(std::string_view text);

/// AUROC per scale of the per-image mean token score. With `per_scale` the mean is
/// restricted to scale s; otherwise it covers scales 0..s (cumulative).
std::vector<double> scale_auroc(const std::vector<TokenLikelihoodRecord>& real,
                                const std::vector<TokenLikelihoodRecord>& fake,
                                TokenScore score, bool per_scale = true);

/// Δ^α statistics; std is the population standard deviation.
struct ScaleStats {
    std::vector<double> scale_mean;        // per scale, over all tokens of all records
    std::vector<double> scale_std;
    std::vector<std::size_t> token_scale;  // per token position, coarse to fine
    std::vector<double> token_mean;        // per token position, across records
    std::vector<double> token_std;
};

ScaleStats token_stats(const std::vector<TokenLikelihoodRecord>& records, double alpha);

/// Fraction of values <= each grid point. The grid must be sorted ascending.
std::vector<double> empirical_cdf(std::span<const double> values, std::span<const double> grid);

/// Evenly spaced grid including both ends.
std::vector<double> linspace(double lo, double hi, std::size_t n);

/// 512 points over [-15, 5].
std::vector<double> default_curve_grid();

struct CurvePoint {
    double input = 0.0;
    double score = 0.0;
};

/// f_θ tabulated over Δ^α values. Only for ratio1d models.
std::vector<CurvePoint> score_curve(const ScoreModel& model, std::span<const double> grid);

struct GridPoint {
    double log_p_cond = 0.0;
    double log_p_uncond = 0.0;
    double score = 0.0;
};

/// Token score as a function of (log p_cond, log p_uncond), for either mode.
std::vector<GridPoint> score_grid_2d(const ScoreModel& model, std::span<const double> cond_grid,
                                     std::span<const double> uncond_grid);

struct WeightEntry {
    std::size_t scale = 0;
    double weight = 0.0;
};

std::vector<WeightEntry> weight_dump(const ScoreModel& model);

/// All Δ^α values of the given records, flattened.
std::vector<double> all_delta_alpha(const std::vector<TokenLikelihoodRecord>& records, double alpha);

void write_scale_auroc_csv(std::span<const double> aurocs, const std::vector<std::size_t>& token_counts,
                           const std::filesystem::path& path);
void write_token_stats_csv(const ScaleStats& real, const ScaleStats& fake,
                           const std::filesystem::path& path);
void write_cdf_csv(std::span<const double> grid, std::span<const double> cdf_real,
                   std::span<const double> cdf_fake, const std::filesystem::path& path);
void write_score_curve_csv(std::span<const CurvePoint> curve, const std::filesystem::path& path);
void write_score_grid_csv(std::span<const GridPoint> grid, const std::filesystem::path& path);
void write_weights_csv(std::span<const WeightEntry> weights, const std::filesystem::path& path);

} // namespace prada
