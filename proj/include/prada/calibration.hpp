#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include "prada/records.hpp"
#include "prada/scores.hpp"
#include "prada/training.hpp"

namespace prada {

/// Every knob of the calibration procedure. Defaults are the reference setup.
struct CalibrationConfig {
    std::size_t steps = 3000;
    std::size_t batch_size = 64;
    std::size_t n_train_per_class = 250;
    AdamWConfig optimizer;
    bool decay_alpha_and_w = true;  // false: weight decay only on the network
    double label_smoothing = 0.1;
    double lambda_w = 1e-2;
    double noise_factor = 0.05;  // noise std per scale = factor * std of Δ on that scale
    ScoreMode mode = ScoreMode::ratio1d;
    bool learn_alpha = true;
    bool learn_w = true;
    std::size_t n_hidden = kDefaultHidden;
    double input_clamp = kDefaultInputClamp;
    std::uint64_t seed = 0;

    void validate() const;
    bool operator==(const CalibrationConfig&) const = default;
};

/// Canonical JSON text (fixed key order, exact doubles). Digest is taken over this text.
std::string config_to_json(const CalibrationConfig& config);
/// Missing keys keep their defaults; unknown keys are errors.
CalibrationConfig config_from_json(const std::string& text);
CalibrationConfig load_config(const std::filesystem::path& path);
std::string config_digest(const CalibrationConfig& config);

/// Indices into the real/fake inputs used for training and held out for testing.
struct DataSplit {
    std::vector<std::size_t> train_real;
    std::vector<std::size_t> train_fake;
    std::vector<std::size_t> test_real;
    std::vector<std::size_t> test_fake;
};

struct CalibrationRun {
    ScoreModel model;
    DataSplit split;
    std::uint64_t seed = 0;
    std::vector<double> loss_history;  // one entry per step
};

struct RunSet {
    std::vector<CalibrationRun> runs;
};

/// Per-scale std of Δ (α = 1) over all tokens of the given records.
std::vector<double> delta_std_per_scale(const std::vector<const TokenLikelihoodRecord*>& records);

/// α = 1, w = 1/S (exactly [1] for S = 1), network drawn uniformly in ±1/sqrt(fan_in).
ScoreModel initial_model(const std::string& generator_id,
                         const std::vector<std::size_t>& token_counts,
                         const CalibrationConfig& config);

CalibrationRun calibrate_detailed(const std::vector<TokenLikelihoodRecord>& real,
                                  const std::vector<TokenLikelihoodRecord>& fake,
                                  const CalibrationConfig& config);

ScoreModel calibrate(const std::vector<TokenLikelihoodRecord>& real,
                     const std::vector<TokenLikelihoodRecord>& fake,
                     const CalibrationConfig& config);

/// k independent calibrations with seeds config.seed + 0 .. k-1, each with its own split.
RunSet calibrate_runs(const std::vector<TokenLikelihoodRecord>& real,
                      const std::vector<TokenLikelihoodRecord>& fake,
                      const CalibrationConfig& config, std::size_t k = 5);

/// PRADA scores of a run's held-out records; labels are 1 for generated.
struct LabeledScores {
    std::vector<double> scores;
    std::vector<int> labels;
};
LabeledScores score_test_split(const CalibrationRun& run,
                               const std::vector<TokenLikelihoodRecord>& real,
                               const std::vector<TokenLikelihoodRecord>& fake);

} // namespace prada
