#pragma once

#include <cstddef>
#include <cstdint>
#include <string>
#include <vector>

#include "prada/records.hpp"

namespace prada {

/// Δ distribution of one class on one scale: a main Gaussian mode plus an optional
/// Gaussian tail component drawn with probability `tail_weight`.
struct DeltaMixture {
    double mean = 0.0;
    double std = 1.0;
    double tail_weight = 0.0;
    double tail_mean = 0.0;
    double tail_std = 1.0;

    bool operator==(const DeltaMixture&) const = default;
};

struct ScaleClassParams {
    DeltaMixture delta;
    double uncond_mean = -5.0;  // log p_uncond ~ N(mean, std²) truncated to <= -0.01
    double uncond_std = 1.5;

    bool operator==(const ScaleClassParams&) const = default;
};

struct SynthProfile {
    std::string name;
    int version = 1;
    std::string generator_id;
    std::vector<std::size_t> token_counts;
    std::vector<ScaleClassParams> real;  // one per scale
    std::vector<ScaleClassParams> fake;  // one per scale
    std::uint64_t seed = 0;

    std::size_t num_scales() const noexcept { return token_counts.size(); }
    /// Throws ValidationError for non-positive stds, weights outside [0,1] or
    /// mismatched scale counts.
    void validate() const;

    bool operator==(const SynthProfile&) const = default;
};

struct SynthDataset {
    std::vector<TokenLikelihoodRecord> real;
    std::vector<TokenLikelihoodRecord> fake;
};

inline constexpr double kUncondUpperBound = -0.01;

/// Deterministic given profile.seed; every record draws from its own substream.
SynthDataset generate(const SynthProfile& profile, std::size_t n_real, std::size_t n_fake);

/// var-like, infinity-like, single-scale, one-hot-scale, null.
std::vector<SynthProfile> builtin_profiles();
SynthProfile builtin_profile(const std::string& name);

std::string profile_to_json(const SynthProfile& profile);
SynthProfile profile_from_json(const std::string& text);

} // namespace prada
