#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <filesystem>
#include <random>
#include <span>
#include <string>
#include <vector>

#include "prada/records.hpp"
#include "prada/scores.hpp"
#include "prada/training.hpp"

namespace testutil {

inline prada::TokenLikelihoodRecord make_record(const std::string& id, const std::string& label,
                                                const std::vector<std::vector<double>>& cond,
                                                const std::vector<std::vector<double>>& uncond,
                                                const std::string& generator = "gen-a") {
    prada::TokenLikelihoodRecord r;
    r.image_id = id;
    r.source_label = label;
    r.generator_id = generator;
    r.condition = "class 0";
    for (std::size_t s = 0; s < cond.size(); ++s) {
        r.scales.push_back({s, cond[s], uncond[s]});
    }
    return r;
}

inline prada::TokenLikelihoodRecord random_record(std::mt19937_64& rng,
                                                  const std::vector<std::size_t>& layout,
                                                  const std::string& id,
                                                  const std::string& label = "real") {
    std::uniform_real_distribution<double> u(-8.0, -0.05);
    prada::TokenLikelihoodRecord r;
    r.image_id = id;
    r.source_label = label;
    r.generator_id = "gen-a";
    r.condition = "class 1";
    for (std::size_t s = 0; s < layout.size(); ++s) {
        prada::ScaleBlock b;
        b.scale_index = s;
        for (std::size_t t = 0; t < layout[s]; ++t) {
            b.log_p_cond.push_back(u(rng));
            b.log_p_uncond.push_back(u(rng));
        }
        r.scales.push_back(std::move(b));
    }
    return r;
}

inline prada::ScoreModel random_model(std::mt19937_64& rng, const std::vector<std::size_t>& layout,
                                      prada::ScoreMode mode = prada::ScoreMode::ratio1d,
                                      std::size_t hidden = 16, double scale = 0.6) {
    std::uniform_real_distribution<double> u(-scale, scale);
    prada::ScoreModel m;
    m.generator_id = "gen-a";
    m.alpha = 1.0 + u(rng);
    m.mlp = prada::MlpParams::zeros(mode, hidden);
    for (auto* v : {&m.mlp.w1, &m.mlp.b1, &m.mlp.w2, &m.mlp.b2, &m.mlp.w3}) {
        for (double& x : *v) x = u(rng);
    }
    m.mlp.b3 = u(rng);
    m.token_counts = layout;
    if (layout.size() == 1) {
        m.scale_weights = {1.0};
    } else {
        for (std::size_t s = 0; s < layout.size(); ++s) m.scale_weights.push_back(0.2 + std::abs(u(rng)));
    }
    return m;
}

/// Largest |analytic − central difference| / max(1, |analytic|) over all coordinates.
inline double max_gradient_error(const prada::ScoreModel& model, const prada::ParamLayout& layout,
                                 std::span<const prada::LabeledRecord> batch,
                                 const prada::LossOptions& options, double h = 1e-5) {
    const auto analytic = prada::loss_and_grad(model, layout, batch, options).grad;
    const auto params = prada::pack_params(model, layout);
    prada::ScoreModel probe = model;
    double worst = 0.0;
    for (std::size_t i = 0; i < params.size(); ++i) {
        auto p = params;
        p[i] = params[i] + h;
        prada::unpack_params(p, layout, probe);
        const double up = prada::loss_and_grad(probe, layout, batch, options).loss;
        p[i] = params[i] - h;
        prada::unpack_params(p, layout, probe);
        const double down = prada::loss_and_grad(probe, layout, batch, options).loss;
        const double numeric = (up - down) / (2.0 * h);
        worst = std::max(worst, std::abs(analytic[i] - numeric) / std::max(1.0, std::abs(analytic[i])));
    }
    return worst;
}

/// Fresh scratch directory under the system temp dir.
inline std::filesystem::path scratch_dir(const std::string& name) {
    auto dir = std::filesystem::temp_directory_path() / ("prada_test_" + name);
    std::filesystem::remove_all(dir);
    std::filesystem::create_directories(dir);
    return dir;
}

} // namespace testutil
