#include "prada/diagnostics.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>

#include "prada/errors.hpp"
#include "prada/evaluation.hpp"
#include "text_util.hpp"

namespace prada {

namespace {

using detail::format_double;

double token_value(TokenScore score, double log_pc, double log_pu) {
    const double d = delta(log_pc, log_pu);
    return score == TokenScore::delta ? d : icas_token(d);
}

std::ofstream open_out(const std::filesystem::path& path) {
    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    if (!out) throw IoError("cannot open '" + path.string() + "' for writing");
    return out;
}

void finish(std::ofstream& out, const std::filesystem::path& path) {
    out.flush();
    if (!out) throw IoError("write failure on '" + path.string() + "'");
}

} // namespace

TokenScore parse_token_score(std::string_view text) {
    if (text == "delta") return TokenScore::delta;
    if (text == "icas") return TokenScore::icas;
    throw ValidationError("unknown token score '" + std::string(text) + "' (expected delta or icas)");
}

std::vector<double> scale_auroc(const std::vector<TokenLikelihoodRecord>& real,
                                const std::vector<TokenLikelihoodRecord>& fake,
                                TokenScore score, bool per_scale) {
    if (real.empty() || fake.empty()) {
        throw ValidationError("scale_auroc needs both real and generated records");
    }
    const auto layout = real.front().token_counts();
    for (const auto* set : {&real, &fake}) {
        for (const auto& r : *set) {
            if (r.token_counts() != layout) {
                throw ValidationError("record '" + r.image_id + "' has an inconsistent scale layout");
            }
        }
    }
    const std::size_t n_scales = layout.size();
    std::vector<int> labels;
    labels.insert(labels.end(), real.size(), 0);
    labels.insert(labels.end(), fake.size(), 1);

    std::vector<double> out;
    out.reserve(n_scales);
    // Running per-image sums for the cumulative variant.
    std::vector<double> sums(real.size() + fake.size(), 0.0);
    std::size_t cum_tokens = 0;
    for (std::size_t s = 0; s < n_scales; ++s) {
        std::vector<double> image_scores;
        image_scores.reserve(sums.size());
        std::size_t row = 0;
        cum_tokens += layout[s];
        for (const auto* set : {&real, &fake}) {
            for (const auto& r : *set) {
                const ScaleBlock& b = r.scales[s];
                double sum = 0.0;
                for (std::size_t t = 0; t < b.size(); ++t) sum += token_value(score, b.log_p_cond[t], b.log_p_uncond[t]);
                sums[row] += sum;
                image_scores.push_back(per_scale ? sum / static_cast<double>(b.size())
                                                 : sums[row] / static_cast<double>(cum_tokens));
                ++row;
            }
        }
        out.push_back(auroc(image_scores, labels));
    }
    return out;
}

ScaleStats token_stats(const std::vector<TokenLikelihoodRecord>& records, double alpha) {
    if (records.empty()) throw ValidationError("token_stats needs at least one record");
    validate_shapes(records);
    const auto layout = records.front().token_counts();
    const double n = static_cast<double>(records.size());

    ScaleStats stats;
    for (std::size_t s = 0; s < layout.size(); ++s) {
        // Sums are taken relative to the first record so constant data gives exact moments.
        const ScaleBlock& first = records.front().scales[s];
        std::vector<double> pivot(layout[s]);
        for (std::size_t t = 0; t < layout[s]; ++t) pivot[t] = delta_alpha(first.log_p_cond[t], first.log_p_uncond[t], alpha);
        const double scale_pivot = pivot.front();
        std::vector<double> mean(layout[s], 0.0);
        double scale_sum = 0.0;
        for (const auto& r : records) {
            const ScaleBlock& b = r.scales[s];
            for (std::size_t t = 0; t < b.size(); ++t) {
                const double v = delta_alpha(b.log_p_cond[t], b.log_p_uncond[t], alpha);
                mean[t] += v - pivot[t];
                scale_sum += v - scale_pivot;
            }
        }
        for (std::size_t t = 0; t < layout[s]; ++t) mean[t] = pivot[t] + mean[t] / n;
        const double scale_mean = scale_pivot + scale_sum / (n * static_cast<double>(layout[s]));

        std::vector<double> var(layout[s], 0.0);
        double scale_ss = 0.0;
        for (const auto& r : records) {
            const ScaleBlock& b = r.scales[s];
            for (std::size_t t = 0; t < b.size(); ++t) {
                const double v = delta_alpha(b.log_p_cond[t], b.log_p_uncond[t], alpha);
                var[t] += (v - mean[t]) * (v - mean[t]);
                scale_ss += (v - scale_mean) * (v - scale_mean);
            }
        }
        for (std::size_t t = 0; t < layout[s]; ++t) {
            stats.token_scale.push_back(s);
            stats.token_mean.push_back(mean[t]);
            stats.token_std.push_back(std::sqrt(var[t] / n));
        }
        stats.scale_mean.push_back(scale_mean);
        stats.scale_std.push_back(std::sqrt(scale_ss / (n * static_cast<double>(layout[s]))));
    }
    return stats;
}

std::vector<double> empirical_cdf(std::span<const double> values, std::span<const double> grid) {
    if (values.empty()) throw ValidationError("empirical_cdf needs at least one value");
    if (!std::is_sorted(grid.begin(), grid.end())) {
        throw ValidationError("empirical_cdf grid must be sorted ascending");
    }
    std::vector<double> sorted(values.begin(), values.end());
    std::sort(sorted.begin(), sorted.end());
    std::vector<double> out;
    out.reserve(grid.size());
    for (double g : grid) {
        const auto count = std::upper_bound(sorted.begin(), sorted.end(), g) - sorted.begin();
        out.push_back(static_cast<double>(count) / static_cast<double>(sorted.size()));
    }
    return out;
}

std::vector<double> linspace(double lo, double hi, std::size_t n) {
    if (n == 0) return {};
    if (n == 1) return {lo};
    std::vector<double> out(n);
    const double step = (hi - lo) / static_cast<double>(n - 1);
    for (std::size_t i = 0; i < n; ++i) out[i] = lo + step * static_cast<double>(i);
    out.back() = hi;
    return out;
}

std::vector<double> default_curve_grid() { return linspace(-15.0, 5.0, 512); }

std::vector<CurvePoint> score_curve(const ScoreModel& model, std::span<const double> grid) {
    if (model.mode() != ScoreMode::ratio1d) {
        throw ValidationError("score_curve needs a ratio1d model; use the 2-D grid export for pair2d");
    }
    std::vector<CurvePoint> out;
    out.reserve(grid.size());
    for (double x : grid) {
        const double input[1] = {x};
        out.push_back({x, mlp_forward(model.mlp, input)});
    }
    return out;
}

std::vector<GridPoint> score_grid_2d(const ScoreModel& model, std::span<const double> cond_grid,
                                     std::span<const double> uncond_grid) {
    std::vector<GridPoint> out;
    out.reserve(cond_grid.size() * uncond_grid.size());
    double input[2] = {0.0, 0.0};
    const std::span<double> in(input, model.mlp.input_dim());
    for (double pc : cond_grid) {
        for (double pu : uncond_grid) {
            token_input(model, pc, pu, in);
            out.push_back({pc, pu, mlp_forward(model.mlp, in)});
        }
    }
    return out;
}

std::vector<WeightEntry> weight_dump(const ScoreModel& model) {
    std::vector<WeightEntry> out;
    for (std::size_t s = 0; s < model.scale_weights.size(); ++s) out.push_back({s, model.scale_weights[s]});
    return out;
}

std::vector<double> all_delta_alpha(const std::vector<TokenLikelihoodRecord>& records, double alpha) {
    std::vector<double> out;
    for (const auto& r : records) {
        for (const auto& b : r.scales) {
            for (std::size_t t = 0; t < b.size(); ++t) out.push_back(delta_alpha(b.log_p_cond[t], b.log_p_uncond[t], alpha));
        }
    }
    return out;
}

void write_scale_auroc_csv(std::span<const double> aurocs, const std::vector<std::size_t>& token_counts,
                           const std::filesystem::path& path) {
    auto out = open_out(path);
    out << "scale,tokens,auroc\n";
    for (std::size_t s = 0; s < aurocs.size(); ++s) {
        out << s << ',' << token_counts.at(s) << ',' << format_double(aurocs[s]) << '\n';
    }
    finish(out, path);
}

void write_token_stats_csv(const ScaleStats& real, const ScaleStats& fake,
                           const std::filesystem::path& path) {
    if (real.token_mean.size() != fake.token_mean.size()) {
        throw ValidationError("token statistics of the two classes have different layouts");
    }
    auto out = open_out(path);
    out << "token,scale,mean_real,std_real,mean_fake,std_fake\n";
    for (std::size_t i = 0; i < real.token_mean.size(); ++i) {
        out << i << ',' << real.token_scale[i] << ',' << format_double(real.token_mean[i]) << ','
            << format_double(real.token_std[i]) << ',' << format_double(fake.token_mean[i]) << ','
            << format_double(fake.token_std[i]) << '\n';
    }
    finish(out, path);
}

void write_cdf_csv(std::span<const double> grid, std::span<const double> cdf_real,
                   std::span<const double> cdf_fake, const std::filesystem::path& path) {
    auto out = open_out(path);
    out << "value,cdf_real,cdf_fake\n";
    for (std::size_t i = 0; i < grid.size(); ++i) {
        out << format_double(grid[i]) << ',' << format_double(cdf_real[i]) << ','
            << format_double(cdf_fake[i]) << '\n';
    }
    finish(out, path);
}

void write_score_curve_csv(std::span<const CurvePoint> curve, const std::filesystem::path& path) {
    auto out = open_out(path);
    out << "delta_alpha,score\n";
    for (const auto& p : curve) out << format_double(p.input) << ',' << format_double(p.score) << '\n';
    finish(out, path);
}

void write_score_grid_csv(std::span<const GridPoint> grid, const std::filesystem::path& path) {
    auto out = open_out(path);
    out << "log_p_cond,log_p_uncond,score\n";
    for (const auto& p : grid) {
        out << format_double(p.log_p_cond) << ',' << format_double(p.log_p_uncond) << ','
            << format_double(p.score) << '\n';
    }
    finish(out, path);
}

void write_weights_csv(std::span<const WeightEntry> weights, const std::filesystem::path& path) {
    auto out = open_out(path);
    out << "scale,weight\n";
    for (const auto& w : weights) out << w.scale << ',' << format_double(w.weight) << '\n';
    finish(out, path);
}

} // namespace prada
