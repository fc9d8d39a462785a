#include "prada/synth.hpp"

#include <cmath>
#include <cstdio>
#include <random>

#include <json.hpp>

#include "prada/errors.hpp"
#include "prada/random.hpp"

namespace prada {

namespace {

using ordered_json = nlohmann::ordered_json;

ScaleClassParams gauss(double mean, double std, double uncond_mean = -5.0, double uncond_std = 1.5) {
    return {{mean, std, 0.0, 0.0, 1.0}, uncond_mean, uncond_std};
}

ScaleClassParams mixture(double mean, double std, double tail_weight, double tail_mean,
                         double tail_std, double uncond_mean = -5.0, double uncond_std = 1.5) {
    return {{mean, std, tail_weight, tail_mean, tail_std}, uncond_mean, uncond_std};
}

void check_params(const ScaleClassParams& p, const std::string& where) {
    const auto& d = p.delta;
    if (!(d.std > 0.0) || !(d.tail_std > 0.0) || !(p.uncond_std > 0.0)) {
        throw ValidationError(where + ": standard deviations must be positive");
    }
    if (!(d.tail_weight >= 0.0 && d.tail_weight <= 1.0)) {
        throw ValidationError(where + ": tail_weight must lie in [0, 1]");
    }
    for (double v : {d.mean, d.std, d.tail_mean, d.tail_std, p.uncond_mean, p.uncond_std}) {
        if (!std::isfinite(v)) throw ValidationError(where + ": parameters must be finite");
    }
    // Keeps rejection sampling of the truncated normal cheap.
    if ((kUncondUpperBound - p.uncond_mean) / p.uncond_std < -3.0) {
        throw ValidationError(where + ": uncond_mean lies too far above the log-probability bound");
    }
}

TokenLikelihoodRecord draw_record(const SynthProfile& profile, bool generated, std::size_t index) {
    const auto& params = generated ? profile.fake : profile.real;
    auto rng = make_engine(mix_seed(profile.seed, generated ? 1 : 0), index);
    std::normal_distribution<double> normal(0.0, 1.0);
    std::uniform_real_distribution<double> unit(0.0, 1.0);

    TokenLikelihoodRecord record;
    char id[96];
    std::snprintf(id, sizeof id, "%s-%s-%06zu", profile.name.c_str(), generated ? "fake" : "real", index);
    record.image_id = id;
    record.source_label = generated ? profile.generator_id : TokenLikelihoodRecord::kRealLabel;
    record.generator_id = profile.generator_id;
    record.condition = "class " + std::to_string(index % 1000);
    for (std::size_t s = 0; s < profile.num_scales(); ++s) {
        const ScaleClassParams& p = params[s];
        ScaleBlock block;
        block.scale_index = s;
        block.log_p_cond.resize(profile.token_counts[s]);
        block.log_p_uncond.resize(profile.token_counts[s]);
        for (std::size_t t = 0; t < profile.token_counts[s]; ++t) {
            double u = 0.0;
            do {
                u = p.uncond_mean + p.uncond_std * normal(rng);
            } while (u > kUncondUpperBound);
            const bool tail = p.delta.tail_weight > 0.0 && unit(rng) < p.delta.tail_weight;
            const double d = tail ? p.delta.tail_mean + p.delta.tail_std * normal(rng)
                                  : p.delta.mean + p.delta.std * normal(rng);
            block.log_p_uncond[t] = u;
            block.log_p_cond[t] = u + d;
        }
        record.scales.push_back(std::move(block));
    }
    return record;
}

ordered_json params_to_json(const ScaleClassParams& p) {
    ordered_json j;
    j["delta_mean"] = p.delta.mean;
    j["delta_std"] = p.delta.std;
    j["tail_weight"] = p.delta.tail_weight;
    j["tail_mean"] = p.delta.tail_mean;
    j["tail_std"] = p.delta.tail_std;
    j["uncond_mean"] = p.uncond_mean;
    j["uncond_std"] = p.uncond_std;
    return j;
}

ScaleClassParams params_from_json(const ordered_json& j) {
    ScaleClassParams p;
    p.delta.mean = j.at("delta_mean").get<double>();
    p.delta.std = j.at("delta_std").get<double>();
    p.delta.tail_weight = j.value("tail_weight", 0.0);
    p.delta.tail_mean = j.value("tail_mean", 0.0);
    p.delta.tail_std = j.value("tail_std", 1.0);
    p.uncond_mean = j.at("uncond_mean").get<double>();
    p.uncond_std = j.at("uncond_std").get<double>();
    return p;
}

} // namespace

void SynthProfile::validate() const {
    const std::string where = "synth profile '" + name + "'";
    if (token_counts.empty()) throw ValidationError(where + ": needs at least one scale");
    for (std::size_t t : token_counts) {
        if (t == 0) throw ValidationError(where + ": every scale needs at least one token");
    }
    if (real.size() != token_counts.size() || fake.size() != token_counts.size()) {
        throw ValidationError(where + ": class parameters must be given for every scale");
    }
    for (std::size_t s = 0; s < token_counts.size(); ++s) {
        check_params(real[s], where + " real scale " + std::to_string(s));
        check_params(fake[s], where + " fake scale " + std::to_string(s));
    }
}

SynthDataset generate(const SynthProfile& profile, std::size_t n_real, std::size_t n_fake) {
    profile.validate();
    if (n_real == 0 || n_fake == 0) throw ValidationError("synth: record counts must be positive");
    SynthDataset data;
    data.real.reserve(n_real);
    data.fake.reserve(n_fake);
    for (std::size_t i = 0; i < n_real; ++i) data.real.push_back(draw_record(profile, false, i));
    for (std::size_t i = 0; i < n_fake; ++i) data.fake.push_back(draw_record(profile, true, i));
    return data;
}

std::vector<SynthProfile> builtin_profiles() {
    const std::vector<std::size_t> var_layout{1, 4, 9, 16, 25, 36};
    std::vector<SynthProfile> out;

    // Real images show a heavy negative Δ component on the fine scales; coarse
    // scales are uninformative and noisy.
    {
        SynthProfile p;
        p.name = "var-like";
        p.generator_id = "synth-var";
        p.token_counts = var_layout;
        for (std::size_t s = 0; s < 3; ++s) {
            p.real.push_back(gauss(0.3, 2.0));
            p.fake.push_back(gauss(0.3, 2.0));
        }
        for (std::size_t s = 3; s < 6; ++s) {
            p.real.push_back(mixture(0.9, 1.0, 0.1, -4.0, 1.5));
            p.fake.push_back(gauss(0.62, 1.0));
        }
        out.push_back(std::move(p));
    }
    // Role reversal: the generated class carries the negative tail, and generated
    // images are also more likely under the unconditional model.
    {
        SynthProfile p;
        p.name = "infinity-like";
        p.generator_id = "synth-infinity";
        p.token_counts = var_layout;
        for (std::size_t s = 0; s < 3; ++s) {
            p.real.push_back(gauss(1.0, 1.5, -5.5, 1.5));
            p.fake.push_back(mixture(1.3, 1.5, 0.2, -3.5, 1.5, -5.0, 1.5));
        }
        for (std::size_t s = 3; s < 6; ++s) {
            p.real.push_back(gauss(0.2, 1.0, -5.5, 1.5));
            p.fake.push_back(mixture(0.45, 1.0, 0.1, -3.5, 1.0, -5.2, 1.5));
        }
        out.push_back(std::move(p));
    }
    {
        SynthProfile p;
        p.name = "single-scale";
        p.generator_id = "synth-single";
        p.token_counts = {256};
        p.real.push_back(mixture(0.55, 1.2, 0.08, -3.5, 1.5));
        p.fake.push_back(gauss(0.5, 1.2));
        out.push_back(std::move(p));
    }
    // Only scale 1 separates the classes; the large finest scale is pure noise.
    {
        SynthProfile p;
        p.name = "one-hot-scale";
        p.generator_id = "synth-onehot";
        p.token_counts = {4, 16, 36, 64};
        for (std::size_t s = 0; s < 4; ++s) {
            p.real.push_back(s == 1 ? gauss(0.0, 1.0) : gauss(0.2, 2.0));
            p.fake.push_back(s == 1 ? gauss(0.6, 1.0) : gauss(0.2, 2.0));
        }
        out.push_back(std::move(p));
    }
    {
        SynthProfile p;
        p.name = "null";
        p.generator_id = "synth-null";
        p.token_counts = {1, 4, 9, 16};
        for (std::size_t s = 0; s < 4; ++s) {
            p.real.push_back(mixture(0.3, 1.5, 0.05, -3.0, 1.5));
            p.fake.push_back(mixture(0.3, 1.5, 0.05, -3.0, 1.5));
        }
        out.push_back(std::move(p));
    }
    return out;
}

SynthProfile builtin_profile(const std::string& name) {
    for (auto& p : builtin_profiles()) {
        if (p.name == name) return p;
    }
    std::string known;
    for (const auto& p : builtin_profiles()) known += (known.empty() ? "" : ", ") + p.name;
    throw ValidationError("unknown synth profile '" + name + "' (available: " + known + ")");
}

std::string profile_to_json(const SynthProfile& profile) {
    ordered_json doc;
    doc["name"] = profile.name;
    doc["version"] = profile.version;
    doc["generator_id"] = profile.generator_id;
    doc["token_counts"] = profile.token_counts;
    ordered_json real = ordered_json::array();
    ordered_json fake = ordered_json::array();
    for (const auto& p : profile.real) real.push_back(params_to_json(p));
    for (const auto& p : profile.fake) fake.push_back(params_to_json(p));
    doc["real"] = std::move(real);
    doc["fake"] = std::move(fake);
    doc["seed"] = profile.seed;
    return doc.dump(2);
}

SynthProfile profile_from_json(const std::string& text) {
    try {
        const auto doc = ordered_json::parse(text);
        SynthProfile p;
        p.name = doc.at("name").get<std::string>();
        p.version = doc.value("version", 1);
        p.generator_id = doc.at("generator_id").get<std::string>();
        p.token_counts = doc.at("token_counts").get<std::vector<std::size_t>>();
        for (const auto& j : doc.at("real")) p.real.push_back(params_from_json(j));
        for (const auto& j : doc.at("fake")) p.fake.push_back(params_from_json(j));
        p.seed = doc.value("seed", std::uint64_t{0});
        p.validate();
        return p;
    } catch (const nlohmann::json::exception& e) {
        throw ValidationError(std::string("invalid synth profile: ") + e.what());
    }
}

} // namespace prada
