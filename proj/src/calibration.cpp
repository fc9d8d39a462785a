#include "prada/calibration.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <numeric>
#include <sstream>

#include <json.hpp>

#include "prada/errors.hpp"
#include "prada/random.hpp"

namespace prada {

namespace {

using ordered_json = nlohmann::ordered_json;

enum Stream : std::uint64_t { kSplitStream = 1, kInitStream = 2, kShuffleStream = 3, kNoiseStream = 4 };

std::uint64_t fnv1a64(const std::string& text) {
    std::uint64_t h = 0xcbf29ce484222325ULL;
    for (unsigned char c : text) {
        h ^= c;
        h *= 0x100000001b3ULL;
    }
    return h;
}

template <typename T>
void read_field(const ordered_json& doc, const char* key, T& out) {
    if (auto it = doc.find(key); it != doc.end()) out = it->get<T>();
}

void check_inputs(const std::vector<TokenLikelihoodRecord>& real,
                  const std::vector<TokenLikelihoodRecord>& fake,
                  const CalibrationConfig& config) {
    config.validate();
    if (real.empty() || fake.empty()) {
        throw ValidationError("calibration needs both real and generated records");
    }
    const auto layout = real.front().token_counts();
    const std::string& generator = real.front().generator_id;
    for (const auto* set : {&real, &fake}) {
        for (const auto& record : *set) {
            if (record.token_counts() != layout) {
                throw ValidationError("record '" + record.image_id +
                                      "' has a scale layout inconsistent with the calibration data");
            }
            if (record.generator_id != generator) {
                throw ValidationError("record '" + record.image_id + "' was extracted under '" +
                                      record.generator_id + "', expected '" + generator +
                                      "' (calibrate one generator at a time)");
            }
        }
    }
    if (real.size() < config.n_train_per_class || fake.size() < config.n_train_per_class) {
        throw ValidationError("calibration needs at least " +
                              std::to_string(config.n_train_per_class) +
                              " records per class (got " + std::to_string(real.size()) +
                              " real, " + std::to_string(fake.size()) + " generated)");
    }
}

// Sorted train/test partition of [0, n).
void sample_split(std::size_t n, std::size_t n_train, std::mt19937_64& rng,
                  std::vector<std::size_t>& train, std::vector<std::size_t>& test) {
    std::vector<std::size_t> order(n);
    std::iota(order.begin(), order.end(), std::size_t{0});
    std::shuffle(order.begin(), order.end(), rng);
    train.assign(order.begin(), order.begin() + static_cast<std::ptrdiff_t>(n_train));
    test.assign(order.begin() + static_cast<std::ptrdiff_t>(n_train), order.end());
    std::sort(train.begin(), train.end());
    std::sort(test.begin(), test.end());
}

} // namespace

void CalibrationConfig::validate() const {
    if (steps == 0) throw ValidationError("config: steps must be > 0");
    if (batch_size == 0) throw ValidationError("config: batch_size must be > 0");
    if (n_train_per_class == 0) throw ValidationError("config: n_train_per_class must be > 0");
    if (n_hidden == 0) throw ValidationError("config: n_hidden must be > 0");
    if (!(label_smoothing >= 0.0 && label_smoothing < 1.0)) {
        throw ValidationError("config: label_smoothing must lie in [0, 1)");
    }
    if (!(lambda_w >= 0.0) || !(noise_factor >= 0.0)) {
        throw ValidationError("config: lambda_w and noise_factor must be non-negative");
    }
    if (!(optimizer.lr >= 0.0) || !(optimizer.beta1 >= 0.0 && optimizer.beta1 < 1.0) ||
        !(optimizer.beta2 >= 0.0 && optimizer.beta2 < 1.0) || !(optimizer.eps > 0.0) ||
        !(optimizer.weight_decay >= 0.0)) {
        throw ValidationError("config: invalid AdamW hyperparameters");
    }
    if (!(input_clamp >= 0.0) || !std::isfinite(input_clamp)) {
        throw ValidationError("config: input_clamp must be finite and non-negative");
    }
}

std::string config_to_json(const CalibrationConfig& config) {
    ordered_json doc;
    doc["steps"] = config.steps;
    doc["batch_size"] = config.batch_size;
    doc["n_train_per_class"] = config.n_train_per_class;
    doc["lr"] = config.optimizer.lr;
    doc["beta1"] = config.optimizer.beta1;
    doc["beta2"] = config.optimizer.beta2;
    doc["eps"] = config.optimizer.eps;
    doc["weight_decay"] = config.optimizer.weight_decay;
    doc["decay_alpha_and_w"] = config.decay_alpha_and_w;
    doc["label_smoothing"] = config.label_smoothing;
    doc["lambda_w"] = config.lambda_w;
    doc["noise_factor"] = config.noise_factor;
    doc["mode"] = std::string(to_string(config.mode));
    doc["learn_alpha"] = config.learn_alpha;
    doc["learn_w"] = config.learn_w;
    doc["n_hidden"] = config.n_hidden;
    doc["input_clamp"] = config.input_clamp;
    doc["seed"] = config.seed;
    return doc.dump();
}

CalibrationConfig config_from_json(const std::string& text) {
    static const char* const kKnown[] = {
        "steps", "batch_size", "n_train_per_class", "lr", "beta1", "beta2", "eps",
        "weight_decay", "decay_alpha_and_w", "label_smoothing", "lambda_w", "noise_factor",
        "mode", "learn_alpha", "learn_w", "n_hidden", "input_clamp", "seed"};
    ordered_json doc;
    try {
        doc = ordered_json::parse(text);
    } catch (const nlohmann::json::parse_error& e) {
        throw ValidationError(std::string("malformed calibration config: ") + e.what());
    }
    if (!doc.is_object()) throw ValidationError("calibration config must be a JSON object");
    for (const auto& item : doc.items()) {
        if (std::find_if(std::begin(kKnown), std::end(kKnown), [&](const char* k) {
                return item.key() == k;
            }) == std::end(kKnown)) {
            throw ValidationError("calibration config: unknown key '" + item.key() + "'");
        }
    }
    CalibrationConfig config;
    try {
        read_field(doc, "steps", config.steps);
        read_field(doc, "batch_size", config.batch_size);
        read_field(doc, "n_train_per_class", config.n_train_per_class);
        read_field(doc, "lr", config.optimizer.lr);
        read_field(doc, "beta1", config.optimizer.beta1);
        read_field(doc, "beta2", config.optimizer.beta2);
        read_field(doc, "eps", config.optimizer.eps);
        read_field(doc, "weight_decay", config.optimizer.weight_decay);
        read_field(doc, "decay_alpha_and_w", config.decay_alpha_and_w);
        read_field(doc, "label_smoothing", config.label_smoothing);
        read_field(doc, "lambda_w", config.lambda_w);
        read_field(doc, "noise_factor", config.noise_factor);
        if (auto it = doc.find("mode"); it != doc.end()) {
            config.mode = parse_score_mode(it->get<std::string>());
        }
        read_field(doc, "learn_alpha", config.learn_alpha);
        read_field(doc, "learn_w", config.learn_w);
        read_field(doc, "n_hidden", config.n_hidden);
        read_field(doc, "input_clamp", config.input_clamp);
        read_field(doc, "seed", config.seed);
    } catch (const nlohmann::json::exception& e) {
        throw ValidationError(std::string("calibration config: ") + e.what());
    }
    config.validate();
    return config;
}

CalibrationConfig load_config(const std::filesystem::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw IoError("cannot open calibration config '" + path.string() + "'");
    std::ostringstream buffer;
    buffer << in.rdbuf();
    return config_from_json(buffer.str());
}

std::string config_digest(const CalibrationConfig& config) {
    char buf[32];
    std::snprintf(buf, sizeof buf, "fnv1a64:%016llx",
                  static_cast<unsigned long long>(fnv1a64(config_to_json(config))));
    return buf;
}

std::vector<double> delta_std_per_scale(const std::vector<const TokenLikelihoodRecord*>& records) {
    if (records.empty()) return {};
    const std::size_t n_scales = records.front()->num_scales();
    std::vector<double> out(n_scales, 0.0);
    for (std::size_t s = 0; s < n_scales; ++s) {
        double sum = 0.0;
        std::size_t n = 0;
        for (const auto* r : records) {
            const ScaleBlock& b = r->scales[s];
            for (std::size_t t = 0; t < b.size(); ++t) sum += delta(b.log_p_cond[t], b.log_p_uncond[t]);
            n += b.size();
        }
        const double mean = sum / static_cast<double>(n);
        double ss = 0.0;
        for (const auto* r : records) {
            const ScaleBlock& b = r->scales[s];
            for (std::size_t t = 0; t < b.size(); ++t) {
                const double dv = delta(b.log_p_cond[t], b.log_p_uncond[t]) - mean;
                ss += dv * dv;
            }
        }
        out[s] = std::sqrt(ss / static_cast<double>(n));
    }
    return out;
}

ScoreModel initial_model(const std::string& generator_id,
                         const std::vector<std::size_t>& token_counts,
                         const CalibrationConfig& config) {
    if (token_counts.empty()) throw ValidationError("initial_model: no scales");
    ScoreModel model;
    model.generator_id = generator_id;
    model.alpha = 1.0;
    model.token_counts = token_counts;
    model.input_clamp = config.input_clamp;
    const std::size_t n_scales = token_counts.size();
    model.scale_weights.assign(n_scales, n_scales == 1 ? 1.0 : 1.0 / static_cast<double>(n_scales));
    model.mlp = MlpParams::zeros(config.mode, config.n_hidden);

    auto rng = make_engine(config.seed, kInitStream);
    auto fill = [&rng](std::vector<double>& v, std::size_t fan_in) {
        const double bound = 1.0 / std::sqrt(static_cast<double>(fan_in));
        std::uniform_real_distribution<double> dist(-bound, bound);
        for (double& x : v) x = dist(rng);
    };
    const std::size_t d = model.mlp.input_dim();
    const std::size_t h = config.n_hidden;
    fill(model.mlp.w1, d);
    fill(model.mlp.b1, d);
    fill(model.mlp.w2, h);
    fill(model.mlp.b2, h);
    fill(model.mlp.w3, h);
    std::vector<double> b3(1);
    fill(b3, h);
    model.mlp.b3 = b3[0];
    return model;
}

CalibrationRun calibrate_detailed(const std::vector<TokenLikelihoodRecord>& real,
                                  const std::vector<TokenLikelihoodRecord>& fake,
                                  const CalibrationConfig& config) {
    check_inputs(real, fake, config);

    CalibrationRun run;
    run.seed = config.seed;
    auto split_rng = make_engine(config.seed, kSplitStream);
    sample_split(real.size(), config.n_train_per_class, split_rng, run.split.train_real,
                 run.split.test_real);
    sample_split(fake.size(), config.n_train_per_class, split_rng, run.split.train_fake,
                 run.split.test_fake);

    std::vector<LabeledRecord> pool;
    std::vector<const TokenLikelihoodRecord*> train_records;
    for (std::size_t i : run.split.train_real) {
        pool.push_back({&real[i], 0.0});
        train_records.push_back(&real[i]);
    }
    for (std::size_t i : run.split.train_fake) {
        pool.push_back({&fake[i], 1.0});
        train_records.push_back(&fake[i]);
    }

    ScoreModel model = initial_model(real.front().generator_id, real.front().token_counts(), config);
    model.noise_sigmas = delta_std_per_scale(train_records);
    for (double& sigma : model.noise_sigmas) sigma *= config.noise_factor;

    const ParamLayout layout = ParamLayout::for_model(model, config.learn_alpha, config.learn_w);
    std::vector<double> params = pack_params(model, layout);
    OptimizerState optimizer(config.optimizer, layout.size());
    if (!config.decay_alpha_and_w) {
        optimizer.decay_mask.assign(layout.size(), false);
        std::fill_n(optimizer.decay_mask.begin() + static_cast<std::ptrdiff_t>(layout.mlp_offset()),
                    layout.mlp_count, true);
    }

    LossOptions options;
    options.label_smoothing = config.label_smoothing;
    options.lambda_w = config.lambda_w;
    if (config.noise_factor > 0.0) options.noise_sigmas = model.noise_sigmas;

    auto shuffle_rng = make_engine(config.seed, kShuffleStream);
    auto noise_rng = make_engine(config.seed, kNoiseStream);
    const std::size_t batch_size = std::min(config.batch_size, pool.size());
    std::vector<std::size_t> order(pool.size());
    std::iota(order.begin(), order.end(), std::size_t{0});
    std::size_t cursor = pool.size();
    std::vector<LabeledRecord> batch(batch_size);

    run.loss_history.reserve(config.steps);
    for (std::size_t step = 0; step < config.steps; ++step) {
        if (cursor + batch_size > pool.size()) {
            std::shuffle(order.begin(), order.end(), shuffle_rng);
            cursor = 0;
        }
        for (std::size_t b = 0; b < batch_size; ++b) batch[b] = pool[order[cursor + b]];
        cursor += batch_size;

        LossAndGrad lg = loss_and_grad(model, layout, batch, options, &noise_rng);
        run.loss_history.push_back(lg.loss);
        adamw_step(optimizer, params, lg.grad);
        unpack_params(params, layout, model);
    }

    model.config_json = config_to_json(config);
    model.config_digest = config_digest(config);
    run.model = std::move(model);
    return run;
}

ScoreModel calibrate(const std::vector<TokenLikelihoodRecord>& real,
                     const std::vector<TokenLikelihoodRecord>& fake,
                     const CalibrationConfig& config) {
    return calibrate_detailed(real, fake, config).model;
}

RunSet calibrate_runs(const std::vector<TokenLikelihoodRecord>& real,
                      const std::vector<TokenLikelihoodRecord>& fake,
                      const CalibrationConfig& config, std::size_t k) {
    if (k == 0) throw ValidationError("calibrate_runs: number of runs must be at least 1");
    RunSet set;
    set.runs.reserve(k);
    for (std::size_t i = 0; i < k; ++i) {
        CalibrationConfig run_config = config;
        run_config.seed = config.seed + i;
        set.runs.push_back(calibrate_detailed(real, fake, run_config));
    }
    return set;
}

LabeledScores score_test_split(const CalibrationRun& run,
                               const std::vector<TokenLikelihoodRecord>& real,
                               const std::vector<TokenLikelihoodRecord>& fake) {
    LabeledScores out;
    for (std::size_t i : run.split.test_real) {
        out.scores.push_back(prada_score(real.at(i), run.model));
        out.labels.push_back(0);
    }
    for (std::size_t i : run.split.test_fake) {
        out.scores.push_back(prada_score(fake.at(i), run.model));
        out.labels.push_back(1);
    }
    return out;
}

} // namespace prada
