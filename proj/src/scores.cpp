#include "prada/scores.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <sstream>

#include <json.hpp>

#include "prada/errors.hpp"

namespace prada {

namespace {

using ordered_json = nlohmann::ordered_json;

void require_size(const std::vector<double>& v, std::size_t n, const char* name) {
    if (v.size() != n) {
        throw ValidationError(std::string("mlp field '") + name + "' has " +
                              std::to_string(v.size()) + " values, expected " +
                              std::to_string(n));
    }
}

void require_finite(std::span<const double> v, const char* name) {
    for (double x : v) {
        if (!std::isfinite(x)) throw ValidationError(std::string(name) + " contains a non-finite value");
    }
}

std::vector<double> read_doubles(const ordered_json& node, const char* key) {
    auto it = node.find(key);
    if (it == node.end() || !it->is_array()) {
        throw ValidationError(std::string("model field '") + key + "' missing or not an array");
    }
    std::vector<double> out;
    out.reserve(it->size());
    for (const auto& v : *it) {
        if (!v.is_number()) throw ValidationError(std::string("model field '") + key + "' holds a non-number");
        out.push_back(v.get<double>());
    }
    return out;
}

} // namespace

std::string_view to_string(ScoreMode mode) {
    return mode == ScoreMode::ratio1d ? "ratio1d" : "pair2d";
}

ScoreMode parse_score_mode(std::string_view text) {
    if (text == "ratio1d") return ScoreMode::ratio1d;
    if (text == "pair2d") return ScoreMode::pair2d;
    throw ValidationError("unknown score mode '" + std::string(text) + "' (expected ratio1d or pair2d)");
}

std::size_t mlp_parameter_count(std::size_t input_dim, std::size_t n_hidden) {
    return (input_dim * n_hidden + n_hidden) + (n_hidden * n_hidden + n_hidden) + (n_hidden + 1);
}

MlpParams MlpParams::zeros(ScoreMode mode, std::size_t n_hidden) {
    MlpParams p;
    p.mode = mode;
    p.n_hidden = n_hidden;
    p.w1.assign(n_hidden * p.input_dim(), 0.0);
    p.b1.assign(n_hidden, 0.0);
    p.w2.assign(n_hidden * n_hidden, 0.0);
    p.b2.assign(n_hidden, 0.0);
    p.w3.assign(n_hidden, 0.0);
    p.b3 = 0.0;
    return p;
}

void MlpParams::validate() const {
    if (n_hidden == 0) throw ValidationError("mlp must have at least one hidden unit");
    require_size(w1, n_hidden * input_dim(), "w1");
    require_size(b1, n_hidden, "b1");
    require_size(w2, n_hidden * n_hidden, "w2");
    require_size(b2, n_hidden, "b2");
    require_size(w3, n_hidden, "w3");
    for (const auto* v : {&w1, &b1, &w2, &b2, &w3}) require_finite(*v, "mlp parameters");
    if (!std::isfinite(b3)) throw ValidationError("mlp parameters contain a non-finite value");
}

void ScoreModel::validate() const {
    mlp.validate();
    if (token_counts.empty()) throw ValidationError("score model has no scales");
    if (scale_weights.size() != token_counts.size()) {
        throw ValidationError("score model has " + std::to_string(scale_weights.size()) +
                              " scale weights for " + std::to_string(token_counts.size()) +
                              " scales");
    }
    if (token_counts.size() == 1 && scale_weights.front() != 1.0) {
        throw ValidationError("single-scale score model must have scale weight 1");
    }
    if (std::find(token_counts.begin(), token_counts.end(), 0u) != token_counts.end()) {
        throw ValidationError("score model has an empty scale");
    }
    if (!std::isfinite(alpha)) throw ValidationError("alpha is not finite");
    require_finite(scale_weights, "scale_weights");
    require_finite(noise_sigmas, "noise_sigmas");
    if (!(input_clamp >= 0.0) || !std::isfinite(input_clamp)) {
        throw ValidationError("input_clamp must be a finite non-negative value");
    }
}

double icas_token(double delta_value, double a, double b) {
    return delta_value / (a + std::exp(b * delta_value));
}

double icas_image(const TokenLikelihoodRecord& record, double a, double b) {
    double sum = 0.0;
    std::size_t n = 0;
    for (const auto& block : record.scales) {
        for (std::size_t t = 0; t < block.size(); ++t) {
            sum += icas_token(delta(block.log_p_cond[t], block.log_p_uncond[t]), a, b);
        }
        n += block.size();
    }
    return n == 0 ? 0.0 : sum / static_cast<double>(n);
}

double mean_delta(const TokenLikelihoodRecord& record) {
    double sum = 0.0;
    std::size_t n = 0;
    for (const auto& block : record.scales) {
        for (std::size_t t = 0; t < block.size(); ++t) {
            sum += delta(block.log_p_cond[t], block.log_p_uncond[t]);
        }
        n += block.size();
    }
    return n == 0 ? 0.0 : sum / static_cast<double>(n);
}

namespace {

double forward_with(const MlpParams& mlp, std::span<const double> input, std::vector<double>& h1,
                    std::vector<double>& h2) {
    const std::size_t hidden = mlp.n_hidden;
    const std::size_t d = mlp.input_dim();
    h1.resize(hidden);
    h2.resize(hidden);
    for (std::size_t j = 0; j < hidden; ++j) {
        double z = mlp.b1[j];
        for (std::size_t i = 0; i < d; ++i) z += mlp.w1[j * d + i] * input[i];
        h1[j] = elu(z);
    }
    for (std::size_t k = 0; k < hidden; ++k) {
        double z = mlp.b2[k];
        const double* row = &mlp.w2[k * hidden];
        for (std::size_t j = 0; j < hidden; ++j) z += row[j] * h1[j];
        h2[k] = elu(z);
    }
    double out = mlp.b3;
    for (std::size_t k = 0; k < hidden; ++k) out += mlp.w3[k] * h2[k];
    return out;
}

} // namespace

double mlp_forward(const MlpParams& mlp, std::span<const double> input) {
    if (input.size() != mlp.input_dim()) {
        throw ValidationError("mlp input has " + std::to_string(input.size()) +
                              " values, expected " + std::to_string(mlp.input_dim()));
    }
    std::vector<double> h1;
    std::vector<double> h2;
    return forward_with(mlp, input, h1, h2);
}

void token_input(const ScoreModel& model, double log_pc, double log_pu, std::span<double> out) {
    auto clamp = [&model](double x) {
        return model.input_clamp > 0.0 ? std::clamp(x, -model.input_clamp, model.input_clamp) : x;
    };
    if (model.mode() == ScoreMode::ratio1d) {
        out[0] = clamp(delta_alpha(log_pc, log_pu, model.alpha));
    } else {
        out[0] = clamp(log_pc);
        out[1] = clamp(log_pu);
    }
}

double prada_score(const TokenLikelihoodRecord& record, const ScoreModel& model) {
    if (record.generator_id != model.generator_id) {
        throw ValidationError("record '" + record.image_id + "' was extracted under generator '" +
                              record.generator_id + "' but the model is for '" +
                              model.generator_id + "'");
    }
    if (record.token_counts() != model.token_counts) {
        throw ValidationError("record '" + record.image_id +
                              "' scale layout does not match the score model");
    }
    std::vector<double> h1;
    std::vector<double> h2;
    double input[2] = {0.0, 0.0};
    const std::span<double> in(input, model.mlp.input_dim());
    double score = 0.0;
    for (std::size_t s = 0; s < record.scales.size(); ++s) {
        const ScaleBlock& block = record.scales[s];
        double sum = 0.0;
        for (std::size_t t = 0; t < block.size(); ++t) {
            token_input(model, block.log_p_cond[t], block.log_p_uncond[t], in);
            sum += forward_with(model.mlp, in, h1, h2);
        }
        score += model.scale_weights[s] * sum / static_cast<double>(block.size());
    }
    return score;
}

std::vector<double> prada_scores(const std::vector<TokenLikelihoodRecord>& records,
                                 const ScoreModel& model) {
    std::vector<double> out;
    out.reserve(records.size());
    for (const auto& record : records) out.push_back(prada_score(record, model));
    return out;
}

std::string serialize_model(const ScoreModel& model) {
    model.validate();
    ordered_json doc;
    doc["generator_id"] = model.generator_id;
    doc["mode"] = std::string(to_string(model.mode()));
    doc["alpha"] = model.alpha;
    ordered_json mlp;
    mlp["input_dim"] = model.mlp.input_dim();
    mlp["n_hidden"] = model.mlp.n_hidden;
    mlp["activation"] = "elu";
    mlp["w1"] = model.mlp.w1;
    mlp["b1"] = model.mlp.b1;
    mlp["w2"] = model.mlp.w2;
    mlp["b2"] = model.mlp.b2;
    mlp["w3"] = model.mlp.w3;
    mlp["b3"] = model.mlp.b3;
    doc["mlp"] = std::move(mlp);
    doc["scale_weights"] = model.scale_weights;
    doc["num_scales"] = model.num_scales();
    doc["token_counts"] = model.token_counts;
    doc["noise_sigmas"] = model.noise_sigmas;
    doc["input_clamp"] = model.input_clamp;
    doc["config"] = model.config_json.empty() ? ordered_json::object()
                                              : ordered_json::parse(model.config_json);
    doc["config_digest"] = model.config_digest;
    return doc.dump(2) + "\n";
}

ScoreModel deserialize_model(const std::string& text) {
    ordered_json doc;
    try {
        doc = ordered_json::parse(text);
    } catch (const nlohmann::json::exception& e) {
        throw ValidationError(std::string("malformed score model: ") + e.what());
    }
    try {
        ScoreModel model;
        model.generator_id = doc.at("generator_id").get<std::string>();
        model.alpha = doc.at("alpha").get<double>();
        const auto& mlp = doc.at("mlp");
        model.mlp.mode = parse_score_mode(doc.at("mode").get<std::string>());
        model.mlp.n_hidden = mlp.at("n_hidden").get<std::size_t>();
        if (mlp.at("input_dim").get<std::size_t>() != model.mlp.input_dim()) {
            throw ValidationError("model input_dim does not match its mode");
        }
        model.mlp.w1 = read_doubles(mlp, "w1");
        model.mlp.b1 = read_doubles(mlp, "b1");
        model.mlp.w2 = read_doubles(mlp, "w2");
        model.mlp.b2 = read_doubles(mlp, "b2");
        model.mlp.w3 = read_doubles(mlp, "w3");
        model.mlp.b3 = mlp.at("b3").get<double>();
        model.scale_weights = read_doubles(doc, "scale_weights");
        model.token_counts = doc.at("token_counts").get<std::vector<std::size_t>>();
        if (doc.at("num_scales").get<std::size_t>() != model.token_counts.size()) {
            throw ValidationError("model num_scales does not match token_counts");
        }
        model.noise_sigmas = read_doubles(doc, "noise_sigmas");
        model.input_clamp = doc.value("input_clamp", kDefaultInputClamp);
        if (auto it = doc.find("config"); it != doc.end() && !it->empty()) {
            model.config_json = it->dump();
        }
        model.config_digest = doc.value("config_digest", std::string());
        model.validate();
        return model;
    } catch (const nlohmann::json::exception& e) {
        throw ValidationError(std::string("invalid score model: ") + e.what());
    }
}

void save_model(const ScoreModel& model, const std::filesystem::path& path) {
    const std::string text = serialize_model(model);
    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    if (!out) throw IoError("cannot open '" + path.string() + "' for writing");
    out << text;
    if (!out) throw IoError("write failure on '" + path.string() + "'");
}

ScoreModel load_model(const std::filesystem::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw IoError("cannot open score model '" + path.string() + "'");
    std::ostringstream buffer;
    buffer << in.rdbuf();
    return deserialize_model(buffer.str());
}

} // namespace prada
