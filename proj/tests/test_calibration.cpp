#include <doctest.h>

#include <algorithm>
#include <set>

#include "prada/calibration.hpp"
#include "prada/errors.hpp"
#include "prada/evaluation.hpp"
#include "prada/synth.hpp"

using namespace prada;

namespace {

SynthProfile small_profile(std::vector<std::size_t> layout) {
    SynthProfile p;
    p.name = "small";
    p.generator_id = "synth-small";
    p.token_counts = std::move(layout);
    for (std::size_t s = 0; s < p.token_counts.size(); ++s) {
        p.real.push_back({{0.0, 1.0, 0.2, -3.0, 1.0}, -5.0, 1.5});
        p.fake.push_back({{0.8, 1.0, 0.0, 0.0, 1.0}, -5.0, 1.5});
    }
    p.seed = 3;
    return p;
}

CalibrationConfig quick_config() {
    CalibrationConfig c;
    c.steps = 60;
    c.batch_size = 16;
    c.n_train_per_class = 40;
    c.seed = 5;
    return c;
}

} // namespace

TEST_CASE("config json round trip and digest") {
    CalibrationConfig c;
    c.steps = 123;
    c.mode = ScoreMode::pair2d;
    c.optimizer.lr = 0.1;
    c.learn_w = false;
    const auto text = config_to_json(c);
    CHECK(config_from_json(text) == c);
    CHECK(config_digest(c) == config_digest(config_from_json(text)));
    CHECK(config_digest(c) != config_digest(CalibrationConfig{}));
    CHECK(config_from_json("{}") == CalibrationConfig{});
    CHECK_THROWS_AS(config_from_json(R"({"stepz": 3})"), ValidationError);
    CHECK_THROWS_AS(config_from_json(R"({"steps": 0})"), ValidationError);
}

TEST_CASE("initial model") {
    CalibrationConfig c;
    auto m = initial_model("g", {1, 4, 9, 16}, c);
    CHECK(m.alpha == 1.0);
    CHECK(m.scale_weights == std::vector<double>(4, 0.25));
    CHECK(m.mlp.parameter_count() == 321);
    for (double w : m.mlp.w1) CHECK(std::abs(w) <= 1.0);
    for (double w : m.mlp.w2) CHECK(std::abs(w) <= 0.25);
    CHECK(initial_model("g", {7}, c).scale_weights == std::vector<double>{1.0});
}

TEST_CASE("calibration is deterministic and keeps splits disjoint") {
    const auto data = generate(small_profile({2, 3}), 60, 60);
    const auto cfg = quick_config();
    const auto a = calibrate_detailed(data.real, data.fake, cfg);
    const auto b = calibrate_detailed(data.real, data.fake, cfg);
    CHECK(serialize_model(a.model) == serialize_model(b.model));
    CHECK(a.loss_history == b.loss_history);
    CHECK(a.loss_history.size() == cfg.steps);
    for (double l : a.loss_history) CHECK(std::isfinite(l));

    CHECK(a.split.train_real.size() == 40);
    CHECK(a.split.test_real.size() == 20);
    std::set<std::size_t> seen(a.split.train_real.begin(), a.split.train_real.end());
    for (std::size_t i : a.split.test_real) CHECK(seen.insert(i).second);
    CHECK(seen.size() == 60);
    CHECK(a.model.config_digest == config_digest(cfg));

    auto other = cfg;
    other.seed = 6;
    CHECK(serialize_model(calibrate(data.real, data.fake, other)) != serialize_model(a.model));
}

TEST_CASE("single-scale data keeps w = [1]") {
    const auto data = generate(small_profile({6}), 50, 50);
    const auto m = calibrate(data.real, data.fake, quick_config());
    CHECK(m.scale_weights == std::vector<double>{1.0});
}

TEST_CASE("frozen coordinates stay at initialization") {
    const auto data = generate(small_profile({2, 3}), 50, 50);
    auto cfg = quick_config();
    cfg.learn_alpha = false;
    cfg.learn_w = false;
    const auto m = calibrate(data.real, data.fake, cfg);
    CHECK(m.alpha == 1.0);
    CHECK(m.scale_weights == std::vector<double>{0.5, 0.5});
}

TEST_CASE("calibrate_runs") {
    const auto data = generate(small_profile({2, 3}), 50, 50);
    auto cfg = quick_config();
    cfg.steps = 20;
    CHECK_THROWS_AS(calibrate_runs(data.real, data.fake, cfg, 0), ValidationError);
    const auto one = calibrate_runs(data.real, data.fake, cfg, 1);
    REQUIRE(one.runs.size() == 1);
    CHECK(serialize_model(one.runs[0].model) == serialize_model(calibrate(data.real, data.fake, cfg)));
    const auto three = calibrate_runs(data.real, data.fake, cfg, 3);
    CHECK(three.runs[2].seed == cfg.seed + 2);
    CHECK(three.runs[0].split.train_real != three.runs[1].split.train_real);
}

TEST_CASE("calibration input errors") {
    const auto data = generate(small_profile({2, 3}), 30, 30);
    auto cfg = quick_config();
    CHECK_THROWS_AS(calibrate(data.real, data.fake, cfg), ValidationError);  // 40 > 30

    cfg.n_train_per_class = 10;
    auto fake = data.fake;
    fake[3].generator_id = "other";
    CHECK_THROWS_AS(calibrate(data.real, fake, cfg), ValidationError);
    CHECK_THROWS_AS(calibrate(data.real, {}, cfg), ValidationError);

    const auto other = generate(small_profile({5}), 30, 30);
    CHECK_THROWS_AS(calibrate(data.real, other.fake, cfg), ValidationError);
}

TEST_CASE("separable data is learned") {
    const auto data = generate(small_profile({4, 4}), 120, 120);
    auto cfg = quick_config();
    cfg.steps = 300;
    cfg.n_train_per_class = 80;
    const auto run = calibrate_detailed(data.real, data.fake, cfg);
    const auto test = score_test_split(run, data.real, data.fake);
    CHECK(auroc(test.scores, test.labels) > 0.9);
}
