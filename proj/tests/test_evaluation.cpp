#include <doctest.h>

#include <algorithm>
#include <cmath>
#include <random>

#include "prada/errors.hpp"
#include "prada/evaluation.hpp"
#include "test_util.hpp"

using namespace prada;
using doctest::Approx;

namespace {

double pairwise_auroc(const std::vector<double>& s, const std::vector<int>& y) {
    double credit = 0.0, pairs = 0.0;
    for (std::size_t i = 0; i < s.size(); ++i) {
        if (!y[i]) continue;
        for (std::size_t j = 0; j < s.size(); ++j) {
            if (y[j]) continue;
            pairs += 1.0;
            credit += s[i] > s[j] ? 1.0 : (s[i] == s[j] ? 0.5 : 0.0);
        }
    }
    return credit / pairs;
}

ScoreTable table_of(std::vector<std::string> gens, std::vector<std::vector<double>> rows,
                    std::vector<std::string> truth = {}) {
    ScoreTable t;
    t.generators = std::move(gens);
    for (std::size_t r = 0; r < rows.size(); ++r) {
        t.image_ids.push_back("img" + std::to_string(r));
        t.true_labels.push_back(truth.empty() ? "real" : truth[r]);
    }
    t.scores = std::move(rows);
    return t;
}

} // namespace

TEST_CASE("auroc examples") {
    CHECK(auroc(std::vector<double>{2, 3, 0, 1}, std::vector<int>{1, 1, 0, 0}) == 1.0);
    CHECK(auroc(std::vector<double>{4, 4, 4, 4, 4}, std::vector<int>{1, 0, 1, 0, 0}) == 0.5);
    CHECK(auroc(std::vector<double>{0.9, 0.4, 0.5, 0.1}, std::vector<int>{1, 1, 0, 0}) == 0.75);
    CHECK_THROWS_AS(auroc(std::vector<double>{1, 2}, std::vector<int>{1, 1}), ValidationError);
    CHECK_THROWS_AS(auroc(std::vector<double>{1, 2}, std::vector<int>{1}), ValidationError);
}

TEST_CASE("auroc matches pairwise counting, with and without ties") {
    std::mt19937_64 rng(1);
    for (int i = 0; i < 100; ++i) {
        const std::size_t n = 2 + rng() % 60;
        std::vector<double> s(n);
        std::vector<int> y(n);
        std::uniform_int_distribution<int> coarse(0, 6);
        std::normal_distribution<double> fine;
        for (std::size_t k = 0; k < n; ++k) {
            s[k] = i % 2 ? coarse(rng) : fine(rng);
            y[k] = static_cast<int>(rng() % 2);
        }
        y[0] = 1;
        y[1] = 0;
        const double a = auroc(s, y);
        CHECK(std::abs(a - pairwise_auroc(s, y)) < 1e-12);

        // Strictly increasing transform.
        std::vector<double> t(n);
        std::transform(s.begin(), s.end(), t.begin(), [](double v) { return std::exp(v / 3.0) + v; });
        CHECK(auroc(t, y) == Approx(a).epsilon(1e-14));

        if (i % 2 == 0) {
            std::vector<double> neg(n);
            std::transform(s.begin(), s.end(), neg.begin(), [](double v) { return -v; });
            CHECK(a + auroc(neg, y) == Approx(1.0).epsilon(1e-14));
        }
    }
}

TEST_CASE("roc curve endpoints and monotonicity") {
    std::mt19937_64 rng(2);
    std::normal_distribution<double> n;
    std::vector<double> s(50);
    std::vector<int> y(50);
    for (std::size_t i = 0; i < 50; ++i) {
        y[i] = i % 3 == 0;
        s[i] = n(rng) + y[i];
    }
    const auto roc = roc_curve(s, y);
    CHECK(roc.front().fpr == 0.0);
    CHECK(roc.front().tpr == 0.0);
    CHECK(roc.back().fpr == 1.0);
    CHECK(roc.back().tpr == 1.0);
    double area = 0.0;
    for (std::size_t i = 1; i < roc.size(); ++i) {
        CHECK(roc[i].fpr >= roc[i - 1].fpr);
        CHECK(roc[i].tpr >= roc[i - 1].tpr);
        area += (roc[i].fpr - roc[i - 1].fpr) * (roc[i].tpr + roc[i - 1].tpr) / 2.0;
    }
    CHECK(area == Approx(auroc(s, y)).epsilon(1e-12));
}

TEST_CASE("ensemble_detect") {
    CHECK(ensemble_detect(table_of({"A", "B"}, {{-1.0, 0.3}})) == std::vector<double>{0.3});
    CHECK(ensemble_detect(table_of({"A"}, {{-1.0}, {2.0}})) == std::vector<double>{-1.0, 2.0});
    CHECK(ensemble_detect(table_of({"A", "B", "C"}, {{-1.0, 0.3, 0.1}})) == std::vector<double>{0.3});
}

TEST_CASE("attribute examples") {
    const auto v = attribute(table_of({"A", "B"}, {{0.3, -0.2}, {-1.0, -0.5}, {0.3, 0.3}, {0.0, -0.1}}));
    REQUIRE(v.size() == 4);
    CHECK(v[0] == std::optional<std::string>("A"));
    CHECK_FALSE(v[1].has_value());
    CHECK(v[2] == std::optional<std::string>("A"));
    CHECK_FALSE(v[3].has_value());  // strict inequality at 0

    const auto shifted = attribute(table_of({"A", "B"}, {{0.3, -0.2}}), 0.5);
    CHECK_FALSE(shifted[0].has_value());
}

TEST_CASE("adding an all-negative candidate changes no verdict") {
    std::mt19937_64 rng(3);
    std::normal_distribution<double> n;
    std::vector<std::vector<double>> rows(40, std::vector<double>(3));
    for (auto& r : rows) for (double& x : r) x = n(rng);
    const auto before = attribute(table_of({"A", "B", "C"}, rows));
    for (auto& r : rows) r.push_back(-std::abs(n(rng)) - 0.01);
    const auto after = attribute(table_of({"A", "B", "C", "D"}, rows));
    CHECK(before == after);
    for (std::size_t i = 0; i < rows.size(); ++i) {
        if (after[i]) {
            const std::size_t g = static_cast<std::size_t>(after[i]->front() - 'A');
            CHECK(rows[i][g] > 0.0);
        }
    }
}

TEST_CASE("confusion examples") {
    using V = std::vector<std::optional<std::string>>;
    auto all_right = confusion(V{std::nullopt, "A", "B"}, {"real", "A", "B"});
    CHECK(all_right.accuracy == 1.0);
    CHECK(all_right.classes == std::vector<std::string>{"real", "A", "B"});
    for (std::size_t i = 0; i < 3; ++i) {
        for (std::size_t j = 0; j < 3; ++j) CHECK(all_right.normalized[i][j] == (i == j ? 1.0 : 0.0));
    }

    auto unknown = confusion(V{std::nullopt, std::nullopt, std::nullopt, std::nullopt}, {"real", "real", "A", "A"});
    CHECK(unknown.accuracy == 0.5);
    CHECK(unknown.normalized[0][0] == 1.0);
    CHECK(unknown.normalized[1][0] == 1.0);

    auto mixed = confusion(V{"A", "A", std::nullopt, "B", "B"}, {"real", "A", "A", "A", "B"}, {"C"});
    CHECK(mixed.classes == std::vector<std::string>{"real", "A", "B", "C"});
    CHECK(mixed.counts[0] == std::vector<std::size_t>{0, 1, 0, 0});
    CHECK(mixed.counts[1] == std::vector<std::size_t>{1, 1, 1, 0});
    CHECK(mixed.counts[2] == std::vector<std::size_t>{0, 0, 1, 0});
    CHECK(mixed.counts[3] == std::vector<std::size_t>{0, 0, 0, 0});
    CHECK(mixed.normalized[1][0] == Approx(1.0 / 3.0));
    CHECK(mixed.accuracy == Approx(2.0 / 5.0));

    CHECK_THROWS_AS(confusion(V{"A"}, {"A", "B"}), ValidationError);
}

TEST_CASE("confusion rows sum to class counts on random cases") {
    std::mt19937_64 rng(4);
    const std::vector<std::string> labels{"real", "A", "B"};
    for (int i = 0; i < 20; ++i) {
        std::vector<std::optional<std::string>> verdicts;
        std::vector<std::string> truth;
        for (int k = 0; k < 30; ++k) {
            truth.push_back(labels[rng() % 3]);
            const auto v = labels[rng() % 3];
            verdicts.push_back(v == "real" ? std::nullopt : std::optional<std::string>(v));
        }
        const auto m = confusion(verdicts, truth);
        std::size_t correct = 0;
        for (std::size_t c = 0; c < m.classes.size(); ++c) {
            std::size_t row = 0, tally = 0;
            for (std::size_t k = 0; k < 30; ++k) {
                if (truth[k] == m.classes[c]) {
                    ++tally;
                    if (verdicts[k].value_or("real") == m.classes[c]) ++correct;
                }
            }
            for (std::size_t p = 0; p < m.classes.size(); ++p) row += m.counts[c][p];
            CHECK(row == tally);
        }
        CHECK(m.accuracy == Approx(correct / 30.0));
    }
}

TEST_CASE("aggregate_runs") {
    EvalReport a, b;
    a.auroc = 0.9;
    b.auroc = 1.0;
    auto agg = aggregate_runs({a, b});
    CHECK(agg.auroc->mean == Approx(0.95));
    CHECK(agg.auroc->std == Approx(std::sqrt(0.005)).epsilon(1e-12));
    CHECK(agg.auroc->std == Approx(0.0707).epsilon(1e-3));
    CHECK_FALSE(agg.single_run);

    auto same = aggregate_runs({a, a, a});
    CHECK(same.auroc->std == 0.0);

    auto one = aggregate_runs({a});
    CHECK(one.single_run);
    CHECK(one.auroc->std == 0.0);
    CHECK_THROWS_AS(aggregate_runs({}), ValidationError);

    using V = std::vector<std::optional<std::string>>;
    EvalReport c, d;
    c.confusion = confusion(V{"A", std::nullopt}, {"A", "A"});
    d.confusion = confusion(V{"A", "A"}, {"A", "A"});
    auto mc = aggregate_runs({c, d});
    CHECK(mc.accuracy->mean == Approx(0.75));
    CHECK(mc.mean_confusion->normalized[1][1] == Approx(0.75));
}

TEST_CASE("score column round trip and join") {
    const auto dir = testutil::scratch_dir("evaluation_columns");
    ScoreColumn a{"gen-a", {"x", "y, quoted"}, {"real", "gen-a"}, {0.1, -2.5}};
    write_score_column(a, dir / "a.csv");
    const auto back = read_score_column(dir / "a.csv");
    CHECK(back.generator_id == "gen-a");
    CHECK(back.image_ids == a.image_ids);
    CHECK(back.scores == a.scores);

    ScoreColumn b{"gen-b", {"y, quoted", "x"}, {"gen-a", "real"}, {3.0, 4.0}};
    const auto t = join_columns({a, b});
    CHECK(t.generators == std::vector<std::string>{"gen-a", "gen-b"});
    CHECK(t.scores[0] == std::vector<double>{0.1, 4.0});
    CHECK(t.binary_labels() == std::vector<int>{0, 1});

    ScoreColumn c{"gen-c", {"x"}, {"real"}, {1.0}};
    CHECK_THROWS_AS(join_columns({a, c}), ValidationError);
}
