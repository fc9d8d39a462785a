#include <doctest.h>

#include <bit>
#include <cstdint>
#include <fstream>
#include <random>

#include "prada/errors.hpp"
#include "prada/records.hpp"
#include "test_util.hpp"

using namespace prada;
using testutil::make_record;

namespace {

void write_text(const std::filesystem::path& path, const std::string& text) {
    std::ofstream out(path, std::ios::binary);
    out << text;
}

std::string error_of(const std::filesystem::path& path) {
    try {
        read_records(path);
    } catch (const ValidationError& e) {
        return e.what();
    }
    return "";
}

const char* kLineA =
    R"({"image_id":"a","source_label":"real","generator_id":"g","condition":"c","scales":[{"scale_index":0,"log_p_cond":[-1.5,-2],"log_p_uncond":[-2.5,-3]}]})";
const char* kLineB =
    R"({"image_id":"b","source_label":"g","generator_id":"g","condition":"c","scales":[{"scale_index":0,"log_p_cond":[-0.5,-1],"log_p_uncond":[-1,-4]}]})";

} // namespace

TEST_CASE("two valid single-scale records") {
    const auto dir = testutil::scratch_dir("records_two");
    write_text(dir / "r.jsonl", std::string(kLineA) + "\n" + kLineB + "\n");
    const auto records = read_records(dir / "r.jsonl");
    REQUIRE(records.size() == 2);
    CHECK(records[0].num_scales() == 1);
    CHECK(records[0].image_id == "a");
    CHECK(records[1].image_id == "b");
    CHECK(records[1].scales[0].log_p_uncond[1] == -4.0);
}

TEST_CASE("length mismatch names the image") {
    const auto dir = testutil::scratch_dir("records_shape");
    write_text(dir / "r.jsonl",
               R"({"image_id":"img-17","source_label":"real","generator_id":"g","condition":"c","scales":[{"scale_index":0,"log_p_cond":[-1,-2,-3],"log_p_uncond":[-1,-2]}]})"
               "\n");
    const auto msg = error_of(dir / "r.jsonl");
    CHECK(msg.find("img-17") != std::string::npos);
    CHECK(msg.find("log_p_cond") != std::string::npos);
}

TEST_CASE("NaN literal is a non-finite error") {
    const auto dir = testutil::scratch_dir("records_nan");
    write_text(dir / "r.jsonl",
               R"({"image_id":"x","source_label":"real","generator_id":"g","condition":"c","scales":[{"scale_index":0,"log_p_cond":[NaN],"log_p_uncond":[-1]}]})"
               "\n");
    CHECK(error_of(dir / "r.jsonl").find("non-finite") != std::string::npos);

    write_text(dir / "s.jsonl",
               R"({"image_id":"x","source_label":"real","generator_id":"g","condition":"c","scales":[{"scale_index":0,"log_p_cond":[-1],"log_p_uncond":[-Infinity]}]})"
               "\n");
    CHECK(error_of(dir / "s.jsonl").find("non-finite") != std::string::npos);

    auto r = make_record("y", "real", {{std::nan("")}}, {{-1.0}});
    CHECK_THROWS_AS(validate_record(r), ValidationError);
}

TEST_CASE("malformed line reports its number") {
    const auto dir = testutil::scratch_dir("records_malformed");
    write_text(dir / "r.jsonl", std::string(kLineA) + "\n{not json\n");
    CHECK(error_of(dir / "r.jsonl").find("line 2") != std::string::npos);
}

TEST_CASE("inconsistent layout across records") {
    const auto dir = testutil::scratch_dir("records_layout");
    write_text(dir / "r.jsonl",
               std::string(kLineA) + "\n" +
                   R"({"image_id":"c","source_label":"real","generator_id":"g","condition":"c","scales":[{"scale_index":0,"log_p_cond":[-1],"log_p_uncond":[-1]}]})" +
                   "\n");
    CHECK(error_of(dir / "r.jsonl").find("'c'") != std::string::npos);
}

TEST_CASE("scale indices must run 0..S-1") {
    auto r = make_record("z", "real", {{-1.0}, {-2.0}}, {{-1.0}, {-2.0}});
    r.scales[1].scale_index = 2;
    CHECK_THROWS_AS(validate_record(r), ValidationError);
    r.scales[1].scale_index = 0;
    CHECK_THROWS_AS(validate_record(r), ValidationError);
}

TEST_CASE("empty sequence writes an empty file that does not read back") {
    const auto dir = testutil::scratch_dir("records_empty");
    write_records({}, dir / "e.jsonl");
    CHECK(std::filesystem::file_size(dir / "e.jsonl") == 0);
    CHECK_THROWS_AS(read_records(dir / "e.jsonl"), ValidationError);
}

TEST_CASE("missing file is an I/O error") {
    CHECK_THROWS_AS(read_records("/nonexistent/prada/records.jsonl"), IoError);
}

TEST_CASE("positive log-probabilities warn instead of failing") {
    auto r = make_record("p", "real", {{0.5, 0.25}}, {{-1.0, 0.1}});
    Warnings warnings;
    CHECK_NOTHROW(validate_record(r, &warnings));
    CHECK(warnings.size() == 1);
}

TEST_CASE("round trip keeps exact bits") {
    const auto dir = testutil::scratch_dir("records_roundtrip");
    auto r = make_record("rt", "real", {{-6.25, 0.1}}, {{0.1, -6.25}});
    write_records({r}, dir / "rt.jsonl");
    const auto back = read_records(dir / "rt.jsonl");
    REQUIRE(back.size() == 1);
    CHECK(std::bit_cast<std::uint64_t>(back[0].scales[0].log_p_cond[0]) ==
          std::bit_cast<std::uint64_t>(-6.25));
    CHECK(std::bit_cast<std::uint64_t>(back[0].scales[0].log_p_cond[1]) ==
          std::bit_cast<std::uint64_t>(0.1));
    CHECK(back[0] == r);
}

TEST_CASE("round trip property over random bit patterns") {
    std::mt19937_64 rng(11);
    std::uniform_int_distribution<std::uint64_t> bits;
    std::vector<TokenLikelihoodRecord> records;
    for (int i = 0; i < 40; ++i) {
        auto r = testutil::random_record(rng, {1, 3, 5}, "id-" + std::to_string(i), i % 2 ? "gen-a" : "real");
        for (auto& b : r.scales) {
            for (double& v : b.log_p_cond) {
                double x;
                do {
                    x = std::bit_cast<double>(bits(rng));
                } while (!std::isfinite(x));
                v = x;
            }
        }
        records.push_back(r);
    }
    const auto dir = testutil::scratch_dir("records_property");
    write_records(records, dir / "p.jsonl");
    const auto back = read_records(dir / "p.jsonl");
    REQUIRE(back.size() == records.size());
    for (std::size_t i = 0; i < records.size(); ++i) {
        for (std::size_t s = 0; s < records[i].num_scales(); ++s) {
            const auto& a = records[i].scales[s].log_p_cond;
            const auto& b = back[i].scales[s].log_p_cond;
            for (std::size_t t = 0; t < a.size(); ++t) {
                CHECK(std::bit_cast<std::uint64_t>(a[t]) == std::bit_cast<std::uint64_t>(b[t]));
            }
        }
        CHECK(back[i].image_id == records[i].image_id);  // file order preserved
    }
}

TEST_CASE("summarize") {
    std::vector<TokenLikelihoodRecord> records{
        make_record("1", "real", {{-1.0}}, {{-1.0}}),
        make_record("2", "real", {{-1.0}}, {{-1.0}}),
        make_record("3", "var-d30", {{-1.0}}, {{-1.0}}),
    };
    auto s = summarize(records);
    CHECK(s.n_records == 3);
    CHECK(s.label_counts == std::map<std::string, std::size_t>{{"real", 2}, {"var-d30", 1}});

    std::mt19937_64 rng(3);
    s = summarize({testutil::random_record(rng, {256}, "single")});
    CHECK(s.token_counts == std::vector<std::size_t>{256});

    const std::vector<std::size_t> var_layout{1, 4, 9, 16, 25, 36, 64, 100, 169, 256};
    s = summarize({testutil::random_record(rng, var_layout, "v1"), testutil::random_record(rng, var_layout, "v2")});
    CHECK(s.num_scales == 10);
    CHECK(s.token_counts == var_layout);

    CHECK_THROWS_AS(summarize({}), ValidationError);
}
