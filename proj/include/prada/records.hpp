#pragma once

#include <cstddef>
#include <filesystem>
#include <map>
#include <string>
#include <vector>

namespace prada {

/// Per-token log-probabilities of one scale, extracted with and without the condition.
struct ScaleBlock {
    std::size_t scale_index = 0;
    std::vector<double> log_p_cond;
    std::vector<double> log_p_uncond;

    std::size_t size() const noexcept { return log_p_cond.size(); }
    bool operator==(const ScaleBlock&) const = default;
};

/// Token likelihoods of one image under one generator.
struct TokenLikelihoodRecord {
    std::string image_id;
    std::string source_label;  // "real" or a generator identifier
    std::string generator_id;  // model the likelihoods were extracted under
    std::string condition;
    std::vector<ScaleBlock> scales;

    std::size_t num_scales() const noexcept { return scales.size(); }
    std::vector<std::size_t> token_counts() const;
    std::size_t num_tokens() const;
    bool is_real() const noexcept { return source_label == kRealLabel; }

    bool operator==(const TokenLikelihoodRecord&) const = default;

    static constexpr const char* kRealLabel = "real";
};

struct DatasetSummary {
    std::size_t n_records = 0;
    std::size_t num_scales = 0;
    std::vector<std::size_t> token_counts;
    std::map<std::string, std::size_t> label_counts;
};

/// Soft-validation messages (e.g. positive log-probabilities) collected while reading.
using Warnings = std::vector<std::string>;

/// Checks every invariant of a single record. Throws ValidationError naming the
/// image and field. Positive log-probabilities are appended to `warnings` if given.
void validate_record(const TokenLikelihoodRecord& record, Warnings* warnings = nullptr);

/// Checks that all records share the same scale layout.
void validate_shapes(const std::vector<TokenLikelihoodRecord>& records);

/// Parses one line of the record format. `line_number` is used in diagnostics only.
TokenLikelihoodRecord parse_record_line(const std::string& line, std::size_t line_number,
                                        Warnings* warnings = nullptr);
std::string format_record_line(const TokenLikelihoodRecord& record);

/// Reads a newline-delimited record file. Blank lines are skipped; an empty file is an error.
std::vector<TokenLikelihoodRecord> read_records(const std::filesystem::path& path,
                                                Warnings* warnings = nullptr);
void write_records(const std::vector<TokenLikelihoodRecord>& records,
                   const std::filesystem::path& path);

DatasetSummary summarize(const std::vector<TokenLikelihoodRecord>& records);

} // namespace prada
