#pragma once

#include <cstddef>
#include <filesystem>
#include <iosfwd>
#include <optional>
#include <span>
#include <string>
#include <vector>

namespace prada {

inline constexpr const char* kRealUnknown = "real/unknown";

/// Mann–Whitney AUROC: share of (positive, negative) pairs ordered correctly, ties 0.5.
/// Labels are nonzero for the positive (generated) class.
double auroc(std::span<const double> scores, std::span<const int> labels);

struct RocPoint {
    double fpr = 0.0;
    double tpr = 0.0;
};

/// ROC curve from (0,0) to (1,1), one vertex per distinct score threshold.
std::vector<RocPoint> roc_curve(std::span<const double> scores, std::span<const int> labels);

/// Image × generator score matrix.
struct ScoreTable {
    std::vector<std::string> generators;
    std::vector<std::string> image_ids;
    std::vector<std::string> true_labels;
    std::vector<std::vector<double>> scores;  // [image][generator]

    std::size_t rows() const noexcept { return image_ids.size(); }
    void validate() const;
    /// 1 for images whose true label is not "real".
    std::vector<int> binary_labels() const;
};

/// One generator's column: image_id, source_label, score.
struct ScoreColumn {
    std::string generator_id;
    std::vector<std::string> image_ids;
    std::vector<std::string> source_labels;
    std::vector<double> scores;
};

/// Joins per-generator columns on image_id (rows ordered like the first column).
/// Every column must cover the same images.
ScoreTable join_columns(const std::vector<ScoreColumn>& columns);

/// Per image, the maximum score over candidate generators.
std::vector<double> ensemble_detect(const ScoreTable& table);

/// Verdict per image: the generator with the largest score above `threshold`
/// (lexicographically smallest id on ties), or nullopt for real/unknown.
std::vector<std::optional<std::string>> attribute(const ScoreTable& table, double threshold = 0.0);

struct ConfusionMatrix {
    std::vector<std::string> classes;                // "real" first, then sorted ids
    std::vector<std::vector<std::size_t>> counts;    // [true][predicted]
    std::vector<std::vector<double>> normalized;     // rows sum to 1 (or 0 for empty rows)
    double accuracy = 0.0;
};

/// Real/unknown verdicts count as the "real" class. `candidates` are added to the
/// class set even if they never occur.
ConfusionMatrix confusion(const std::vector<std::optional<std::string>>& verdicts,
                          const std::vector<std::string>& true_labels,
                          const std::vector<std::string>& candidates = {});

struct EvalReport {
    std::optional<double> auroc;
    std::vector<RocPoint> roc_points;
    std::optional<ConfusionMatrix> confusion;
};

struct MeanStd {
    double mean = 0.0;
    double std = 0.0;  // sample standard deviation, 0 for a single run
};

struct AggregateReport {
    std::size_t n_runs = 0;
    bool single_run = false;  // std is not meaningful
    std::vector<double> per_run_auroc;
    std::vector<double> per_run_accuracy;
    std::optional<MeanStd> auroc;
    std::optional<MeanStd> accuracy;
    std::optional<ConfusionMatrix> mean_confusion;  // element-wise mean of normalized matrices
};

MeanStd mean_std(std::span<const double> values);

AggregateReport aggregate_runs(const std::vector<EvalReport>& reports);

// Delimited-text exports.
void write_score_column(const ScoreColumn& column, const std::filesystem::path& path);
ScoreColumn read_score_column(const std::filesystem::path& path);
void write_roc_csv(std::span<const RocPoint> points, const std::filesystem::path& path);
void write_confusion_csv(const ConfusionMatrix& matrix, const std::filesystem::path& path);
void write_verdicts_csv(const ScoreTable& table,
                        const std::vector<std::optional<std::string>>& verdicts,
                        const std::filesystem::path& path);

} // namespace prada
