#include "prada/evaluation.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <map>
#include <numeric>
#include <set>
#include <unordered_map>

#include "prada/errors.hpp"
#include "prada/records.hpp"
#include "text_util.hpp"

namespace prada {

namespace {

using detail::csv_field;
using detail::format_double;

void check_binary(std::span<const double> scores, std::span<const int> labels,
                  std::size_t& n_pos, std::size_t& n_neg) {
    if (scores.size() != labels.size()) {
        throw ValidationError("scores and labels differ in length");
    }
    n_pos = static_cast<std::size_t>(std::count_if(labels.begin(), labels.end(), [](int l) { return l != 0; }));
    n_neg = labels.size() - n_pos;
    if (n_pos == 0 || n_neg == 0) {
        throw ValidationError("AUROC needs both real and generated samples (got " +
                              std::to_string(n_neg) + " real, " + std::to_string(n_pos) +
                              " generated)");
    }
    for (double s : scores) {
        if (!std::isfinite(s)) throw ValidationError("scores must be finite");
    }
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

double auroc(std::span<const double> scores, std::span<const int> labels) {
    std::size_t n_pos = 0;
    std::size_t n_neg = 0;
    check_binary(scores, labels, n_pos, n_neg);

    std::vector<std::size_t> order(scores.size());
    std::iota(order.begin(), order.end(), std::size_t{0});
    std::sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) { return scores[a] < scores[b]; });

    // Sum of mid-ranks of the positives (1-based), all exact in binary64.
    double rank_sum = 0.0;
    std::size_t i = 0;
    while (i < order.size()) {
        std::size_t j = i;
        while (j < order.size() && scores[order[j]] == scores[order[i]]) ++j;
        const double mid_rank = 0.5 * static_cast<double>(i + 1 + j);
        for (std::size_t k = i; k < j; ++k) {
            if (labels[order[k]] != 0) rank_sum += mid_rank;
        }
        i = j;
    }
    const double np = static_cast<double>(n_pos);
    const double nn = static_cast<double>(n_neg);
    return (rank_sum - np * (np + 1.0) / 2.0) / (np * nn);
}

std::vector<RocPoint> roc_curve(std::span<const double> scores, std::span<const int> labels) {
    std::size_t n_pos = 0;
    std::size_t n_neg = 0;
    check_binary(scores, labels, n_pos, n_neg);

    std::vector<std::size_t> order(scores.size());
    std::iota(order.begin(), order.end(), std::size_t{0});
    std::sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) { return scores[a] > scores[b]; });

    std::vector<RocPoint> points{{0.0, 0.0}};
    std::size_t tp = 0;
    std::size_t fp = 0;
    std::size_t i = 0;
    while (i < order.size()) {
        const double threshold = scores[order[i]];
        while (i < order.size() && scores[order[i]] == threshold) {
            if (labels[order[i]] != 0) ++tp;
            else ++fp;
            ++i;
        }
        points.push_back({static_cast<double>(fp) / static_cast<double>(n_neg),
                          static_cast<double>(tp) / static_cast<double>(n_pos)});
    }
    return points;
}

void ScoreTable::validate() const {
    if (generators.empty()) throw ValidationError("score table has no generators");
    if (true_labels.size() != image_ids.size() || scores.size() != image_ids.size()) {
        throw ValidationError("score table columns differ in length");
    }
    for (std::size_t r = 0; r < scores.size(); ++r) {
        if (scores[r].size() != generators.size()) {
            throw ValidationError("score table row '" + image_ids[r] + "' lacks a score for some generator");
        }
        for (double s : scores[r]) {
            if (!std::isfinite(s)) throw ValidationError("score table row '" + image_ids[r] + "' has a non-finite score");
        }
    }
}

std::vector<int> ScoreTable::binary_labels() const {
    std::vector<int> labels;
    labels.reserve(true_labels.size());
    for (const auto& l : true_labels) labels.push_back(l == TokenLikelihoodRecord::kRealLabel ? 0 : 1);
    return labels;
}

ScoreTable join_columns(const std::vector<ScoreColumn>& columns) {
    if (columns.empty()) throw ValidationError("no score tables given");
    ScoreTable table;
    const ScoreColumn& first = columns.front();
    table.image_ids = first.image_ids;
    table.true_labels = first.source_labels;
    table.scores.assign(first.image_ids.size(), std::vector<double>(columns.size(), 0.0));

    std::unordered_map<std::string, std::size_t> row_of;
    for (std::size_t r = 0; r < first.image_ids.size(); ++r) {
        if (!row_of.emplace(first.image_ids[r], r).second) {
            throw ValidationError("duplicate image_id '" + first.image_ids[r] + "' in score table for '" +
                                  first.generator_id + "'");
        }
    }
    std::set<std::string> seen;
    for (std::size_t c = 0; c < columns.size(); ++c) {
        const ScoreColumn& col = columns[c];
        if (!seen.insert(col.generator_id).second) {
            throw ValidationError("generator '" + col.generator_id + "' given more than once");
        }
        table.generators.push_back(col.generator_id);
        if (col.image_ids.size() != first.image_ids.size()) {
            throw ValidationError("score table for '" + col.generator_id + "' has " +
                                  std::to_string(col.image_ids.size()) + " rows, expected " +
                                  std::to_string(first.image_ids.size()));
        }
        std::vector<char> filled(first.image_ids.size(), 0);
        for (std::size_t r = 0; r < col.image_ids.size(); ++r) {
            auto it = row_of.find(col.image_ids[r]);
            if (it == row_of.end() || filled[it->second]) {
                throw ValidationError("image '" + col.image_ids[r] + "' in table for '" +
                                      col.generator_id + "' does not match the other tables");
            }
            if (col.source_labels[r] != table.true_labels[it->second]) {
                throw ValidationError("image '" + col.image_ids[r] + "' has conflicting source labels");
            }
            filled[it->second] = 1;
            table.scores[it->second][c] = col.scores[r];
        }
    }
    table.validate();
    return table;
}

std::vector<double> ensemble_detect(const ScoreTable& table) {
    table.validate();
    std::vector<double> out;
    out.reserve(table.rows());
    for (const auto& row : table.scores) out.push_back(*std::max_element(row.begin(), row.end()));
    return out;
}

std::vector<std::optional<std::string>> attribute(const ScoreTable& table, double threshold) {
    table.validate();
    std::vector<std::optional<std::string>> verdicts;
    verdicts.reserve(table.rows());
    for (const auto& row : table.scores) {
        std::optional<std::size_t> best;
        for (std::size_t g = 0; g < row.size(); ++g) {
            if (!(row[g] > threshold)) continue;
            if (!best || row[g] > row[*best] ||
                (row[g] == row[*best] && table.generators[g] < table.generators[*best])) {
                best = g;
            }
        }
        verdicts.push_back(best ? std::optional<std::string>(table.generators[*best]) : std::nullopt);
    }
    return verdicts;
}

ConfusionMatrix confusion(const std::vector<std::optional<std::string>>& verdicts,
                          const std::vector<std::string>& true_labels,
                          const std::vector<std::string>& candidates) {
    if (verdicts.size() != true_labels.size()) {
        throw ValidationError("verdicts and true labels differ in length");
    }
    if (verdicts.empty()) throw ValidationError("confusion needs at least one image");
    const std::string real = TokenLikelihoodRecord::kRealLabel;
    std::set<std::string> others(candidates.begin(), candidates.end());
    for (const auto& l : true_labels) others.insert(l);
    for (const auto& v : verdicts) {
        if (v) others.insert(*v);
    }
    others.erase(real);

    ConfusionMatrix m;
    m.classes.push_back(real);
    m.classes.insert(m.classes.end(), others.begin(), others.end());
    std::map<std::string, std::size_t> index;
    for (std::size_t i = 0; i < m.classes.size(); ++i) index[m.classes[i]] = i;

    const std::size_t n = m.classes.size();
    m.counts.assign(n, std::vector<std::size_t>(n, 0));
    std::size_t correct = 0;
    for (std::size_t i = 0; i < verdicts.size(); ++i) {
        const std::size_t t = index.at(true_labels[i]);
        const std::size_t p = verdicts[i] ? index.at(*verdicts[i]) : 0;
        ++m.counts[t][p];
        if (t == p) ++correct;
    }
    m.normalized.assign(n, std::vector<double>(n, 0.0));
    for (std::size_t t = 0; t < n; ++t) {
        const std::size_t row_total = std::accumulate(m.counts[t].begin(), m.counts[t].end(), std::size_t{0});
        if (row_total == 0) continue;
        for (std::size_t p = 0; p < n; ++p) {
            m.normalized[t][p] = static_cast<double>(m.counts[t][p]) / static_cast<double>(row_total);
        }
    }
    m.accuracy = static_cast<double>(correct) / static_cast<double>(verdicts.size());
    return m;
}

MeanStd mean_std(std::span<const double> values) {
    if (values.empty()) throw ValidationError("mean_std of an empty sequence");
    MeanStd out;
    out.mean = std::accumulate(values.begin(), values.end(), 0.0) / static_cast<double>(values.size());
    if (values.size() > 1) {
        double ss = 0.0;
        for (double v : values) ss += (v - out.mean) * (v - out.mean);
        out.std = std::sqrt(ss / static_cast<double>(values.size() - 1));
    }
    return out;
}

AggregateReport aggregate_runs(const std::vector<EvalReport>& reports) {
    if (reports.empty()) throw ValidationError("aggregate_runs needs at least one report");
    AggregateReport agg;
    agg.n_runs = reports.size();
    agg.single_run = reports.size() == 1;

    const bool has_auroc = reports.front().auroc.has_value();
    const bool has_confusion = reports.front().confusion.has_value();
    for (const auto& r : reports) {
        if (r.auroc.has_value() != has_auroc || r.confusion.has_value() != has_confusion) {
            throw ValidationError("aggregate_runs: reports carry different metrics");
        }
        if (has_auroc) agg.per_run_auroc.push_back(*r.auroc);
        if (has_confusion) {
            if (r.confusion->classes != reports.front().confusion->classes) {
                throw ValidationError("aggregate_runs: confusion matrices use different class sets");
            }
            agg.per_run_accuracy.push_back(r.confusion->accuracy);
        }
    }
    if (has_auroc) agg.auroc = mean_std(agg.per_run_auroc);
    if (has_confusion) {
        agg.accuracy = mean_std(agg.per_run_accuracy);
        ConfusionMatrix mean = *reports.front().confusion;
        const std::size_t n = mean.classes.size();
        for (std::size_t t = 0; t < n; ++t) {
            for (std::size_t p = 0; p < n; ++p) {
                double sum = 0.0;
                std::size_t count_sum = 0;
                for (const auto& r : reports) {
                    sum += r.confusion->normalized[t][p];
                    count_sum += r.confusion->counts[t][p];
                }
                mean.normalized[t][p] = sum / static_cast<double>(reports.size());
                mean.counts[t][p] = count_sum;
            }
        }
        mean.accuracy = agg.accuracy->mean;
        agg.mean_confusion = std::move(mean);
    }
    return agg;
}

void write_score_column(const ScoreColumn& column, const std::filesystem::path& path) {
    auto out = open_out(path);
    out << "image_id,source_label,generator_id,score\n";
    for (std::size_t i = 0; i < column.image_ids.size(); ++i) {
        out << csv_field(column.image_ids[i]) << ',' << csv_field(column.source_labels[i]) << ','
            << csv_field(column.generator_id) << ',' << format_double(column.scores[i]) << '\n';
    }
    finish(out, path);
}

ScoreColumn read_score_column(const std::filesystem::path& path) {
    std::ifstream in(path);
    if (!in) throw IoError("cannot open score table '" + path.string() + "'");
    std::string line;
    if (!std::getline(in, line)) throw ValidationError("score table '" + path.string() + "' is empty");
    const auto header = detail::split_csv(line);
    const std::vector<std::string> expected{"image_id", "source_label", "generator_id", "score"};
    if (header != expected) {
        throw ValidationError("score table '" + path.string() +
                              "' must have header image_id,source_label,generator_id,score");
    }
    ScoreColumn column;
    std::size_t line_number = 1;
    while (std::getline(in, line)) {
        ++line_number;
        if (line.empty() || line == "\r") continue;
        const std::string ctx = path.string() + ":" + std::to_string(line_number);
        auto fields = detail::split_csv(line);
        if (fields.size() != 4) throw ValidationError(ctx + ": expected 4 fields");
        if (column.image_ids.empty()) column.generator_id = fields[2];
        else if (fields[2] != column.generator_id) {
            throw ValidationError(ctx + ": mixes generators '" + column.generator_id + "' and '" +
                                  fields[2] + "'");
        }
        const double score = detail::parse_double(fields[3], ctx);
        if (!std::isfinite(score)) throw ValidationError(ctx + ": score is not finite");
        column.image_ids.push_back(std::move(fields[0]));
        column.source_labels.push_back(std::move(fields[1]));
        column.scores.push_back(score);
    }
    if (column.image_ids.empty()) throw ValidationError("score table '" + path.string() + "' has no rows");
    return column;
}

void write_roc_csv(std::span<const RocPoint> points, const std::filesystem::path& path) {
    auto out = open_out(path);
    out << "fpr,tpr\n";
    for (const auto& p : points) out << format_double(p.fpr) << ',' << format_double(p.tpr) << '\n';
    finish(out, path);
}

void write_confusion_csv(const ConfusionMatrix& matrix, const std::filesystem::path& path) {
    auto out = open_out(path);
    out << "true_label,predicted_label,count,fraction\n";
    for (std::size_t t = 0; t < matrix.classes.size(); ++t) {
        for (std::size_t p = 0; p < matrix.classes.size(); ++p) {
            out << csv_field(matrix.classes[t]) << ',' << csv_field(matrix.classes[p]) << ','
                << matrix.counts[t][p] << ',' << format_double(matrix.normalized[t][p]) << '\n';
        }
    }
    finish(out, path);
}

void write_verdicts_csv(const ScoreTable& table,
                        const std::vector<std::optional<std::string>>& verdicts,
                        const std::filesystem::path& path) {
    auto out = open_out(path);
    out << "image_id,true_label,verdict\n";
    for (std::size_t i = 0; i < table.rows(); ++i) {
        out << csv_field(table.image_ids[i]) << ',' << csv_field(table.true_labels[i]) << ','
            << csv_field(verdicts[i] ? *verdicts[i] : std::string(kRealUnknown)) << '\n';
    }
    finish(out, path);
}

} // namespace prada
