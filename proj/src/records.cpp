#include "prada/records.hpp"

#include <cctype>
#include <cmath>
#include <fstream>
#include <sstream>

#include <json.hpp>

#include "prada/errors.hpp"

namespace prada {

namespace {

using ordered_json = nlohmann::ordered_json;

std::string record_context(std::size_t line_number, const std::string& image_id) {
    std::ostringstream os;
    if (line_number > 0) os << "line " << line_number << ": ";
    os << "record '" << image_id << "'";
    return os.str();
}

// A JSON parse failure caused by a bare NaN/Infinity literal is reported as a
// non-finite value rather than as a syntax error.
bool has_nonfinite_literal(const std::string& line) {
    bool in_string = false;
    std::string word;
    auto flush = [&word]() {
        std::string lower;
        for (char c : word) lower.push_back(static_cast<char>(std::tolower(static_cast<unsigned char>(c))));
        word.clear();
        return lower == "nan" || lower == "inf" || lower == "infinity";
    };
    for (std::size_t i = 0; i < line.size(); ++i) {
        const char c = line[i];
        if (in_string) {
            if (c == '\\') ++i;
            else if (c == '"') in_string = false;
            continue;
        }
        if (c == '"') {
            if (flush()) return true;
            in_string = true;
        } else if (std::isalpha(static_cast<unsigned char>(c))) {
            word.push_back(c);
        } else if (flush()) {
            return true;
        }
    }
    return flush();
}

std::vector<double> parse_values(const ordered_json& node, const std::string& ctx,
                                 std::size_t scale, const char* field) {
    if (!node.is_array()) {
        throw ValidationError(ctx + ": scale " + std::to_string(scale) + " field '" + field +
                              "' must be an array");
    }
    std::vector<double> out;
    out.reserve(node.size());
    for (std::size_t i = 0; i < node.size(); ++i) {
        const auto& v = node[i];
        if (v.is_null()) {
            throw ValidationError(ctx + ": scale " + std::to_string(scale) + " " + field + "[" +
                                  std::to_string(i) + "] is not finite");
        }
        if (!v.is_number()) {
            throw ValidationError(ctx + ": scale " + std::to_string(scale) + " " + field + "[" +
                                  std::to_string(i) + "] is not a number");
        }
        out.push_back(v.get<double>());
    }
    return out;
}

const ordered_json& require(const ordered_json& obj, const char* key, const std::string& ctx) {
    auto it = obj.find(key);
    if (it == obj.end()) throw ValidationError(ctx + ": missing field '" + key + "'");
    return *it;
}

std::string require_string(const ordered_json& obj, const char* key, const std::string& ctx) {
    const auto& v = require(obj, key, ctx);
    if (!v.is_string()) throw ValidationError(ctx + ": field '" + key + "' must be a string");
    return v.get<std::string>();
}

void validate_record_at(const TokenLikelihoodRecord& record, std::size_t line_number,
                        Warnings* warnings) {
    const std::string ctx = record_context(line_number, record.image_id);
    if (record.scales.empty()) throw ValidationError(ctx + ": record has no scales");
    bool warned = false;
    for (std::size_t s = 0; s < record.scales.size(); ++s) {
        const ScaleBlock& block = record.scales[s];
        const std::string where = ctx + ": scale " + std::to_string(s);
        if (block.scale_index != s) {
            throw ValidationError(where + " has scale_index " + std::to_string(block.scale_index) +
                                  " (expected " + std::to_string(s) + ")");
        }
        if (block.log_p_cond.size() != block.log_p_uncond.size()) {
            throw ValidationError(where + ": log_p_cond has " +
                                  std::to_string(block.log_p_cond.size()) +
                                  " values but log_p_uncond has " +
                                  std::to_string(block.log_p_uncond.size()));
        }
        if (block.log_p_cond.empty()) throw ValidationError(where + " has no tokens");
        for (const auto* field : {&block.log_p_cond, &block.log_p_uncond}) {
            const char* name = field == &block.log_p_cond ? "log_p_cond" : "log_p_uncond";
            for (std::size_t t = 0; t < field->size(); ++t) {
                const double v = (*field)[t];
                if (!std::isfinite(v)) {
                    throw ValidationError(where + " " + name + "[" + std::to_string(t) +
                                          "] is not finite");
                }
                if (v > 0.0 && warnings != nullptr && !warned) {
                    warnings->push_back(ctx + ": positive log-probability in scale " +
                                        std::to_string(s) + " " + name);
                    warned = true;
                }
            }
        }
    }
}

} // namespace

std::vector<std::size_t> TokenLikelihoodRecord::token_counts() const {
    std::vector<std::size_t> counts;
    counts.reserve(scales.size());
    for (const auto& block : scales) counts.push_back(block.size());
    return counts;
}

std::size_t TokenLikelihoodRecord::num_tokens() const {
    std::size_t n = 0;
    for (const auto& block : scales) n += block.size();
    return n;
}

void validate_record(const TokenLikelihoodRecord& record, Warnings* warnings) {
    validate_record_at(record, 0, warnings);
}

void validate_shapes(const std::vector<TokenLikelihoodRecord>& records) {
    if (records.empty()) return;
    const auto reference = records.front().token_counts();
    for (const auto& record : records) {
        if (record.token_counts() != reference) {
            throw ValidationError("record '" + record.image_id +
                                  "': scale layout differs from record '" +
                                  records.front().image_id + "'");
        }
    }
}

TokenLikelihoodRecord parse_record_line(const std::string& line, std::size_t line_number,
                                        Warnings* warnings) {
    const std::string where = "line " + std::to_string(line_number);
    ordered_json doc;
    try {
        doc = ordered_json::parse(line);
    } catch (const nlohmann::json::parse_error& e) {
        if (has_nonfinite_literal(line)) {
            throw ValidationError(where + ": non-finite value (NaN/Infinity) in record");
        }
        throw ValidationError(where + ": malformed record: " + e.what());
    }
    if (!doc.is_object()) throw ValidationError(where + ": record must be a JSON object");

    TokenLikelihoodRecord record;
    record.image_id = require_string(doc, "image_id", where);
    const std::string ctx = record_context(line_number, record.image_id);
    record.source_label = require_string(doc, "source_label", ctx);
    record.generator_id = require_string(doc, "generator_id", ctx);
    record.condition = require_string(doc, "condition", ctx);

    const auto& scales = require(doc, "scales", ctx);
    if (!scales.is_array()) throw ValidationError(ctx + ": field 'scales' must be an array");
    for (std::size_t s = 0; s < scales.size(); ++s) {
        const auto& node = scales[s];
        if (!node.is_object()) {
            throw ValidationError(ctx + ": scale " + std::to_string(s) + " must be an object");
        }
        const auto& idx = require(node, "scale_index", ctx);
        if (!idx.is_number_integer() || idx.get<long long>() < 0) {
            throw ValidationError(ctx + ": scale " + std::to_string(s) +
                                  " has invalid scale_index");
        }
        ScaleBlock block;
        block.scale_index = idx.get<std::size_t>();
        block.log_p_cond = parse_values(require(node, "log_p_cond", ctx), ctx, s, "log_p_cond");
        block.log_p_uncond =
            parse_values(require(node, "log_p_uncond", ctx), ctx, s, "log_p_uncond");
        record.scales.push_back(std::move(block));
    }
    validate_record_at(record, line_number, warnings);
    return record;
}

std::string format_record_line(const TokenLikelihoodRecord& record) {
    ordered_json doc;
    doc["image_id"] = record.image_id;
    doc["source_label"] = record.source_label;
    doc["generator_id"] = record.generator_id;
    doc["condition"] = record.condition;
    ordered_json scales = ordered_json::array();
    for (const auto& block : record.scales) {
        ordered_json node;
        node["scale_index"] = block.scale_index;
        node["log_p_cond"] = block.log_p_cond;
        node["log_p_uncond"] = block.log_p_uncond;
        scales.push_back(std::move(node));
    }
    doc["scales"] = std::move(scales);
    // dump() emits the shortest decimal that round-trips each double.
    return doc.dump();
}

std::vector<TokenLikelihoodRecord> read_records(const std::filesystem::path& path,
                                                Warnings* warnings) {
    std::ifstream in(path);
    if (!in) throw IoError("cannot open record file '" + path.string() + "'");

    std::vector<TokenLikelihoodRecord> records;
    std::string line;
    std::size_t line_number = 0;
    while (std::getline(in, line)) {
        ++line_number;
        if (!line.empty() && line.back() == '\r') line.pop_back();
        if (line.find_first_not_of(" \t") == std::string::npos) continue;
        auto record = parse_record_line(line, line_number, warnings);
        if (!records.empty() && record.token_counts() != records.front().token_counts()) {
            throw ValidationError("line " + std::to_string(line_number) + ": record '" +
                                  record.image_id + "' has a scale layout inconsistent with '" +
                                  records.front().image_id + "'");
        }
        records.push_back(std::move(record));
    }
    if (in.bad()) throw IoError("read failure on '" + path.string() + "'");
    if (records.empty()) throw ValidationError("record file '" + path.string() + "' is empty");
    return records;
}

void write_records(const std::vector<TokenLikelihoodRecord>& records,
                   const std::filesystem::path& path) {
    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    if (!out) throw IoError("cannot open '" + path.string() + "' for writing");
    for (const auto& record : records) out << format_record_line(record) << '\n';
    out.flush();
    if (!out) throw IoError("write failure on '" + path.string() + "'");
}

DatasetSummary summarize(const std::vector<TokenLikelihoodRecord>& records) {
    if (records.empty()) throw ValidationError("cannot summarize an empty dataset");
    validate_shapes(records);
    DatasetSummary summary;
    summary.n_records = records.size();
    summary.num_scales = records.front().num_scales();
    summary.token_counts = records.front().token_counts();
    for (const auto& record : records) ++summary.label_counts[record.source_label];
    return summary;
}

} // namespace prada
