#include "prada/cli.hpp"

#include <cmath>
#include <fstream>
#include <map>
#include <optional>
#include <ostream>
#include <sstream>

#include <CLI11.hpp>
#include <json.hpp>

#include "prada/calibration.hpp"
#include "prada/diagnostics.hpp"
#include "prada/errors.hpp"
#include "prada/evaluation.hpp"
#include "prada/records.hpp"
#include "prada/scores.hpp"
#include "prada/synth.hpp"
#include "text_util.hpp"

namespace prada::cli {

namespace {

using ordered_json = nlohmann::ordered_json;

std::vector<TokenLikelihoodRecord> load_records(const std::string& path, std::ostream& err) {
    Warnings warnings;
    auto records = read_records(path, &warnings);
    if (!warnings.empty()) {
        err << "note: " << warnings.size() << " record(s) in " << path
            << " contain positive log-probabilities (first: " << warnings.front() << ")\n";
    }
    return records;
}

void write_text(const std::filesystem::path& path, const std::string& text) {
    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    if (!out) throw IoError("cannot open '" + path.string() + "' for writing");
    out << text;
    if (!out) throw IoError("write failure on '" + path.string() + "'");
}

std::filesystem::path sibling(const std::filesystem::path& path, const std::string& suffix) {
    auto stem = path.stem().string();
    return path.parent_path() / (stem + suffix);
}

struct SynthArgs {
    std::string profile = "var-like";
    std::string profile_file;
    std::size_t n_real = 500;
    std::size_t n_fake = 500;
    std::optional<std::uint64_t> seed;
    std::string out_real;
    std::string out_fake;
};

int do_synth(const SynthArgs& a, std::ostream& out) {
    SynthProfile profile;
    if (!a.profile_file.empty()) {
        std::ifstream in(a.profile_file);
        if (!in) throw IoError("cannot open profile file '" + a.profile_file + "'");
        std::ostringstream buffer;
        buffer << in.rdbuf();
        profile = profile_from_json(buffer.str());
    } else {
        profile = builtin_profile(a.profile);
    }
    if (a.seed) profile.seed = *a.seed;
    const SynthDataset data = generate(profile, a.n_real, a.n_fake);
    write_records(data.real, a.out_real);
    write_records(data.fake, a.out_fake);
    out << "wrote " << data.real.size() << " real and " << data.fake.size() << " generated records ("
        << profile.name << ", seed " << profile.seed << ")\n";
    return kExitOk;
}

struct CalibrateArgs {
    std::string real;
    std::string fake;
    std::string config;
    std::size_t runs = 1;
    std::string out;
    std::optional<std::size_t> steps;
    std::optional<std::size_t> batch_size;
    std::optional<std::size_t> n_train;
    std::optional<std::size_t> hidden;
    std::optional<std::uint64_t> seed;
    std::optional<std::string> mode;
    std::optional<double> lr;
    std::optional<double> weight_decay;
    std::optional<double> label_smoothing;
    std::optional<double> lambda_w;
    std::optional<double> noise_factor;
    bool fixed_alpha = false;
    bool fixed_w = false;
};

int do_calibrate(const CalibrateArgs& a, std::ostream& out, std::ostream& err) {
    CalibrationConfig config = a.config.empty() ? CalibrationConfig{} : load_config(a.config);
    if (a.steps) config.steps = *a.steps;
    if (a.batch_size) config.batch_size = *a.batch_size;
    if (a.n_train) config.n_train_per_class = *a.n_train;
    if (a.hidden) config.n_hidden = *a.hidden;
    if (a.seed) config.seed = *a.seed;
    if (a.mode) config.mode = parse_score_mode(*a.mode);
    if (a.lr) config.optimizer.lr = *a.lr;
    if (a.weight_decay) config.optimizer.weight_decay = *a.weight_decay;
    if (a.label_smoothing) config.label_smoothing = *a.label_smoothing;
    if (a.lambda_w) config.lambda_w = *a.lambda_w;
    if (a.noise_factor) config.noise_factor = *a.noise_factor;
    if (a.fixed_alpha) config.learn_alpha = false;
    if (a.fixed_w) config.learn_w = false;
    config.validate();

    const auto real = load_records(a.real, err);
    const auto fake = load_records(a.fake, err);
    const RunSet set = calibrate_runs(real, fake, config, a.runs);

    const std::filesystem::path out_path(a.out);
    ordered_json manifest;
    manifest["generator_id"] = set.runs.front().model.generator_id;
    manifest["config"] = ordered_json::parse(config_to_json(config));
    manifest["config_digest"] = config_digest(config);
    manifest["real"] = a.real;
    manifest["fake"] = a.fake;
    manifest["model"] = out_path.filename().string();
    ordered_json runs = ordered_json::array();
    std::vector<double> aurocs;
    for (std::size_t i = 0; i < set.runs.size(); ++i) {
        const CalibrationRun& run = set.runs[i];
        const auto run_path = sibling(out_path, ".run" + std::to_string(i) + ".json");
        save_model(run.model, run_path);
        if (i == 0) save_model(run.model, out_path);

        ordered_json entry;
        entry["run"] = i;
        entry["seed"] = run.seed;
        entry["model"] = run_path.filename().string();
        entry["train_real"] = run.split.train_real.size();
        entry["train_fake"] = run.split.train_fake.size();
        entry["test_real"] = run.split.test_real.size();
        entry["test_fake"] = run.split.test_fake.size();
        entry["final_loss"] = run.loss_history.back();
        entry["alpha"] = run.model.alpha;
        entry["scale_weights"] = run.model.scale_weights;
        if (!run.split.test_real.empty() && !run.split.test_fake.empty()) {
            const auto test = score_test_split(run, real, fake);
            const double value = auroc(test.scores, test.labels);
            aurocs.push_back(value);
            entry["test_auroc"] = value;
        } else {
            entry["test_auroc"] = nullptr;
        }
        runs.push_back(std::move(entry));
    }
    manifest["runs"] = std::move(runs);
    if (!aurocs.empty()) {
        const MeanStd stat = mean_std(aurocs);
        manifest["test_auroc_mean"] = stat.mean;
        manifest["test_auroc_std"] = stat.std;
        manifest["single_run"] = aurocs.size() == 1;
        out << "test AUROC " << detail::format_double(stat.mean) << " ± "
            << detail::format_double(stat.std) << " over " << aurocs.size() << " run(s)\n";
    } else {
        out << "no held-out records; test AUROC not computed\n";
    }
    const auto manifest_path = sibling(out_path, ".manifest.json");
    write_text(manifest_path, manifest.dump(2) + "\n");
    out << "wrote " << out_path.string() << " and " << manifest_path.string() << "\n";
    return kExitOk;
}

int do_score(const std::string& model_path, const std::string& in_path, const std::string& out_path,
             std::ostream& out, std::ostream& err) {
    const ScoreModel model = load_model(model_path);
    const auto records = load_records(in_path, err);
    ScoreColumn column;
    column.generator_id = model.generator_id;
    for (const auto& r : records) {
        column.image_ids.push_back(r.image_id);
        column.source_labels.push_back(r.source_label);
        column.scores.push_back(prada_score(r, model));
    }
    write_score_column(column, out_path);
    out << "scored " << records.size() << " records under " << model.generator_id << "\n";
    return kExitOk;
}

ScoreTable load_table(const std::vector<std::string>& paths, const std::string& truth_path) {
    std::vector<ScoreColumn> columns;
    for (const auto& p : paths) columns.push_back(read_score_column(p));
    ScoreTable table = join_columns(columns);
    if (!truth_path.empty()) {
        std::ifstream in(truth_path);
        if (!in) throw IoError("cannot open truth file '" + truth_path + "'");
        std::string line;
        std::getline(in, line);
        if (detail::split_csv(line) != std::vector<std::string>{"image_id", "source_label"}) {
            throw ValidationError("truth file must have header image_id,source_label");
        }
        std::map<std::string, std::string> truth;
        while (std::getline(in, line)) {
            if (line.empty() || line == "\r") continue;
            auto f = detail::split_csv(line);
            if (f.size() != 2) throw ValidationError("truth file: expected 2 fields per row");
            truth[f[0]] = f[1];
        }
        for (std::size_t i = 0; i < table.rows(); ++i) {
            auto it = truth.find(table.image_ids[i]);
            if (it == truth.end()) {
                throw ValidationError("truth file has no label for image '" + table.image_ids[i] + "'");
            }
            table.true_labels[i] = it->second;
        }
    }
    return table;
}

int do_detect(const std::vector<std::string>& tables, const std::string& truth,
              const std::string& roc_out, std::ostream& out) {
    const ScoreTable table = load_table(tables, truth);
    const auto labels = table.binary_labels();
    const auto ensemble = ensemble_detect(table);
    for (std::size_t g = 0; g < table.generators.size(); ++g) {
        std::vector<double> column;
        for (const auto& row : table.scores) column.push_back(row[g]);
        out << "AUROC[" << table.generators[g] << "] " << detail::format_double(auroc(column, labels)) << "\n";
    }
    out << "AUROC " << detail::format_double(auroc(ensemble, labels)) << "\n";
    if (!roc_out.empty()) write_roc_csv(roc_curve(ensemble, labels), roc_out);
    return kExitOk;
}

int do_attribute(const std::vector<std::string>& tables, const std::string& truth,
                 const std::string& confusion_out, const std::string& verdicts_out, double threshold,
                 std::ostream& out) {
    const ScoreTable table = load_table(tables, truth);
    const auto verdicts = attribute(table, threshold);
    const ConfusionMatrix m = confusion(verdicts, table.true_labels, table.generators);
    if (!confusion_out.empty()) write_confusion_csv(m, confusion_out);
    if (!verdicts_out.empty()) write_verdicts_csv(table, verdicts, verdicts_out);
    out << "accuracy " << detail::format_double(m.accuracy) << "\n";
    return kExitOk;
}

struct ReportArgs {
    std::string real;
    std::string fake;
    std::string model;
    std::string out;
    std::string score = "delta";
    bool cumulative = false;
    std::optional<double> alpha;
    double grid_min = -15.0;
    double grid_max = 5.0;
    std::size_t points = 512;
    bool two_d = false;
};

double report_alpha(const ReportArgs& a) {
    if (a.alpha) return *a.alpha;
    if (!a.model.empty()) return load_model(a.model).alpha;
    return 1.0;
}

void require(const std::string& value, const char* flag) {
    if (value.empty()) throw ValidationError(std::string("missing required flag ") + flag);
}

int do_report(const std::string& kind, const ReportArgs& a, std::ostream& out, std::ostream& err) {
    if (kind == "scale-auroc") {
        require(a.real, "--real");
        require(a.fake, "--fake");
        const auto real = load_records(a.real, err);
        const auto fake = load_records(a.fake, err);
        const auto values = scale_auroc(real, fake, parse_token_score(a.score), !a.cumulative);
        write_scale_auroc_csv(values, real.front().token_counts(), a.out);
    } else if (kind == "token-stats") {
        require(a.real, "--real");
        require(a.fake, "--fake");
        const double alpha = report_alpha(a);
        const auto real = load_records(a.real, err);
        const auto fake = load_records(a.fake, err);
        if (real.front().token_counts() != fake.front().token_counts()) {
            throw ValidationError("real and generated records have different scale layouts");
        }
        write_token_stats_csv(token_stats(real, alpha), token_stats(fake, alpha), a.out);
    } else if (kind == "cdf") {
        require(a.real, "--real");
        require(a.fake, "--fake");
        const double alpha = report_alpha(a);
        const auto grid = linspace(a.grid_min, a.grid_max, a.points);
        const auto real = all_delta_alpha(load_records(a.real, err), alpha);
        const auto fake = all_delta_alpha(load_records(a.fake, err), alpha);
        write_cdf_csv(grid, empirical_cdf(real, grid), empirical_cdf(fake, grid), a.out);
    } else if (kind == "score-curve") {
        require(a.model, "--model");
        const ScoreModel model = load_model(a.model);
        const auto grid = linspace(a.grid_min, a.grid_max, a.points);
        if (model.mode() == ScoreMode::pair2d || a.two_d) {
            write_score_grid_csv(score_grid_2d(model, grid, grid), a.out);
        } else {
            write_score_curve_csv(score_curve(model, grid), a.out);
        }
    } else if (kind == "weights") {
        require(a.model, "--model");
        write_weights_csv(weight_dump(load_model(a.model)), a.out);
    }
    out << "wrote " << a.out << "\n";
    return kExitOk;
}

int do_profiles(const std::string& name, std::ostream& out) {
    for (const auto& p : builtin_profiles()) {
        if (!name.empty() && p.name != name) continue;
        out << "# " << p.name << " (v" << p.version << ", S=" << p.num_scales() << ")\n"
            << profile_to_json(p) << "\n";
    }
    if (!name.empty()) builtin_profile(name);  // unknown names are errors
    return kExitOk;
}

} // namespace

int run(const std::vector<std::string>& args, std::ostream& out, std::ostream& err) {
    CLI::App app{"Detection and attribution of AR-generated images from token likelihoods", "prada"};
    app.require_subcommand(1);

    SynthArgs synth;
    auto* synth_cmd = app.add_subcommand("synth", "Generate a synthetic real/generated record pair");
    synth_cmd->add_option("--profile", synth.profile, "Built-in profile name")->capture_default_str();
    synth_cmd->add_option("--profile-file", synth.profile_file, "JSON profile file (overrides --profile)");
    synth_cmd->add_option("--n-real", synth.n_real, "Number of real records")->capture_default_str();
    synth_cmd->add_option("--n-fake", synth.n_fake, "Number of generated records")->capture_default_str();
    synth_cmd->add_option("--seed", synth.seed, "Seed (default: the profile's seed, 0)");
    synth_cmd->add_option("--out-real", synth.out_real, "Output record file for real images")->required();
    synth_cmd->add_option("--out-fake", synth.out_fake, "Output record file for generated images")->required();

    CalibrateArgs cal;
    auto* cal_cmd = app.add_subcommand("calibrate", "Calibrate a score model for one generator");
    cal_cmd->add_option("--real", cal.real, "Record file of real images")->required();
    cal_cmd->add_option("--fake", cal.fake, "Record file of generated images")->required();
    cal_cmd->add_option("--config", cal.config, "JSON calibration config (flags override it)");
    cal_cmd->add_option("--runs", cal.runs, "Independent runs with seeds seed..seed+runs-1")->capture_default_str();
    cal_cmd->add_option("--out", cal.out, "Model file; also writes <stem>.runN.json and <stem>.manifest.json")->required();
    cal_cmd->add_option("--steps", cal.steps, "Optimizer steps [3000]");
    cal_cmd->add_option("--batch-size", cal.batch_size, "Mini-batch size [64]");
    cal_cmd->add_option("--n-train", cal.n_train, "Training records per class [250]");
    cal_cmd->add_option("--hidden", cal.hidden, "Hidden units per layer [16]");
    cal_cmd->add_option("--seed", cal.seed, "Base seed [0]");
    cal_cmd->add_option("--mode", cal.mode, "ratio1d or pair2d [ratio1d]");
    cal_cmd->add_option("--lr", cal.lr, "AdamW learning rate [0.003]");
    cal_cmd->add_option("--weight-decay", cal.weight_decay, "AdamW decoupled weight decay [0.0001]");
    cal_cmd->add_option("--label-smoothing", cal.label_smoothing, "Label smoothing epsilon [0.1]");
    cal_cmd->add_option("--lambda-w", cal.lambda_w, "Weight of the | |w|_1 - 1 | penalty [0.01]");
    cal_cmd->add_option("--noise-factor", cal.noise_factor, "Training noise std as a fraction of per-scale std [0.05]");
    cal_cmd->add_flag("--fixed-alpha", cal.fixed_alpha, "Freeze alpha at 1");
    cal_cmd->add_flag("--fixed-w", cal.fixed_w, "Freeze scale weights at 1/S");

    std::string model_path;
    std::string in_path;
    std::string score_out;
    auto* score_cmd = app.add_subcommand("score", "Score a record file with a calibrated model");
    score_cmd->add_option("--model", model_path, "Score model file")->required();
    score_cmd->add_option("--in", in_path, "Record file")->required();
    score_cmd->add_option("--out", score_out, "Output CSV (image_id,source_label,generator_id,score)")->required();

    std::vector<std::string> tables;
    std::string truth;
    std::string roc_out;
    auto* detect_cmd = app.add_subcommand("detect", "Max-over-generators detection AUROC");
    detect_cmd->add_option("--tables", tables, "Score CSVs, one per candidate generator")->required();
    detect_cmd->add_option("--truth", truth, "CSV image_id,source_label (default: labels in the tables)");
    detect_cmd->add_option("--roc-out", roc_out, "Write ROC points (fpr,tpr) of the ensemble score");

    std::string confusion_out;
    std::string verdicts_out;
    double threshold = 0.0;
    auto* attr_cmd = app.add_subcommand("attribute", "Attribute images to generators or real/unknown");
    attr_cmd->add_option("--tables", tables, "Score CSVs, one per candidate generator")->required();
    attr_cmd->add_option("--truth", truth, "CSV image_id,source_label (default: labels in the tables)");
    attr_cmd->add_option("--out", confusion_out, "Confusion matrix CSV");
    attr_cmd->add_option("--verdicts-out", verdicts_out, "Per-image verdict CSV");
    attr_cmd->add_option("--threshold", threshold, "Decision threshold on the score")->capture_default_str();

    ReportArgs report;
    std::string report_kind;
    auto* report_cmd = app.add_subcommand("report", "Export diagnostic data as CSV");
    report_cmd->require_subcommand(1);
    auto add_out = [&report](CLI::App* cmd) {
        cmd->add_option("--out", report.out, "Output CSV")->required();
    };
    auto add_grid = [&report](CLI::App* cmd) {
        cmd->add_option("--grid-min", report.grid_min, "Grid lower end")->capture_default_str();
        cmd->add_option("--grid-max", report.grid_max, "Grid upper end")->capture_default_str();
        cmd->add_option("--points", report.points, "Grid points")->capture_default_str();
    };
    auto* r_scale = report_cmd->add_subcommand("scale-auroc", "Per-scale AUROC of mean delta or ICAS");
    r_scale->add_option("--real", report.real, "Real record file")->required();
    r_scale->add_option("--fake", report.fake, "Generated record file")->required();
    r_scale->add_option("--score", report.score, "delta or icas")->capture_default_str();
    r_scale->add_flag("--cumulative", report.cumulative, "Use scales 0..s instead of scale s alone");
    add_out(r_scale);
    auto* r_stats = report_cmd->add_subcommand("token-stats", "Token-wise mean/std of the balanced ratio");
    r_stats->add_option("--real", report.real, "Real record file")->required();
    r_stats->add_option("--fake", report.fake, "Generated record file")->required();
    r_stats->add_option("--alpha", report.alpha, "Balance alpha (default: from --model, else 1)");
    r_stats->add_option("--model", report.model, "Take alpha from this score model");
    add_out(r_stats);
    auto* r_cdf = report_cmd->add_subcommand("cdf", "Empirical CDFs of the balanced ratio per class");
    r_cdf->add_option("--real", report.real, "Real record file")->required();
    r_cdf->add_option("--fake", report.fake, "Generated record file")->required();
    r_cdf->add_option("--alpha", report.alpha, "Balance alpha (default: from --model, else 1)");
    r_cdf->add_option("--model", report.model, "Take alpha from this score model");
    add_grid(r_cdf);
    add_out(r_cdf);
    auto* r_curve = report_cmd->add_subcommand("score-curve", "Tabulate the learned token score");
    r_curve->add_option("--model", report.model, "Score model file")->required();
    r_curve->add_flag("--two-d", report.two_d, "Export over (log p_cond, log p_uncond) even for ratio1d");
    add_grid(r_curve);
    add_out(r_curve);
    auto* r_weights = report_cmd->add_subcommand("weights", "Dump the scale weights");
    r_weights->add_option("--model", report.model, "Score model file")->required();
    add_out(r_weights);

    std::string profile_name;
    auto* profiles_cmd = app.add_subcommand("profiles", "List built-in synthetic profiles");
    profiles_cmd->add_option("--name", profile_name, "Show only this profile");

    std::vector<std::string> argv_storage{"prada"};
    argv_storage.insert(argv_storage.end(), args.begin(), args.end());
    std::vector<char*> argv;
    for (auto& s : argv_storage) argv.push_back(s.data());

    try {
        app.parse(static_cast<int>(argv.size()), argv.data());
    } catch (const CLI::CallForHelp& e) {
        return app.exit(e, out, err);
    } catch (const CLI::CallForAllHelp& e) {
        return app.exit(e, out, err);
    } catch (const CLI::ParseError& e) {
        app.exit(e, out, err);
        return kExitValidation;
    }

    try {
        if (*synth_cmd) return do_synth(synth, out);
        if (*cal_cmd) return do_calibrate(cal, out, err);
        if (*score_cmd) return do_score(model_path, in_path, score_out, out, err);
        if (*detect_cmd) return do_detect(tables, truth, roc_out, out);
        if (*attr_cmd) return do_attribute(tables, truth, confusion_out, verdicts_out, threshold, out);
        if (*report_cmd) {
            for (auto* sub : {r_scale, r_stats, r_cdf, r_curve, r_weights}) {
                if (*sub) report_kind = sub->get_name();
            }
            return do_report(report_kind, report, out, err);
        }
        if (*profiles_cmd) return do_profiles(profile_name, out);
    } catch (const IoError& e) {
        err << "error: " << e.what() << "\n";
        return kExitIo;
    } catch (const ValidationError& e) {
        err << "error: " << e.what() << "\n";
        return kExitValidation;
    } catch (const DivergenceError& e) {
        err << "error: " << e.what() << " (try a smaller --lr)\n";
        return kExitValidation;
    }
    return kExitValidation;
}

} // namespace prada::cli
