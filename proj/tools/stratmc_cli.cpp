// Command-line front end: data generation, model training, single estimates,
// repeated-trial experiments, confidence-interval sweeps and strata
// diagnostics. All outputs are deterministic in (config, seed); the NDJSON
// run log additionally carries wall-clock timestamps.

#include <filesystem>
#include <fstream>
#include <iostream>
#include <string>

#include <CLI11.hpp>
#include <json.hpp>

#include <stratmc/experiment.hpp>
#include <stratmc/model_io.hpp>

namespace fs = std::filesystem;
using nlohmann::json;

namespace {

json read_json_file(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw std::runtime_error("cannot open " + path);
    json j;
    in >> j;
    return j;
}

void ensure_dir(const std::string& dir) {
    if (!dir.empty() && dir != ".") fs::create_directories(dir);
}

std::string join_path(const std::string& dir, const std::string& name) {
    return (fs::path(dir) / name).string();
}

int run_generate(const std::string& testbed, long n, uint64_t seed, const std::string& out) {
    auto bed = stratmc::testbed_by_name(testbed);
    auto rows = stratmc::generate_rows(bed, static_cast<size_t>(n), seed);
    stratmc::write_text_file(out, stratmc::rows_to_csv(rows, bed.dim));
    std::cout << "wrote " << rows.size() << " rows of " << testbed << " to " << out << "\n";
    return 0;
}

int run_train(const std::string& data_path, bool first_difference, const std::string& model_kind,
              int layers, int hidden, int epochs, double lr, int batch, int patience,
              double val_fraction, bool cosine, int components, int max_iters, uint64_t seed,
              const std::string& out_model, const std::string& trace_path) {
    auto rows = stratmc::load_csv_matrix(data_path, first_difference);
    if (model_kind == "flow") {
        int d = static_cast<int>(rows.at(0).size());
        int def_layers, def_hidden;
        stratmc::default_flow_arch(d, def_layers, def_hidden);
        stratmc::TrainConfig tc;
        tc.epochs = epochs;
        tc.learning_rate = lr;
        tc.batch_size = batch;
        tc.patience = patience;
        tc.validation_fraction = val_fraction;
        tc.cosine_decay = cosine;
        tc.seed = seed;
        auto res = stratmc::train_flow(rows, layers > 0 ? layers : def_layers,
                                       hidden > 0 ? hidden : def_hidden, tc);
        stratmc::save_map(*res.map, out_model);
        if (!trace_path.empty())
            stratmc::write_text_file(trace_path, stratmc::loss_trace_csv(res.trace));
        std::cout << "flow trained: best epoch " << res.best_epoch << ", metric "
                  << res.best_metric << ", model written to " << out_model << "\n";
        return 0;
    }
    if (model_kind == "gmm") {
        auto fit = stratmc::fit_gmm(rows, components, max_iters, seed);
        stratmc::GmmSamplerMap map(fit.model);
        stratmc::save_map(map, out_model);
        if (!trace_path.empty()) {
            std::string csv = "iteration,loglik\n";
            for (size_t i = 0; i < fit.loglik_trace.size(); ++i)
                csv += std::to_string(i) + "," +
                       stratmc::detail::fmt_num(fit.loglik_trace[i]) + "\n";
            stratmc::write_text_file(trace_path, csv);
        }
        std::cout << "gmm fitted: " << fit.model.components()
                  << " components, model written to " << out_model << "\n";
        return 0;
    }
    throw std::runtime_error("train: model kind must be flow or gmm");
}

int run_estimate_cmd(const stratmc::ExperimentConfig& cfg) {
    ensure_dir(cfg.out_dir);
    auto result = stratmc::run_experiment(cfg);
    stratmc::write_text_file(join_path(cfg.out_dir, "estimate.csv"),
                             stratmc::repetition_csv(result));

    json reports = json::array();
    for (const auto& [r, rep] : result.repetition_reports) {
        json rj = rep.to_json();
        rj["rep"] = r;
        reports.push_back(std::move(rj));
    }
    for (const auto& rep : result.observation_reports)
        reports.push_back(rep.to_json());
    stratmc::write_text_file(join_path(cfg.out_dir, "estimate.json"),
                             reports.dump(1, '\t') + "\n");
    for (const auto& [r, rep] : result.repetition_reports)
        std::cout << rep.method_label << " " << rep.function_name << " R=" << rep.budget
                  << " E=" << rep.estimate << " SD=" << rep.sd << "\n";
    for (const auto& rep : result.observation_reports)
        std::cout << "obs " << rep.function_name << " n=" << rep.budget
                  << " E=" << rep.estimate << " SD=" << rep.sd << "\n";
    return 0;
}

int run_experiment_cmd(const stratmc::ExperimentConfig& cfg) {
    ensure_dir(cfg.out_dir);
    std::ofstream log(join_path(cfg.out_dir, "run_log.ndjson"), std::ios::binary);
    auto result = stratmc::run_experiment(cfg, &log);
    stratmc::write_text_file(join_path(cfg.out_dir, "aggregate.csv"),
                             stratmc::aggregate_csv(result, cfg.scaled));
    stratmc::write_text_file(join_path(cfg.out_dir, "reps.csv"),
                             stratmc::repetition_csv(result));
    std::cout << "wrote " << result.aggregate.size() << " aggregate rows to "
              << join_path(cfg.out_dir, "aggregate.csv") << "\n";
    return 0;
}

int run_ci_lines_cmd(const stratmc::ExperimentConfig& cfg) {
    ensure_dir(cfg.out_dir);
    auto result = stratmc::run_ci_lines(cfg);
    stratmc::write_text_file(join_path(cfg.out_dir, "ci_lines.csv"),
                             stratmc::ci_lines_csv(result));
    std::cout << "coverage " << result.covered << "/" << result.reports.size()
              << ", mean interval length " << result.mean_length << "\n";
    return 0;
}

int run_validate_strata(const std::string& kind, int d, int m0, int m_r,
                        const std::vector<int>& dims, const std::string& scheme_file,
                        int n, uint64_t seed, const std::string& out) {
    stratmc::StrataScheme scheme;
    if (!scheme_file.empty()) {
        scheme = stratmc::scheme_from_json(read_json_file(scheme_file));
    } else if (kind == "cartesian") {
        scheme = stratmc::build_cartesian(d, m0);
    } else if (kind == "spherical") {
        scheme = stratmc::build_spherical(d, m_r, m0);
    } else if (kind == "radial") {
        scheme = stratmc::build_radial(d, m_r);
    } else if (kind == "selected") {
        scheme = stratmc::build_selected_dims(d, dims, m0);
    } else {
        throw std::runtime_error("validate-strata: unknown scheme kind " + kind);
    }

    auto checks = stratmc::validate_strata(scheme, n, seed);
    auto diag = stratmc::strata_diagnostics_json(scheme, checks);
    if (!out.empty()) stratmc::write_text_file(out, diag.dump(1, '\t') + "\n");
    for (const auto& c : checks)
        std::cout << (c.pass ? "pass " : "FAIL ") << c.name << "\n";
    return diag.at("pass").get<bool>() ? 0 : 1;
}

} // namespace

int main(int argc, char** argv) {
    CLI::App app{"stratified Monte Carlo estimation with trainable transport maps"};
    app.require_subcommand(1);
    app.fallthrough();  // global flags may follow the subcommand

    uint64_t seed = 0;
    std::string out_dir;
    int threads = 0;
    std::string config_path;
    app.add_option("--seed", seed, "master seed (overrides config)");
    app.add_option("--out", out_dir, "output directory (overrides config)");
    app.add_option("--threads", threads, "worker threads for repetitions");
    app.add_option("--config", config_path, "config file for estimate/experiment/ci-lines");

    auto* gen = app.add_subcommand("generate", "sample a testbed to CSV");
    std::string gen_testbed, gen_out = "data.csv";
    long gen_n = 1000;
    gen->add_option("--testbed", gen_testbed, "testbed name")->required();
    gen->add_option("-n,--n", gen_n, "number of rows");
    gen->add_option("--out-file", gen_out, "output CSV path");

    auto* train = app.add_subcommand("train", "fit a flow or GMM on observations");
    std::string train_data, train_model = "flow", train_out = "model.json", train_trace;
    bool train_diff = false, tr_cosine = false;
    int tr_layers = 0, tr_hidden = 0, tr_epochs = 2000, tr_batch = 128, tr_patience = 200;
    int tr_components = 4, tr_iters = 200;
    double tr_lr = 1e-3, tr_val = 0.1;
    train->add_option("--data", train_data, "training CSV")->required();
    train->add_flag("--first-difference", train_diff, "difference each column first");
    train->add_option("--model", train_model, "flow | gmm");
    train->add_option("--layers", tr_layers, "flow layers (0 = default for d)");
    train->add_option("--hidden", tr_hidden, "conditioner width / spline bins");
    train->add_option("--epochs", tr_epochs, "training epoch cap");
    train->add_option("--lr", tr_lr, "learning rate");
    train->add_option("--batch", tr_batch, "batch size");
    train->add_option("--patience", tr_patience, "early-stop patience (epochs)");
    train->add_option("--val-fraction", tr_val, "validation split fraction");
    train->add_flag("--cosine-decay", tr_cosine, "anneal the learning rate to zero");
    train->add_option("--components", tr_components, "gmm components");
    train->add_option("--max-iters", tr_iters, "gmm EM iteration cap");
    train->add_option("--out-model", train_out, "model file to write");
    train->add_option("--trace", train_trace, "loss trace CSV to write");

    auto* est = app.add_subcommand("estimate", "single estimates from a config");
    auto* exp = app.add_subcommand("experiment", "repeated-trial experiment from a config");
    auto* ci = app.add_subcommand("ci-lines", "confidence-interval sweep from a config");

    auto* val = app.add_subcommand("validate-strata", "stratification diagnostics");
    std::string val_kind = "cartesian", val_scheme_file, val_out;
    int val_d = 2, val_m0 = 4, val_mr = 4, val_n = 100000;
    std::vector<int> val_dims;
    val->add_option("--kind", val_kind, "cartesian | spherical | radial | selected");
    val->add_option("--d", val_d, "dimension");
    val->add_option("--m0", val_m0, "per-axis strata");
    val->add_option("--mr", val_mr, "radial strata");
    val->add_option("--dims", val_dims, "selected coordinates");
    val->add_option("--scheme-file", val_scheme_file, "load scheme JSON instead of building");
    val->add_option("--n-samples", val_n, "classified sample count");
    val->add_option("--out-file", val_out, "diagnostics JSON path");

    CLI11_PARSE(app, argc, argv);

    try {
        if (gen->parsed()) return run_generate(gen_testbed, gen_n, seed, gen_out);
        if (train->parsed())
            return run_train(train_data, train_diff, train_model, tr_layers, tr_hidden,
                             tr_epochs, tr_lr, tr_batch, tr_patience, tr_val, tr_cosine,
                             tr_components, tr_iters, seed, train_out, train_trace);
        if (est->parsed() || exp->parsed() || ci->parsed()) {
            if (config_path.empty())
                throw std::runtime_error("this subcommand needs --config <file>");
            auto cfg = stratmc::parse_config(read_json_file(config_path));
            if (app.count("--seed") > 0) cfg.seed = seed;
            if (!out_dir.empty()) cfg.out_dir = out_dir;
            if (threads > 0) cfg.threads = threads;
            if (est->parsed()) return run_estimate_cmd(cfg);
            if (exp->parsed()) return run_experiment_cmd(cfg);
            return run_ci_lines_cmd(cfg);
        }
        if (val->parsed())
            return run_validate_strata(val_kind, val_d, val_m0, val_mr, val_dims,
                                       val_scheme_file, val_n, seed, val_out);
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 2;
    }
    return 2;
}
