#pragma once

// Config-driven harness shared by the CLI and the acceptance suite: testbed
// and model resolution (exact transports, trained flows, GMMs), single
// estimates, repeated-trial experiments with aggregation, confidence-interval
// sweeps, and strata diagnostics. Every output file is a deterministic
// function of (config, seed); only the NDJSON run log carries wall-clock
// timestamps.

#include <chrono>
#include <cstdio>
#include <fstream>
#include <functional>
#include <memory>
#include <optional>
#include <sstream>
#include <stdexcept>
#include <string>
#include <thread>
#include <vector>

#include <json.hpp>

#include "estimate.hpp"
#include "flow.hpp"
#include "gmm.hpp"
#include "model_io.hpp"
#include "stats_tests.hpp"
#include "strata.hpp"
#include "testbeds.hpp"

namespace stratmc {

class ConfigError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

// ---------------------------------------------------------------------------
// configuration

struct SchemeSpec {
    std::string kind = "cmc";  // cmc | cartesian | spherical | radial | selected
    int m0 = 1;
    int m_r = 1;
    int eta = 3;
    std::string selection = "random";  // random | high-variance (selected only)
    std::vector<int> dims;             // explicit coordinate list overrides selection
    long pilot_r0 = 1024;
};

struct ModelSpec {
    std::string kind = "exact";  // exact | flow | gmm
    std::string path;            // pre-trained flow/gmm file
    int layers = 0;              // 0 = dimension default
    int hidden = 0;
    int epochs = 2000;
    double learning_rate = 1e-3;
    int batch_size = 128;
    int patience = 200;
    double validation_fraction = 0.1;
    bool cosine_decay = false;
    int components = 4;   // gmm
    int max_iters = 200;  // gmm
};

struct ExperimentConfig {
    std::string testbed;  // empty when reading a csv
    std::string csv_path;
    bool first_difference = false;
    std::vector<std::string> functions;
    ModelSpec model;
    SchemeSpec scheme;
    std::string allocation = "prop";  // prop | opt
    double pilot_fraction = 0.125;
    std::vector<long> budgets;
    int repetitions = 10;
    double alpha = 0.05;
    uint64_t seed = 0;
    size_t train_n = 0;  // 0 = testbed default
    bool retrain_per_rep = false;
    bool scaled = false;
    int threads = 1;
    std::string out_dir = ".";
};

namespace detail {

inline void reject_unknown_keys(const nlohmann::json& j,
                                std::initializer_list<const char*> allowed,
                                const std::string& where) {
    for (auto it = j.begin(); it != j.end(); ++it) {
        bool ok = false;
        for (const char* k : allowed)
            if (it.key() == k) { ok = true; break; }
        if (!ok) throw ConfigError("unknown key '" + it.key() + "' in " + where);
    }
}

} // namespace detail

inline ExperimentConfig parse_config(const nlohmann::json& j) {
    detail::reject_unknown_keys(
        j,
        {"testbed", "csv", "functions", "model", "scheme", "allocation", "R", "repetitions",
         "alpha", "seed", "train_n", "retrain_per_rep", "scaled", "threads", "out"},
        "config");
    ExperimentConfig cfg;
    if (j.contains("testbed")) cfg.testbed = j.at("testbed").get<std::string>();
    if (j.contains("csv")) {
        const auto& c = j.at("csv");
        detail::reject_unknown_keys(c, {"path", "first_difference"}, "config.csv");
        cfg.csv_path = c.at("path").get<std::string>();
        if (c.contains("first_difference"))
            cfg.first_difference = c.at("first_difference").get<bool>();
    }
    if (cfg.testbed.empty() == cfg.csv_path.empty())
        throw ConfigError("config needs exactly one of 'testbed' or 'csv'");
    if (!j.contains("functions") || j.at("functions").empty())
        throw ConfigError("config needs a nonempty 'functions' list");
    for (const auto& f : j.at("functions")) cfg.functions.push_back(f.get<std::string>());

    if (j.contains("model")) {
        const auto& m = j.at("model");
        detail::reject_unknown_keys(m,
                                    {"kind", "path", "layers", "hidden", "epochs",
                                     "learning_rate", "batch_size", "patience",
                                     "validation_fraction", "cosine_decay", "components",
                                     "max_iters"},
                                    "config.model");
        cfg.model.kind = m.at("kind").get<std::string>();
        if (m.contains("path")) cfg.model.path = m.at("path").get<std::string>();
        if (m.contains("layers")) cfg.model.layers = m.at("layers").get<int>();
        if (m.contains("hidden")) cfg.model.hidden = m.at("hidden").get<int>();
        if (m.contains("epochs")) cfg.model.epochs = m.at("epochs").get<int>();
        if (m.contains("learning_rate"))
            cfg.model.learning_rate = m.at("learning_rate").get<double>();
        if (m.contains("batch_size")) cfg.model.batch_size = m.at("batch_size").get<int>();
        if (m.contains("patience")) cfg.model.patience = m.at("patience").get<int>();
        if (m.contains("validation_fraction"))
            cfg.model.validation_fraction = m.at("validation_fraction").get<double>();
        if (m.contains("cosine_decay")) cfg.model.cosine_decay = m.at("cosine_decay").get<bool>();
        if (m.contains("components")) cfg.model.components = m.at("components").get<int>();
        if (m.contains("max_iters")) cfg.model.max_iters = m.at("max_iters").get<int>();
        if (cfg.model.kind != "exact" && cfg.model.kind != "flow" && cfg.model.kind != "gmm")
            throw ConfigError("model.kind must be exact, flow or gmm");
    }

    if (j.contains("scheme")) {
        const auto& s = j.at("scheme");
        detail::reject_unknown_keys(
            s, {"kind", "m0", "m_r", "eta", "selection", "dims", "pilot_r0"}, "config.scheme");
        cfg.scheme.kind = s.at("kind").get<std::string>();
        if (s.contains("m0")) cfg.scheme.m0 = s.at("m0").get<int>();
        if (s.contains("m_r")) cfg.scheme.m_r = s.at("m_r").get<int>();
        if (s.contains("eta")) cfg.scheme.eta = s.at("eta").get<int>();
        if (s.contains("selection")) cfg.scheme.selection = s.at("selection").get<std::string>();
        if (s.contains("dims")) cfg.scheme.dims = s.at("dims").get<std::vector<int>>();
        if (s.contains("pilot_r0")) cfg.scheme.pilot_r0 = s.at("pilot_r0").get<long>();
        if (cfg.scheme.kind != "cmc" && cfg.scheme.kind != "cartesian" &&
            cfg.scheme.kind != "spherical" && cfg.scheme.kind != "radial" &&
            cfg.scheme.kind != "selected")
            throw ConfigError("scheme.kind must be cmc, cartesian, spherical, radial or selected");
        if (cfg.scheme.kind == "selected" && cfg.scheme.selection != "random" &&
            cfg.scheme.selection != "high-variance" && cfg.scheme.dims.empty())
            throw ConfigError("scheme.selection must be random, high-variance, or explicit dims");
    }

    if (j.contains("allocation")) {
        const auto& a = j.at("allocation");
        detail::reject_unknown_keys(a, {"kind", "pilot_fraction"}, "config.allocation");
        cfg.allocation = a.at("kind").get<std::string>();
        if (a.contains("pilot_fraction"))
            cfg.pilot_fraction = a.at("pilot_fraction").get<double>();
        if (cfg.allocation != "prop" && cfg.allocation != "opt")
            throw ConfigError("allocation.kind must be prop or opt");
    }

    if (!j.contains("R")) throw ConfigError("config needs an 'R' list");
    if (j.at("R").is_array())
        for (const auto& r : j.at("R")) cfg.budgets.push_back(r.get<long>());
    else
        cfg.budgets.push_back(j.at("R").get<long>());

    if (j.contains("repetitions")) cfg.repetitions = j.at("repetitions").get<int>();
    if (j.contains("alpha")) cfg.alpha = j.at("alpha").get<double>();
    if (j.contains("seed")) cfg.seed = j.at("seed").get<uint64_t>();
    if (j.contains("train_n")) cfg.train_n = j.at("train_n").get<size_t>();
    if (j.contains("retrain_per_rep")) cfg.retrain_per_rep = j.at("retrain_per_rep").get<bool>();
    if (j.contains("scaled")) cfg.scaled = j.at("scaled").get<bool>();
    if (j.contains("threads")) cfg.threads = j.at("threads").get<int>();
    if (j.contains("out")) cfg.out_dir = j.at("out").get<std::string>();

    if (cfg.repetitions < 1) throw ConfigError("repetitions must be >= 1");
    if (cfg.budgets.empty()) throw ConfigError("R list must be nonempty");
    if (!(cfg.alpha > 0.0 && cfg.alpha < 1.0)) throw ConfigError("alpha must be in (0,1)");
    if (cfg.threads < 1) throw ConfigError("threads must be >= 1");
    return cfg;
}

// stream derivation tags (top level under the master seed)
namespace detail {
inline constexpr uint64_t kTagTrain = 0x11;
inline constexpr uint64_t kTagGenerate = 0x22;
inline constexpr uint64_t kTagRepetition = 0x33;
inline constexpr uint64_t kTagDims = 0x44;
} // namespace detail

// ---------------------------------------------------------------------------
// model / data resolution

struct ResolvedSetup {
    ExperimentConfig cfg;
    int dim = 0;
    std::optional<TargetSpec> bed;  // synthetic testbeds only
    std::vector<std::vector<double>> train_data;
    TransportPtr transport;  // sampler-only kinds allowed for cmc
    nlohmann::json train_info;
};

inline std::vector<std::vector<double>> generate_rows(const TargetSpec& bed, size_t n,
                                                      uint64_t seed) {
    RngStream rng(seed, derive_stream(detail::kTagGenerate));
    std::vector<std::vector<double>> rows;
    rows.reserve(n);
    for (size_t i = 0; i < n; ++i) rows.push_back(bed.sampler(rng));
    return rows;
}

inline TransportPtr train_model_for(const ExperimentConfig& cfg,
                                    const std::vector<std::vector<double>>& data,
                                    uint64_t train_seed, nlohmann::json* info) {
    if (cfg.model.kind == "flow") {
        int layers = cfg.model.layers, hidden = cfg.model.hidden;
        int d = static_cast<int>(data.at(0).size());
        int def_layers, def_hidden;
        default_flow_arch(d, def_layers, def_hidden);
        if (layers <= 0) layers = def_layers;
        if (hidden <= 0) hidden = def_hidden;
        TrainConfig tc;
        tc.epochs = cfg.model.epochs;
        tc.learning_rate = cfg.model.learning_rate;
        tc.batch_size = cfg.model.batch_size;
        tc.patience = cfg.model.patience;
        tc.validation_fraction = cfg.model.validation_fraction;
        tc.cosine_decay = cfg.model.cosine_decay;
        tc.seed = train_seed;
        auto res = train_flow(data, layers, hidden, tc);
        if (info) {
            (*info)["best_epoch"] = res.best_epoch;
            (*info)["best_metric"] = res.best_metric;
            (*info)["epochs_run"] = res.trace.size();
        }
        return res.map;
    }
    if (cfg.model.kind == "gmm") {
        auto fit = fit_gmm(data, cfg.model.components, cfg.model.max_iters, train_seed);
        if (info) {
            (*info)["em_iterations"] = fit.loglik_trace.size();
            (*info)["final_loglik"] = fit.loglik_trace.empty() ? 0.0 : fit.loglik_trace.back();
        }
        return std::make_shared<GmmSamplerMap>(std::move(fit.model));
    }
    throw ConfigError("train_model_for: model kind has no trainer: " + cfg.model.kind);
}

inline ResolvedSetup resolve_setup(const ExperimentConfig& cfg) {
    ResolvedSetup s;
    s.cfg = cfg;
    if (!cfg.testbed.empty()) {
        s.bed = testbed_by_name(cfg.testbed);
        s.dim = s.bed->dim;
    } else {
        s.dim = 2;
    }

    // training data: csv rows, or rows generated from the testbed when a
    // trainable model is requested
    if (!cfg.csv_path.empty()) {
        s.train_data = load_csv_2d(cfg.csv_path, cfg.first_difference);
    } else if (cfg.model.kind != "exact" && cfg.model.path.empty()) {
        size_t n = cfg.train_n ? cfg.train_n : s.bed->default_train_n;
        s.train_data = generate_rows(*s.bed, n, cfg.seed);
    }

    if (cfg.model.kind == "exact") {
        if (!s.bed) throw ConfigError("model 'exact' requires a testbed");
        if (s.bed->exact_transport) {
            s.transport = s.bed->exact_transport;
        } else if (cfg.scheme.kind == "cmc") {
            s.transport = nullptr;  // estimated straight from the sampler
        } else {
            throw ConfigError("testbed '" + cfg.testbed +
                              "' has no exact latent transport; use scheme 'cmc' or a flow");
        }
    } else if (!cfg.model.path.empty()) {
        s.transport = load_map(cfg.model.path, s.dim);
    } else if (!cfg.retrain_per_rep) {
        s.transport = train_model_for(cfg, s.train_data,
                                      derive_stream(cfg.seed, detail::kTagTrain),
                                      &s.train_info);
    }

    if (cfg.model.kind == "gmm" && cfg.scheme.kind != "cmc")
        throw ConfigError("gmm models are sampling-only; stratified schemes need a flow "
                          "or an exact transport");
    if (s.transport && s.transport->kind() == "gmm" && cfg.scheme.kind != "cmc")
        throw ConfigError("gmm models are sampling-only; stratified schemes need a flow "
                          "or an exact transport");
    return s;
}

// ---------------------------------------------------------------------------
// single estimates

inline StrataScheme build_scheme(const SchemeSpec& spec, int d,
                                 const std::vector<int>& chosen_dims) {
    if (spec.kind == "cmc") return build_cartesian(d, 1);
    if (spec.kind == "cartesian") return build_cartesian(d, spec.m0);
    if (spec.kind == "spherical") return build_spherical(d, spec.m_r, spec.m0);
    if (spec.kind == "radial") return build_radial(d, spec.m_r);
    if (spec.kind == "selected") return build_selected_dims(d, chosen_dims, spec.m0);
    throw ConfigError("unknown scheme kind: " + spec.kind);
}

// dims for a selected-coordinate scheme, per repetition
inline std::vector<int> choose_dims(const ResolvedSetup& s, const TargetFunction& f,
                                    const TransportMap* map, uint64_t rep_base) {
    const SchemeSpec& spec = s.cfg.scheme;
    if (!spec.dims.empty()) return spec.dims;
    if (spec.selection == "random") {
        RngStream rng(s.cfg.seed, derive_stream(rep_base, detail::kTagDims));
        return select_random_dims(s.dim, spec.eta, rng);
    }
    if (!map || !map->invertible())
        throw ConfigError("high-variance dim selection needs an invertible transport");
    return select_high_variance_dims(*map, f, s.dim, spec.eta, spec.m0, spec.pilot_r0,
                                     s.cfg.seed, derive_stream(rep_base, detail::kTagDims));
}

inline EstimateReport estimate_once(const ResolvedSetup& s, const TransportMap* map,
                                    const TargetFunction& f, long R, int rep) {
    const ExperimentConfig& cfg = s.cfg;
    uint64_t rep_base = derive_stream(cfg.seed, detail::kTagRepetition,
                                      static_cast<uint64_t>(rep));
    EstimateReport rep_out;

    bool scheme_route = map && map->invertible();
    if (!scheme_route) {
        // sampler-only path (gmm, exact testbeds without a latent transport)
        if (cfg.scheme.kind != "cmc")
            throw ConfigError("stratified estimation needs an invertible transport");
        RngStream rng(cfg.seed, derive_stream(rep_base, detail::kPhaseMain, 0));
        if (map) {
            rep_out = cmc_estimate(
                [&](RngStream& g) { return f.fn(map->sample(g)); }, R, rng);
        } else {
            rep_out = cmc_estimate(
                [&](RngStream& g) { return f.fn(s.bed->sampler(g)); }, R, rng);
        }
    } else {
        std::vector<int> dims;
        if (cfg.scheme.kind == "selected") dims = choose_dims(s, f, map, rep_base);
        StrataScheme scheme = build_scheme(cfg.scheme, s.dim, dims);
        if (cfg.allocation == "opt" && scheme.num_strata > 1) {
            rep_out = run_optimal_pipeline(scheme, *map, f, R, cfg.pilot_fraction, cfg.seed,
                                           rep_base);
        } else {
            Allocation alloc = proportional_allocation(scheme.stratum_probs, R);
            Method tag = (scheme.num_strata == 1) ? Method::CMC : Method::Prop;
            rep_out = stratified_estimate(scheme, *map, f, alloc, cfg.seed, rep_base, tag);
        }
    }

    rep_out.function_name = f.name;
    rep_out.seed = cfg.seed;
    attach_interval(rep_out, cfg.alpha);
    if (s.bed) {
        auto truth = s.bed->oracle(f.name);
        if (truth && *truth != 0.0) rep_out.accuracy = accuracy(*truth, rep_out.estimate);
    }
    return rep_out;
}

// sample-mean estimate straight from the training observations
inline EstimateReport observation_report(const ResolvedSetup& s, const TargetFunction& f,
                                         double alpha) {
    const auto& rows = s.train_data;
    detail::Welford acc;
    for (const auto& r : rows) acc.add(f.fn(r));
    EstimateReport rep;
    rep.method_label = "obs";
    rep.function_name = f.name;
    rep.budget = static_cast<long>(rows.size());
    rep.estimate = acc.mean;
    rep.sd = std::sqrt(acc.sample_variance() / static_cast<double>(acc.n));
    rep.seed = s.cfg.seed;
    attach_interval(rep, alpha);
    if (s.bed) {
        auto truth = s.bed->oracle(f.name);
        if (truth && *truth != 0.0) rep.accuracy = accuracy(*truth, rep.estimate);
    }
    return rep;
}

// ---------------------------------------------------------------------------
// repeated-trial experiments

struct AggregateRow {
    std::string testbed, model, scheme, alloc, function;
    long num_strata = 1;
    long budget = 0;
    long pilot_budget = 0;
    int repetitions = 0;
    double mean_estimate = 0.0;
    double mean_sd = 0.0;
    std::optional<double> mean_accuracy;
    std::optional<double> true_value;
};

struct ExperimentResult {
    std::vector<AggregateRow> aggregate;
    std::vector<std::pair<int, EstimateReport>> repetition_reports;  // (rep, report)
    std::vector<EstimateReport> observation_reports;
};

namespace detail {

inline std::string fmt_num(double v) {
    if (std::isinf(v)) return v > 0 ? "inf" : "-inf";
    char buf[40];
    std::snprintf(buf, sizeof(buf), "%.12g", v);
    return buf;
}

inline uint64_t config_hash(const nlohmann::json& j) {
    std::string dump = j.dump();
    uint64_t h = 1469598103934665603ULL;
    for (unsigned char c : dump) {
        h ^= c;
        h *= 1099511628211ULL;
    }
    return h;
}

// run f(rep) for rep in [0, reps) on up to `threads` workers; results are
// collected by index so the outcome is identical regardless of thread count
template <typename Fn>
void parallel_reps(int reps, int threads, Fn&& fn) {
    if (threads <= 1 || reps <= 1) {
        for (int r = 0; r < reps; ++r) fn(r);
        return;
    }
    std::vector<std::thread> pool;
    std::vector<std::exception_ptr> errors(threads);
    for (int t = 0; t < threads; ++t) {
        pool.emplace_back([&, t]() {
            try {
                for (int r = t; r < reps; r += threads) fn(r);
            } catch (...) {
                errors[t] = std::current_exception();
            }
        });
    }
    for (auto& th : pool) th.join();
    for (auto& e : errors)
        if (e) std::rethrow_exception(e);
}

} // namespace detail

inline ExperimentResult run_experiment(const ExperimentConfig& cfg,
                                       std::ostream* run_log = nullptr) {
    ResolvedSetup setup = resolve_setup(cfg);
    ExperimentResult result;

    // per-repetition transports (shared single model unless retraining)
    std::vector<TransportPtr> rep_maps(cfg.repetitions, setup.transport);
    if (cfg.retrain_per_rep && cfg.model.kind != "exact" && cfg.model.path.empty()) {
        for (int r = 0; r < cfg.repetitions; ++r)
            rep_maps[r] = train_model_for(
                cfg, setup.train_data,
                derive_stream(cfg.seed, detail::kTagTrain, static_cast<uint64_t>(r)), nullptr);
    }

    uint64_t chash = 0;
    if (run_log) {
        nlohmann::json cj{{"testbed", cfg.testbed}, {"seed", cfg.seed},
                          {"model", cfg.model.kind}, {"scheme", cfg.scheme.kind},
                          {"alloc", cfg.allocation}};
        chash = detail::config_hash(cj);
    }
    auto log_event = [&](const EstimateReport& rep, int r) {
        if (!run_log) return;
        auto now = std::chrono::system_clock::now().time_since_epoch();
        nlohmann::json e{
            {"ts_ms", std::chrono::duration_cast<std::chrono::milliseconds>(now).count()},
            {"event", "estimate"},
            {"config_hash", chash},
            {"seed", cfg.seed},
            {"rep", r},
            {"f", rep.function_name},
            {"method", rep.method_label},
            {"R", rep.budget},
            {"E", rep.estimate},
            {"SD", rep.sd}};
        (*run_log) << e.dump() << "\n";
    };

    if (!setup.train_data.empty())
        for (const auto& fname : cfg.functions)
            result.observation_reports.push_back(
                observation_report(setup, parse_target_function(fname), cfg.alpha));

    for (const auto& fname : cfg.functions) {
        TargetFunction f = parse_target_function(fname);
        if (f.arity > 0 && f.arity != setup.dim)
            throw ConfigError("target function " + fname + " has arity " +
                              std::to_string(f.arity) + " but the space has dimension " +
                              std::to_string(setup.dim));
        for (long R : cfg.budgets) {
            std::vector<EstimateReport> reps(cfg.repetitions);
            detail::parallel_reps(cfg.repetitions, cfg.threads, [&](int r) {
                reps[r] = estimate_once(setup, rep_maps[r].get(), f, R, r);
            });

            AggregateRow row;
            row.testbed = cfg.testbed.empty() ? ("csv:" + cfg.csv_path) : cfg.testbed;
            row.model = cfg.model.kind;
            row.scheme = cfg.scheme.kind;
            row.alloc = cfg.allocation;
            row.function = fname;
            row.budget = R;
            row.repetitions = cfg.repetitions;
            if (setup.bed) {
                auto truth = setup.bed->oracle(fname);
                if (truth) row.true_value = *truth;
            }
            double acc_sum = 0.0;
            bool have_acc = true;
            for (int r = 0; r < cfg.repetitions; ++r) {
                const auto& rep = reps[r];
                row.num_strata = rep.num_strata;
                row.pilot_budget = rep.pilot_budget;
                row.mean_estimate += rep.estimate;
                row.mean_sd += rep.sd;
                if (rep.accuracy) acc_sum += *rep.accuracy;
                else have_acc = false;
                log_event(rep, r);
                result.repetition_reports.emplace_back(r, rep);
            }
            row.mean_estimate /= cfg.repetitions;
            row.mean_sd /= cfg.repetitions;
            if (have_acc) row.mean_accuracy = acc_sum / cfg.repetitions;
            result.aggregate.push_back(std::move(row));
        }
    }
    return result;
}

inline std::string aggregate_csv(const ExperimentResult& result, bool scaled) {
    std::string out =
        "testbed,model,scheme,alloc,f,m,R,R_prime,K,E_mean,SD_mean,AC_mean,I";
    if (scaled) out += ",E_star,SD_star,I_star";
    out += "\n";
    for (const auto& r : result.aggregate) {
        out += r.testbed + "," + r.model + "," + r.scheme + "," + r.alloc + "," + r.function +
               "," + std::to_string(r.num_strata) + "," + std::to_string(r.budget) + "," +
               std::to_string(r.pilot_budget) + "," + std::to_string(r.repetitions) + "," +
               detail::fmt_num(r.mean_estimate) + "," + detail::fmt_num(r.mean_sd) + ",";
        if (r.mean_accuracy) out += detail::fmt_num(*r.mean_accuracy);
        out += ",";
        if (r.true_value) out += detail::fmt_num(*r.true_value);
        if (scaled) {
            out += "," + detail::fmt_num(100.0 * r.mean_estimate) + "," +
                   detail::fmt_num(100.0 * r.mean_sd) + ",";
            if (r.true_value) out += detail::fmt_num(100.0 * *r.true_value);
        }
        out += "\n";
    }
    return out;
}

inline std::string repetition_csv(const ExperimentResult& result) {
    std::string out = "rep," + EstimateReport::csv_header() + "\n";
    for (const auto& [r, rep] : result.repetition_reports)
        out += std::to_string(r) + "," + rep.csv_row() + "\n";
    for (const auto& rep : result.observation_reports)
        out += "obs," + rep.csv_row() + "\n";
    return out;
}

// ---------------------------------------------------------------------------
// confidence-interval sweeps

struct CiLinesResult {
    std::vector<EstimateReport> reports;
    std::optional<double> true_value;
    int covered = 0;
    double mean_length = 0.0;
};

inline CiLinesResult run_ci_lines(const ExperimentConfig& cfg) {
    ResolvedSetup setup = resolve_setup(cfg);
    if (cfg.budgets.size() != 1 || cfg.functions.size() != 1)
        throw ConfigError("ci-lines runs a single (function, R) cell");
    TargetFunction f = parse_target_function(cfg.functions[0]);
    long R = cfg.budgets[0];

    CiLinesResult result;
    if (setup.bed) {
        auto truth = setup.bed->oracle(f.name);
        if (truth) result.true_value = *truth;
    }
    result.reports.resize(cfg.repetitions);
    detail::parallel_reps(cfg.repetitions, cfg.threads, [&](int r) {
        result.reports[r] = estimate_once(setup, setup.transport.get(), f, R, r);
    });
    for (const auto& rep : result.reports) {
        result.mean_length += (*rep.ci_hi - *rep.ci_lo);
        if (result.true_value && *rep.ci_lo <= *result.true_value &&
            *result.true_value <= *rep.ci_hi)
            ++result.covered;
    }
    result.mean_length /= static_cast<double>(cfg.repetitions);
    return result;
}

inline std::string ci_lines_csv(const CiLinesResult& result) {
    std::string out = "rep,E,ci_lo,ci_hi,contains_I,coverage,mean_length\n";
    for (size_t r = 0; r < result.reports.size(); ++r) {
        const auto& rep = result.reports[r];
        out += std::to_string(r) + "," + detail::fmt_num(rep.estimate) + "," +
               detail::fmt_num(*rep.ci_lo) + "," + detail::fmt_num(*rep.ci_hi) + ",";
        if (result.true_value)
            out += (*rep.ci_lo <= *result.true_value && *result.true_value <= *rep.ci_hi)
                       ? "1" : "0";
        out += ",,\n";
    }
    double coverage = result.reports.empty()
                          ? 0.0
                          : static_cast<double>(result.covered) / result.reports.size();
    out += "summary,,,,," + detail::fmt_num(coverage) + "," +
           detail::fmt_num(result.mean_length) + "\n";
    return out;
}

// ---------------------------------------------------------------------------
// strata diagnostics

struct StrataCheck {
    std::string name;
    bool pass = false;
    nlohmann::json details;
};

inline std::vector<StrataCheck> validate_strata(const StrataScheme& scheme, int n_samples,
                                                uint64_t seed) {
    std::vector<StrataCheck> checks;

    {
        StrataCheck c{"equiprobability", false, {}};
        RngStream rng(seed, derive_stream(0xA1));
        std::vector<long> counts(scheme.num_strata, 0);
        for (int i = 0; i < n_samples; ++i)
            ++counts[classify_latent(scheme, standard_normal_vector(scheme.dim, rng)).flat];
        auto gof = chi2_gof(counts, scheme.stratum_probs);
        c.pass = gof.p_value > 0.001;
        c.details = {{"chi2", gof.statistic}, {"p_value", gof.p_value}, {"n", n_samples}};
        checks.push_back(std::move(c));
    }

    {
        StrataCheck c{"classification-round-trip", true, {}};
        RngStream rng(seed, derive_stream(0xA2));
        long mismatches = 0, trials = 0;
        long per = std::max(1L, 2000 / scheme.num_strata);
        for (long j = 0; j < scheme.num_strata; ++j) {
            auto id = make_stratum_id(scheme, j);
            for (long i = 0; i < per; ++i) {
                auto z = sample_latent_in_stratum(scheme, id, rng);
                if (classify_latent(scheme, z).flat != j) ++mismatches;
                ++trials;
            }
        }
        c.pass = mismatches == 0;
        c.details = {{"trials", trials}, {"mismatches", mismatches}};
        checks.push_back(std::move(c));
    }

    if (scheme.kind == SchemeKind::Spherical && scheme.dim >= 3) {
        StrataCheck c{"ar-iteration-cost", true, {}};
        RngStream rng(seed, derive_stream(0xA3));
        nlohmann::json per_axis = nlohmann::json::array();
        for (size_t a = 2; a < scheme.axes.size(); ++a) {
            const auto& ax = scheme.axes[a];
            int k = ax.coord;
            for (int j = 0; j < ax.count; ++j) {
                Interval win{ax.bounds[j], ax.bounds[j + 1]};
                double mass = integrate(
                    [k](double t) { return std::pow(std::sin(t), k); }, win.lo, win.hi,
                    QuadratureSpec{});
                double expected = win.length() / mass;
                const int draws = 2000;
                double iters = 0.0;
                for (int i = 0; i < draws; ++i)
                    iters += ar_sample_sin_power(k, win, rng).iterations;
                double mean = iters / draws;
                bool ok = std::fabs(mean - expected) <= 0.15 * expected;
                c.pass = c.pass && ok;
                per_axis.push_back({{"k", k}, {"stratum", j}, {"mean_iterations", mean},
                                    {"expected", expected}});
            }
        }
        c.details = {{"windows", per_axis}};
        checks.push_back(std::move(c));
    }

    return checks;
}

inline nlohmann::json strata_diagnostics_json(const StrataScheme& scheme,
                                              const std::vector<StrataCheck>& checks) {
    bool all = true;
    nlohmann::json arr = nlohmann::json::array();
    for (const auto& c : checks) {
        all = all && c.pass;
        arr.push_back({{"name", c.name}, {"pass", c.pass}, {"details", c.details}});
    }
    return {{"scheme", scheme_to_json(scheme)}, {"checks", arr}, {"pass", all}};
}

// ---------------------------------------------------------------------------
// file helpers

inline void write_text_file(const std::string& path, const std::string& content) {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw std::runtime_error("cannot open for writing: " + path);
    out << content;
}

inline std::string loss_trace_csv(const std::vector<TraceRow>& trace) {
    std::string out = "epoch,train_nll,val_nll\n";
    for (const auto& row : trace)
        out += std::to_string(row.epoch) + "," + detail::fmt_num(row.train_nll) + "," +
               detail::fmt_num(row.val_nll) + "\n";
    return out;
}

inline std::string rows_to_csv(const std::vector<std::vector<double>>& rows, int dim) {
    std::string out;
    for (int c = 0; c < dim; ++c) out += (c ? ",x" : "x") + std::to_string(c);
    out += "\n";
    for (const auto& r : rows) {
        for (int c = 0; c < dim; ++c) {
            if (c) out += ",";
            out += detail::fmt_num(r[c]);
        }
        out += "\n";
    }
    return out;
}

} // namespace stratmc
