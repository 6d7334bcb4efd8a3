#pragma once

// Command implementations behind the `vslab` executable. Each returns the
// process exit code:
//   0 success, 1 check failed (gradcheck), 2 usage / configuration / input
//   error, 3 numerical blow-up during training.

#include "bounds.hpp"
#include "data.hpp"
#include "experiment.hpp"
#include "gradcheck.hpp"
#include "model.hpp"
#include "train.hpp"

#include <json.hpp>

#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

namespace vslab::cli {

namespace fs = std::filesystem;

inline constexpr int kExitOk = 0;
inline constexpr int kExitCheckFailed = 1;
inline constexpr int kExitUsage = 2;
inline constexpr int kExitNumerical = 3;

namespace detail {

inline void write_text(const fs::path& path, const std::string& text) {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw ConfigError("cannot write " + path.string());
    out << text;
}

inline void write_json(const fs::path& path, const nlohmann::ordered_json& j) { write_text(path, j.dump(2) + "\n"); }

inline nlohmann::json read_json(const fs::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw ConfigError("cannot open " + path.string());
    try {
        return nlohmann::json::parse(in);
    } catch (const nlohmann::json::exception& e) {
        throw ParseError(path.string() + ": " + e.what());
    }
}

inline void ensure_dir(const fs::path& dir) {
    std::error_code ec;
    fs::create_directories(dir, ec);
    if (ec) throw ConfigError("cannot create directory " + dir.string() + ": " + ec.message());
}

inline std::string fmt(double v) {
    char buf[32];
    std::snprintf(buf, sizeof buf, "%.10g", v);
    return buf;
}

template <class Container>
std::string join(const Container& c) {
    std::ostringstream s;
    bool first = true;
    for (const auto& v : c) {
        s << (first ? "" : ",") << v;
        first = false;
    }
    return s.str();
}

/// Runs `body`, mapping the library's exception types onto exit codes.
template <class Body>
int guarded(std::ostream& err, Body&& body) {
    try {
        return body();
    } catch (const NumericalError& e) {
        err << "error: numerical divergence: " << e.what() << "\n";
        return kExitNumerical;
    } catch (const ParseError& e) {
        err << "error: " << e.what() << "\n";
        return kExitUsage;
    } catch (const ConfigError& e) {
        err << "error: " << e.what() << "\n";
        return kExitUsage;
    } catch (const InvalidInput& e) {
        err << "error: " << e.what() << "\n";
        return kExitUsage;
    }
}

}  // namespace detail

// ---------------------------------------------------------------------------
// gen-data

struct GenDataOptions {
    ExperimentConfig config;
    std::uint64_t seed = 0;
    std::string out_dir = ".";
};

inline int cmd_gen_data(const GenDataOptions& opt, std::ostream& out = std::cout, std::ostream& err = std::cerr) {
    return detail::guarded(err, [&] {
        if (opt.config.profile.num_classes < 2) throw ConfigError("--classes must be >= 2");
        if (opt.config.profile.rho < 1.0) throw ConfigError("--rho must be >= 1");
        if (opt.config.dim < 1) throw ConfigError("--dim must be >= 1");
        const ExperimentData d = make_experiment_data(opt.config, opt.seed);
        const fs::path dir(opt.out_dir);
        detail::ensure_dir(dir);
        save_csv(d.train, (dir / "train.csv").string());
        save_csv(d.test, (dir / "test.csv").string());
        auto train_manifest = manifest(d.train, d.mixture.seed);
        train_manifest["profile"] = config_json(opt.config)["profile"];
        detail::write_json(dir / "train.json", train_manifest);
        detail::write_json(dir / "test.json", manifest(d.test, derive_seed(opt.seed, "test")));
        out << "counts: " << detail::join(d.train.counts) << "\n";
        out << "rho: " << detail::fmt(d.train.imbalance_ratio()) << "\n";
        out << "n_train: " << d.train.size() << "  n_test: " << d.test.size() << "\n";
        return kExitOk;
    });
}

// ---------------------------------------------------------------------------
// train

struct BoundSettings {
    double delta = 0.05;
    std::optional<double> m_cap;
    ComplexityMethod method = ComplexityMethod::LinearAnalytic;
    long mc_samples = 1000;
};

inline nlohmann::ordered_json to_ordered_json(const BoundSettings& b) {
    nlohmann::ordered_json j{{"delta", b.delta},
                             {"m_cap", b.m_cap ? nlohmann::ordered_json(*b.m_cap) : nlohmann::ordered_json("max-loss")},
                             {"complexity", b.method == ComplexityMethod::LinearAnalytic ? "linear" : "mc"},
                             {"mc_samples", b.mc_samples}};
    return j;
}

struct TrainOptions {
    ExperimentConfig config;
    std::uint64_t seed = 0;
    std::optional<std::string> train_csv;  ///< otherwise synthesized from config
    std::optional<std::string> test_csv;
    BoundSettings bounds;
    std::string out_dir = "run";
};

inline int cmd_train(const TrainOptions& opt, std::ostream& out = std::cout, std::ostream& err = std::cerr) {
    return detail::guarded(err, [&] {
        const ExperimentConfig& cfg = opt.config;
        if (cfg.hyper.epochs < 1) throw ConfigError("--epochs must be >= 1");
        if (cfg.hyper.t0 < 0 || cfg.hyper.t0 > cfg.hyper.epochs) throw ConfigError("--t0 must lie in [0, epochs]");
        if (!(opt.bounds.delta > 0.0 && opt.bounds.delta < 1.0)) throw ConfigError("--delta must lie in (0,1)");

        ExperimentData data;
        std::string source = "synthetic";
        if (opt.train_csv) {
            data.train = load_csv(*opt.train_csv).dataset;
            data.test = opt.test_csv ? load_csv(*opt.test_csv, data.train.num_classes()).dataset : data.train;
            source = "csv";
        } else {
            if (opt.test_csv) throw ConfigError("--test requires --data");
            data = make_experiment_data(cfg, opt.seed);
        }
        ExperimentResult r;
        try {
            r = run_experiment(cfg, data, opt.seed);
        } catch (const InvalidInput& e) {
            throw ConfigError(e.what());
        }

        const fs::path dir(opt.out_dir);
        detail::ensure_dir(dir);
        save_csv(data.train, (dir / "train.csv").string());
        save_csv(data.test, (dir / "test.csv").string());
        {
            std::ofstream log(dir / "epochs.jsonl", std::ios::binary);
            if (!log) throw ConfigError("cannot write epochs.jsonl");
            for (const auto& rec : r.training.records) log << to_ordered_json(rec).dump() << "\n";
        }
        detail::write_json(dir / "checkpoint.json", checkpoint_json(r.training.final_model));
        detail::write_json(dir / "best_checkpoint.json", checkpoint_json(r.training.best_model));

        nlohmann::ordered_json run_config{{"experiment", config_json(cfg)},
                                          {"seed", opt.seed},
                                          {"data_source", source},
                                          {"bounds", to_ordered_json(opt.bounds)}};
        if (opt.train_csv) run_config["train_csv"] = *opt.train_csv;
        if (opt.test_csv) run_config["test_csv"] = *opt.test_csv;
        detail::write_json(dir / "config.json", run_config);

        const ScoreModel& final_model = r.training.final_model;
        const VSParams& final_params = r.training.records.back().params;
        const EvalReport final_eval = evaluate(final_model, data.train, data.test, final_params);
        nlohmann::ordered_json summary{
            {"scheme", cfg.scheme},
            {"seed", opt.seed},
            {"epochs", static_cast<int>(r.training.records.size())},
            {"best_epoch", r.training.best_epoch},
            {"best_balanced_accuracy", r.best_eval.balanced_accuracy},
            {"best", to_ordered_json(r.best_eval)},
            {"final", to_ordered_json(final_eval)},
            {"final_params", final_params},
            {"schedule", to_ordered_json(r.schedule)},
            {"lr_milestones", effective_lr_schedule(r.schedule, cfg.train).milestones},
            {"class_counts", data.train.counts},
            {"test_source", opt.train_csv && !opt.test_csv ? "train" : "balanced-test"},
            {"files",
             {{"checkpoint", "checkpoint.json"},
              {"best_checkpoint", "best_checkpoint.json"},
              {"train_csv", "train.csv"},
              {"test_csv", "test.csv"},
              {"epochs", "epochs.jsonl"},
              {"config", "config.json"}}},
            {"run_config", run_config}};
        detail::write_json(dir / "summary.json", summary);

        out << "scheme " << cfg.scheme << ": best epoch " << r.training.best_epoch << ", balanced accuracy "
            << detail::fmt(r.best_eval.balanced_accuracy) << "\n";
        return kExitOk;
    });
}

// ---------------------------------------------------------------------------
// bounds

struct BoundsOptions {
    std::optional<std::string> run_dir;     ///< discover everything from summary.json
    std::optional<std::string> checkpoint;
    std::optional<std::string> data_csv;
    std::optional<std::string> params_json;  ///< {"alpha":..,"beta":..,"delta":..}
    std::optional<BoundSettings> settings;   ///< defaults to the run's, else BoundSettings{}
    std::uint64_t seed = 0;
    std::optional<std::string> out_path;
};

inline int cmd_bounds(const BoundsOptions& opt, std::ostream& out = std::cout, std::ostream& err = std::cerr) {
    return detail::guarded(err, [&] {
        std::optional<fs::path> checkpoint = opt.checkpoint ? std::optional<fs::path>(*opt.checkpoint) : std::nullopt;
        std::optional<fs::path> data = opt.data_csv ? std::optional<fs::path>(*opt.data_csv) : std::nullopt;
        std::optional<VSParams> params;
        BoundSettings settings = opt.settings.value_or(BoundSettings{});
        fs::path out_path = opt.out_path.value_or("bound_report.json");

        if (opt.run_dir) {
            const fs::path dir(*opt.run_dir);
            const auto summary = detail::read_json(dir / "summary.json");
            try {
                if (!checkpoint) checkpoint = dir / summary.at("files").at("checkpoint").get<std::string>();
                if (!data) data = dir / summary.at("files").at("train_csv").get<std::string>();
                params = summary.at("final_params").get<VSParams>();
                if (!opt.settings) {
                    const auto& b = summary.at("run_config").at("bounds");
                    settings.delta = b.at("delta").get<double>();
                    if (b.at("m_cap").is_number()) settings.m_cap = b.at("m_cap").get<double>();
                    settings.method = b.at("complexity").get<std::string>() == "mc" ? ComplexityMethod::MonteCarlo
                                                                                   : ComplexityMethod::LinearAnalytic;
                    settings.mc_samples = b.at("mc_samples").get<long>();
                }
            } catch (const nlohmann::json::exception& e) {
                throw ParseError("summary.json: " + std::string(e.what()));
            }
            if (!opt.out_path) out_path = dir / "bound_report.json";
        }
        if (!checkpoint) throw ConfigError("missing checkpoint (use --checkpoint or --run)");
        if (!data) throw ConfigError("missing dataset (use --data or --run)");
        if (!fs::exists(*checkpoint)) throw ConfigError("checkpoint not found: " + checkpoint->string());

        const ScoreModel model = model_from_json(detail::read_json(*checkpoint));
        const LabeledDataset ds = load_csv(data->string()).dataset;
        if (model.input_dim() != ds.dim() || model.num_classes() != ds.num_classes())
            throw ConfigError("checkpoint shape (d=" + std::to_string(model.input_dim()) +
                              ", C=" + std::to_string(model.num_classes()) + ") does not match dataset (d=" +
                              std::to_string(ds.dim()) + ", C=" + std::to_string(ds.num_classes()) + ")");
        if (opt.params_json) params = detail::read_json(*opt.params_json).get<VSParams>();
        if (!params) params = VSParams::cross_entropy(ds.num_classes());
        if (params->num_classes() != ds.num_classes()) throw ConfigError("loss parameters do not match class count");

        const double norm = parameter_norm(model);
        ComplexityEstimate est{0.0, settings.method, norm, 0, opt.seed};
        if (norm > 0.0) est = complexity(ds.features, settings.method, norm, settings.mc_samples, opt.seed);

        const Matrix scores = forward_batch(model, ds.features);
        const BoundReport rep = vs_bound_report(scores, ds.labels, *params, est, {settings.delta, settings.m_cap});
        auto j = to_ordered_json(rep);
        j["params"] = *params;
        j["model"] = to_string(model.kind);
        detail::write_json(out_path, j);
        out << "data-dependent bound " << detail::fmt(rep.data_dependent_bound) << ", union bound "
            << detail::fmt(rep.union_bound) << " -> " << out_path.string() << "\n";
        return kExitOk;
    });
}

// ---------------------------------------------------------------------------
// compare-bounds

struct CompareOptions {
    std::optional<std::vector<double>> priors;
    std::optional<std::vector<long>> counts;
    std::optional<std::string> data_csv;
    std::vector<double> kappas{1.0, 1.25, 1.5, 2.0, 2.5, 3.0};
    std::optional<std::string> out_path;  ///< CSV; stdout when absent
};

inline std::string kappa_csv(const std::vector<KappaRow>& rows) {
    std::string s = "kappa,h1,data_dep,union\n";
    for (const auto& r : rows)
        s += detail::fmt(r.kappa) + "," + detail::fmt(r.h1) + "," + detail::fmt(r.data_dep) + "," +
             detail::fmt(r.union_) + "\n";
    return s;
}

inline int cmd_compare_bounds(const CompareOptions& opt, std::ostream& out = std::cout, std::ostream& err = std::cerr) {
    return detail::guarded(err, [&] {
        const int sources = (opt.priors ? 1 : 0) + (opt.counts ? 1 : 0) + (opt.data_csv ? 1 : 0);
        if (sources != 1) throw ConfigError("give exactly one of --priors, --counts, --data");
        if (opt.kappas.empty()) throw ConfigError("empty kappa grid");
        Vector pi;
        if (opt.priors) {
            pi = from_std(*opt.priors);
            if (pi.size() >= 1 && std::abs(pi.sum() - 1.0) > 1e-9) throw ConfigError("priors must sum to 1");
        } else if (opt.counts) {
            for (long c : *opt.counts)
                if (c < 1) throw ConfigError("counts must be >= 1");
            if (opt.counts->empty()) throw ConfigError("empty counts");
            pi = priors_from_counts(*opt.counts);
        } else {
            pi = load_csv(*opt.data_csv).dataset.priors;
        }
        if (pi.size() < 2) throw ConfigError("need at least 2 classes");
        const std::string csv = kappa_csv(kappa_sweep(pi, opt.kappas));
        if (opt.out_path)
            detail::write_text(*opt.out_path, csv);
        else
            out << csv;
        return kExitOk;
    });
}

// ---------------------------------------------------------------------------
// gradcheck

struct GradcheckOptions {
    GradcheckConfig config;
    std::optional<std::string> out_path;
};

inline int cmd_gradcheck(const GradcheckOptions& opt, std::ostream& out = std::cout, std::ostream& err = std::cerr) {
    return detail::guarded(err, [&] {
        if (opt.config.loss_trials < 1 || opt.config.model_trials < 1) throw ConfigError("trial counts must be >= 1");
        const GradcheckReport rep = run_gradcheck(opt.config);
        nlohmann::ordered_json j{{"passed", rep.passed},
                                 {"loss_trials", rep.loss_trials},
                                 {"loss_max_rel_error", rep.loss_max_rel},
                                 {"loss_threshold", opt.config.loss_threshold},
                                 {"model_trials", rep.model_trials},
                                 {"model_max_rel_error", rep.model_max_rel},
                                 {"model_threshold", opt.config.model_threshold}};
        out << "loss-level:  " << rep.loss_trials << " cases, max rel error " << detail::fmt(rep.loss_max_rel)
            << " (threshold " << detail::fmt(opt.config.loss_threshold) << ")\n";
        out << "model-level: " << rep.model_trials << " cases, max rel error " << detail::fmt(rep.model_max_rel)
            << " (threshold " << detail::fmt(opt.config.model_threshold) << ")\n";
        if (!rep.passed) {
            if (rep.loss_max_rel > opt.config.loss_threshold) j["offending_loss_case"] = rep.worst_loss_case;
            if (rep.model_max_rel > opt.config.model_threshold) j["offending_model_case"] = rep.worst_model_case;
            out << "FAIL\n" << j.dump(2) << "\n";
        } else {
            out << "PASS\n";
        }
        if (opt.out_path) detail::write_json(*opt.out_path, j);
        return rep.passed ? kExitOk : kExitCheckFailed;
    });
}

// ---------------------------------------------------------------------------
// sweep

struct SweepOptions {
    ExperimentConfig config;
    SweepGrid grid;
    unsigned workers = 1;
    std::string out_dir = "sweep";
};

inline const char* kSweepHeader =
    "row_kind,config,scheme,nu,tau,gamma,t0,seed,status,runs,best_epoch,balanced_accuracy,balanced_accuracy_std,"
    "train_ratio_min_maj,train_majority_accuracy,train_minority_accuracy\n";

inline std::string sweep_csv(const SweepResult& res) {
    std::string s = kSweepHeader;
    auto hyper = [](const SchemeHyper& h) {
        return detail::fmt(h.nu) + "," + detail::fmt(h.tau) + "," + detail::fmt(h.gamma) + "," + std::to_string(h.t0);
    };
    for (const auto& r : res.rows) {
        const bool ok = r.status == "ok";
        s += "detail," + std::to_string(r.config_index) + "," + r.scheme + "," + hyper(r.hyper) + "," +
             std::to_string(r.seed) + "," + r.status + ",1," + (ok ? std::to_string(r.best.epoch) : "") + "," +
             (ok ? detail::fmt(r.best.balanced_accuracy) : "") + ",," +
             (ok && !r.best.train_ratio.zero_majority ? detail::fmt(r.best.train_ratio.value) : "") + "," +
             (ok ? detail::fmt(r.best.train_majority_accuracy) : "") + "," +
             (ok ? detail::fmt(r.best.train_minority_accuracy) : "") + "\n";
    }
    for (const auto& a : res.aggregates) {
        const bool ok = a.runs_ok > 0;
        s += "aggregate," + std::to_string(a.config_index) + "," + a.scheme + "," + hyper(a.hyper) + ",," +
             (ok ? "ok" : "failed") + "," + std::to_string(a.runs_ok) + ",," +
             (ok ? detail::fmt(a.mean_accuracy) : "") + "," + (ok ? detail::fmt(a.std_accuracy) : "") + "," +
             (ok ? detail::fmt(a.mean_ratio) : "") + ",,\n";
    }
    return s;
}

inline int cmd_sweep(const SweepOptions& opt, std::ostream& out = std::cout, std::ostream& err = std::cerr) {
    return detail::guarded(err, [&] {
        for (const auto& s : opt.grid.schemes) {
            const auto& names = scheme_names();
            if (std::find(names.begin(), names.end(), s) == names.end()) throw ConfigError("unknown scheme '" + s + "'");
        }
        const fs::path dir(opt.out_dir);
        detail::ensure_dir(dir / "runs");
        const SweepResult res = run_sweep(
            opt.config, opt.grid, opt.workers, [&](std::size_t i, const SweepRow& row, const ExperimentResult* r) {
                const fs::path run_dir = dir / "runs" / std::to_string(i);
                detail::ensure_dir(run_dir);
                nlohmann::ordered_json j{{"scheme", row.scheme}, {"seed", row.seed}, {"status", row.status}};
                if (r) {
                    j["best_epoch"] = r->training.best_epoch;
                    j["best"] = to_ordered_json(r->best_eval);
                    j["schedule"] = to_ordered_json(r->schedule);
                    std::ofstream log(run_dir / "epochs.jsonl", std::ios::binary);
                    for (const auto& rec : r->training.records) log << to_ordered_json(rec).dump() << "\n";
                }
                detail::write_json(run_dir / "summary.json", j);
            });
        for (const auto& w : res.warnings) err << "warning: " << w << "\n";
        detail::write_text(dir / "sweep.csv", sweep_csv(res));
        out << res.rows.size() << " runs, " << res.aggregates.size() << " configurations -> "
            << (dir / "sweep.csv").string() << "\n";
        return kExitOk;
    });
}

}  // namespace vslab::cli
