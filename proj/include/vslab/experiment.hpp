#pragma once

// One synthetic experiment end to end (mixture -> imbalanced train set +
// balanced test set -> model -> scheduled training), and grids of them.

#include "core.hpp"
#include "data.hpp"
#include "model.hpp"
#include "train.hpp"

#include <json.hpp>

#include <atomic>
#include <cmath>
#include <functional>
#include <numeric>
#include <optional>
#include <string>
#include <thread>
#include <vector>

namespace vslab {

struct ExperimentConfig {
    ImbalanceProfile profile{ImbalanceKind::LongTailed, 10, 1000, 100.0};
    int dim = 10;
    double mean_radius = 2.0;
    double sigma = 1.0;
    std::uint64_t mixture_seed = 7;  ///< fixes the class means (the problem instance)
    long test_per_class = 200;
    ModelKind model = ModelKind::Linear;
    int hidden_width = 64;
    TrainConfig train;
    std::string scheme = "CE";
    SchemeHyper hyper;
};

struct ExperimentData {
    GaussianMixtureSpec mixture;
    LabeledDataset train;
    LabeledDataset test;
};

/// Train/test draws for `seed`; the class means depend only on mixture_seed.
inline ExperimentData make_experiment_data(const ExperimentConfig& cfg, std::uint64_t seed) {
    ExperimentData d;
    d.mixture.class_means = random_means(cfg.profile.num_classes, cfg.dim, cfg.mean_radius, cfg.mixture_seed);
    d.mixture.sigma = cfg.sigma;
    d.mixture.seed = derive_seed(seed, "data");
    d.train = generate(d.mixture, class_counts(cfg.profile));
    d.test = generate_balanced_test(d.mixture, cfg.test_per_class, derive_seed(seed, "test"));
    return d;
}

struct ExperimentResult {
    ScheduleSpec schedule;
    TrainResult training;
    EvalReport best_eval;
};

inline ExperimentResult run_experiment(const ExperimentConfig& cfg, const ExperimentData& data, std::uint64_t seed) {
    ExperimentResult r;
    r.schedule = scheme_catalog(cfg.scheme, data.train.counts, cfg.hyper);
    const ScoreModel init = make_model(cfg.model, data.train.dim(), data.train.num_classes(), cfg.hidden_width,
                                       derive_seed(seed, "model"));
    r.training = run_training(data.train, data.test, init, r.schedule, cfg.train, derive_seed(seed, "train"));
    const auto& best = r.training.records[static_cast<std::size_t>(r.training.best_epoch)];
    r.best_eval = evaluate(r.training.best_model, data.train, data.test, best.params);
    return r;
}

inline ExperimentResult run_experiment(const ExperimentConfig& cfg, std::uint64_t seed) {
    return run_experiment(cfg, make_experiment_data(cfg, seed), seed);
}

/// The best epoch's diagnostics: test balanced accuracy, and the training
/// accuracy ratio of the minority (tail half) to the majority (head half).
struct BestEpochSummary {
    int epoch = 0;
    double balanced_accuracy = 0.0;
    AccuracyRatio train_ratio;
    double train_majority_accuracy = 0.0;
    double train_minority_accuracy = 0.0;
};

inline BestEpochSummary best_epoch_summary(const TrainResult& tr) {
    const auto& rec = tr.records[static_cast<std::size_t>(tr.best_epoch)];
    const auto C = rec.train_class_accuracy.size();
    const auto k = (C + 1) / 2;
    return {tr.best_epoch, rec.test_balanced_accuracy, rec.min_maj, rec.train_class_accuracy.head(k).mean(),
            rec.train_class_accuracy.tail(C - k).mean()};
}

inline nlohmann::ordered_json config_json(const ExperimentConfig& c) {
    return {{"profile",
             {{"kind", to_string(c.profile.kind)},
              {"num_classes", c.profile.num_classes},
              {"head_count", c.profile.head_count},
              {"rho", c.profile.rho}}},
            {"dim", c.dim},
            {"mean_radius", c.mean_radius},
            {"sigma", c.sigma},
            {"mixture_seed", c.mixture_seed},
            {"test_per_class", c.test_per_class},
            {"model", to_string(c.model)},
            {"hidden_width", c.hidden_width},
            {"optimizer",
             {{"lr", c.train.lr},
              {"milestones", c.train.milestones},
              {"lr_decay", c.train.lr_decay},
              {"momentum", c.train.momentum},
              {"weight_decay", c.train.weight_decay},
              {"batch_size", c.train.batch_size}}},
            {"scheme", c.scheme},
            {"hyper",
             {{"nu", c.hyper.nu},
              {"tau", c.hyper.tau},
              {"gamma", c.hyper.gamma},
              {"cb_p", c.hyper.cb_p},
              {"ldam_c", c.hyper.ldam_c},
              {"epochs", c.hyper.epochs},
              {"t0", c.hyper.t0}}}};
}

/// Inverse of config_json; missing keys keep their defaults.
inline ExperimentConfig config_from_json(const nlohmann::json& j) {
    ExperimentConfig c;
    try {
        if (j.contains("profile")) {
            const auto& p = j.at("profile");
            c.profile.kind = parse_imbalance_kind(p.value("kind", std::string("lt")));
            c.profile.num_classes = p.value("num_classes", c.profile.num_classes);
            c.profile.head_count = p.value("head_count", c.profile.head_count);
            c.profile.rho = p.value("rho", c.profile.rho);
        }
        c.dim = j.value("dim", c.dim);
        c.mean_radius = j.value("mean_radius", c.mean_radius);
        c.sigma = j.value("sigma", c.sigma);
        c.mixture_seed = j.value("mixture_seed", c.mixture_seed);
        c.test_per_class = j.value("test_per_class", c.test_per_class);
        c.model = parse_model_kind(j.value("model", std::string("linear")));
        c.hidden_width = j.value("hidden_width", c.hidden_width);
        if (j.contains("optimizer")) {
            const auto& o = j.at("optimizer");
            c.train.lr = o.value("lr", c.train.lr);
            c.train.milestones = o.value("milestones", c.train.milestones);
            c.train.lr_decay = o.value("lr_decay", c.train.lr_decay);
            c.train.momentum = o.value("momentum", c.train.momentum);
            c.train.weight_decay = o.value("weight_decay", c.train.weight_decay);
            c.train.batch_size = o.value("batch_size", c.train.batch_size);
        }
        c.scheme = j.value("scheme", c.scheme);
        if (j.contains("hyper")) {
            const auto& h = j.at("hyper");
            c.hyper.nu = h.value("nu", c.hyper.nu);
            c.hyper.tau = h.value("tau", c.hyper.tau);
            c.hyper.gamma = h.value("gamma", c.hyper.gamma);
            c.hyper.cb_p = h.value("cb_p", c.hyper.cb_p);
            c.hyper.ldam_c = h.value("ldam_c", c.hyper.ldam_c);
            c.hyper.epochs = h.value("epochs", c.hyper.epochs);
            c.hyper.t0 = h.value("t0", c.hyper.t0);
        }
    } catch (const nlohmann::json::exception& e) {
        throw ConfigError(std::string("run config: ") + e.what());
    } catch (const InvalidInput& e) {
        throw ConfigError(std::string("run config: ") + e.what());
    }
    return c;
}

// ---------------------------------------------------------------------------
// Sweeps

struct SweepGrid {
    std::vector<std::string> schemes{"CE"};
    std::vector<double> nu;
    std::vector<double> tau;
    std::vector<double> gamma;
    std::vector<int> t0;
    std::vector<std::uint64_t> seeds{0};
};

struct SweepPoint {
    std::string scheme;
    SchemeHyper hyper;
    int config_index = 0;
};

/// Cartesian product in a fixed order (scheme, nu, tau, gamma, t0). Axes a
/// scheme does not read collapse to a single value; `warnings` says which.
inline std::vector<SweepPoint> expand_grid(const SweepGrid& g, const SchemeHyper& defaults,
                                           std::vector<std::string>* warnings = nullptr) {
    if (g.schemes.empty() || g.seeds.empty()) throw ConfigError("sweep: empty grid");
    auto axis = [](const auto& values, auto fallback) {
        using T = decltype(fallback);
        return values.empty() ? std::vector<T>{fallback} : std::vector<T>(values.begin(), values.end());
    };
    std::vector<SweepPoint> out;
    int index = 0;
    for (const auto& scheme : g.schemes) {
        const SchemeAxes used = scheme_axes(scheme);
        auto pick = [&](bool reads, const char* name, auto values, auto fallback) {
            if (!reads && !values.empty() && warnings)
                warnings->push_back("scheme " + scheme + " ignores the " + name + " axis");
            return reads ? axis(values, fallback) : std::vector<decltype(fallback)>{fallback};
        };
        for (double nu : pick(used.nu, "nu", g.nu, defaults.nu))
            for (double tau : pick(used.tau, "tau", g.tau, defaults.tau))
                for (double gamma : pick(used.gamma, "gamma", g.gamma, defaults.gamma))
                    for (int t0 : pick(used.t0, "t0", g.t0, defaults.t0)) {
                        SchemeHyper h = defaults;
                        h.nu = nu;
                        h.tau = tau;
                        h.gamma = gamma;
                        h.t0 = t0;
                        out.push_back({scheme, h, index++});
                    }
    }
    return out;
}

struct SweepRow {
    int config_index = 0;
    std::string scheme;
    SchemeHyper hyper;
    std::uint64_t seed = 0;
    std::string status = "ok";
    BestEpochSummary best;
};

struct SweepAggregate {
    int config_index = 0;
    std::string scheme;
    SchemeHyper hyper;
    int runs_ok = 0;
    double mean_accuracy = 0.0;
    double std_accuracy = 0.0;
    double mean_ratio = 0.0;
};

struct SweepResult {
    std::vector<SweepRow> rows;
    std::vector<SweepAggregate> aggregates;
    std::vector<std::string> warnings;
};

/// Runs every (config, seed) pair on `workers` threads. Row order is fixed by
/// the grid, independent of scheduling. `on_run` (optional) sees each
/// finished run with its row index, e.g. to write per-run files.
inline SweepResult run_sweep(const ExperimentConfig& base, const SweepGrid& grid, unsigned workers = 1,
                             const std::function<void(std::size_t, const SweepRow&, const ExperimentResult*)>& on_run = {}) {
    SweepResult res;
    const auto points = expand_grid(grid, base.hyper, &res.warnings);
    const std::size_t total = points.size() * grid.seeds.size();
    res.rows.resize(total);

    std::atomic<std::size_t> next{0};
    auto work = [&] {
        for (std::size_t i = next++; i < total; i = next++) {
            const auto& pt = points[i / grid.seeds.size()];
            SweepRow& row = res.rows[i];
            row.config_index = pt.config_index;
            row.scheme = pt.scheme;
            row.hyper = pt.hyper;
            row.seed = grid.seeds[i % grid.seeds.size()];
            ExperimentConfig cfg = base;
            cfg.scheme = pt.scheme;
            cfg.hyper = pt.hyper;
            std::optional<ExperimentResult> r;
            try {
                r = run_experiment(cfg, row.seed);
                row.best = best_epoch_summary(r->training);
            } catch (const NumericalError& e) {
                row.status = "diverged@" + std::to_string(e.epoch());
            } catch (const std::exception& e) {
                row.status = std::string("error: ") + e.what();
            }
            if (on_run) on_run(i, row, r ? &*r : nullptr);
        }
    };
    std::vector<std::thread> pool;
    for (unsigned w = 1; w < std::max(1U, workers); ++w) pool.emplace_back(work);
    work();
    for (auto& t : pool) t.join();

    for (const auto& pt : points) {
        SweepAggregate a{pt.config_index, pt.scheme, pt.hyper};
        std::vector<double> acc;
        double ratio = 0.0;
        for (const auto& row : res.rows)
            if (row.config_index == pt.config_index && row.status == "ok") {
                acc.push_back(row.best.balanced_accuracy);
                ratio += row.best.train_ratio.value;
            }
        a.runs_ok = static_cast<int>(acc.size());
        if (!acc.empty()) {
            a.mean_accuracy = std::accumulate(acc.begin(), acc.end(), 0.0) / acc.size();
            double ss = 0.0;
            for (double v : acc) ss += (v - a.mean_accuracy) * (v - a.mean_accuracy);
            a.std_accuracy = acc.size() > 1 ? std::sqrt(ss / (acc.size() - 1)) : 0.0;
            a.mean_ratio = ratio / acc.size();
        }
        res.aggregates.push_back(a);
    }
    return res;
}

}  // namespace vslab
