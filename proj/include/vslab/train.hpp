#pragma once

// Two-phase training with the VS loss.
//
// Epochs t < T0 (warm-up): alpha = 1, logits adjusted by beta and delta.
// Epochs t >= T0 (terminal): classes re-weighted, either class-balanced
// (DRW) or aligned with the priors, alpha_y ~ pi_y^-nu (ADRW); with TLA the
// multiplicative adjustment beta is truncated back to 1. The learning rate
// is annealed at T0.

#include "bounds.hpp"
#include "core.hpp"
#include "data.hpp"
#include "eval.hpp"
#include "losses.hpp"
#include "model.hpp"

#include <json.hpp>

#include <algorithm>
#include <cmath>
#include <string>
#include <vector>

namespace vslab {

enum class ReweightFamily { None, DrwCB, ADRW };

inline const char* to_string(ReweightFamily f) {
    switch (f) {
        case ReweightFamily::None: return "none";
        case ReweightFamily::DrwCB: return "drw-cb";
        case ReweightFamily::ADRW: return "adrw";
    }
    return "?";
}

struct ScheduleSpec {
    std::string name = "custom";
    int total_epochs = 200;
    int drw_epoch = 160;  ///< T0
    ReweightFamily reweight = ReweightFamily::None;
    double cb_p = 0.9999;  ///< DrwCB
    double nu = 1.0;       ///< ADRW
    Vector warmup_beta;
    Vector warmup_delta;
    Vector terminal_delta;
    bool tla_enabled = false;

    int num_classes() const noexcept { return static_cast<int>(warmup_beta.size()); }

    void validate() const {
        if (total_epochs < 1) throw ConfigError("schedule: total epochs must be >= 1");
        if (drw_epoch < 0 || drw_epoch > total_epochs) throw ConfigError("schedule: T0 must lie in [0, T]");
        const auto C = warmup_beta.size();
        if (C < 2) throw ConfigError("schedule: need at least 2 classes");
        if (warmup_delta.size() != C || terminal_delta.size() != C)
            throw ConfigError("schedule: beta/delta lengths differ");
        if (!(warmup_beta.array() > 0.0).all() || !warmup_beta.allFinite())
            throw ConfigError("schedule: warm-up beta must be positive");
        if (!warmup_delta.allFinite() || !terminal_delta.allFinite()) throw ConfigError("schedule: delta must be finite");
        if (reweight == ReweightFamily::ADRW && !(nu > 0.0)) throw ConfigError("schedule: ADRW needs nu > 0");
        if (reweight == ReweightFamily::DrwCB && !(cb_p > 0.0 && cb_p < 1.0))
            throw ConfigError("schedule: DRW needs p in (0,1)");
    }
};

/// Loss parameters in effect at epoch t (0-based).
inline VSParams phase_params(int t, const ScheduleSpec& spec, std::span<const long> counts) {
    spec.validate();
    if (t < 0 || t >= spec.total_epochs) throw ConfigError("phase_params: epoch outside [0, T)");
    const auto C = spec.warmup_beta.size();
    if (static_cast<Eigen::Index>(counts.size()) != C) throw ConfigError("phase_params: class count mismatch");

    if (t < spec.drw_epoch) return {Vector::Ones(C), spec.warmup_beta, spec.warmup_delta};

    const Vector pi = priors_from_counts(counts);
    Vector alpha = Vector::Ones(C);
    switch (spec.reweight) {
        case ReweightFamily::None:
            break;
        case ReweightFamily::DrwCB:
            for (Eigen::Index y = 0; y < C; ++y) alpha[y] = class_balanced_weight(counts[static_cast<std::size_t>(y)], spec.cb_p);
            break;
        case ReweightFamily::ADRW:
            alpha = pi.array().pow(-spec.nu).matrix();
            break;
    }
    alpha = normalize_alpha(alpha, pi);
    return {alpha, spec.tla_enabled ? Vector::Ones(C) : spec.warmup_beta, spec.terminal_delta};
}

/// Defaults sit on the usual search grids: nu in {0.15, 0.25, 0.75, 1, 2, 3},
/// tau in {0.5, 0.75, 1, 1.25, 2}, gamma in {0.05, 0.1, 0.15, 0.2, 0.25}.
struct SchemeHyper {
    double nu = 0.75;
    double tau = 0.5;
    double gamma = 0.25;
    double cb_p = 0.9999;
    double ldam_c = 1.0;
    int epochs = 200;
    int t0 = 160;
};

/// Named schemes: CE, CE+DRW, CE+ADRW, LDAM, LDAM+DRW, LDAM+ADRW, VS, VS+DRW,
/// VS+TLA+DRW, VS+TLA+ADRW, plus CB (class-balanced weights from epoch 0).
inline ScheduleSpec scheme_catalog(const std::string& name, std::span<const long> counts, const SchemeHyper& h = {}) {
    const auto C = static_cast<Eigen::Index>(counts.size());
    if (C < 2) throw ConfigError("scheme: need at least 2 classes");

    const auto plus = name.find('+');
    const std::string base = name.substr(0, plus);
    const std::string rest = plus == std::string::npos ? "" : name.substr(plus);

    ScheduleSpec s;
    s.name = name;
    s.total_epochs = h.epochs;
    s.drw_epoch = h.t0;
    s.cb_p = h.cb_p;
    s.nu = h.nu;

    VSParams warm = VSParams::cross_entropy(C);
    try {
        if (base == "CE" || base == "CB") {
        } else if (base == "LDAM") {
            warm = preset(PresetKind::LDAM, counts, h.ldam_c);
        } else if (base == "VS") {
            warm = preset(PresetKind::VS, counts, h.gamma, h.tau);
        } else {
            throw ConfigError("unknown scheme '" + name + "'");
        }
    } catch (const InvalidInput& e) {
        throw ConfigError(e.what());
    }
    s.warmup_beta = warm.beta;
    s.warmup_delta = warm.delta;
    s.terminal_delta = warm.delta;

    if (base == "CB") {
        if (!rest.empty()) throw ConfigError("unknown scheme '" + name + "'");
        s.reweight = ReweightFamily::DrwCB;
        s.drw_epoch = 0;
    } else if (rest.empty()) {
        s.reweight = ReweightFamily::None;
    } else if (rest == "+DRW") {
        s.reweight = ReweightFamily::DrwCB;
    } else if (rest == "+ADRW") {
        s.reweight = ReweightFamily::ADRW;
    } else if (base == "VS" && rest == "+TLA+DRW") {
        s.reweight = ReweightFamily::DrwCB;
        s.tla_enabled = true;
    } else if (base == "VS" && rest == "+TLA+ADRW") {
        s.reweight = ReweightFamily::ADRW;
        s.tla_enabled = true;
    } else {
        throw ConfigError("unknown scheme '" + name + "'");
    }
    s.validate();
    return s;
}

inline const std::vector<std::string>& scheme_names() {
    static const std::vector<std::string> names{"CE",  "CE+DRW", "CE+ADRW", "LDAM",       "LDAM+DRW",    "LDAM+ADRW",
                                                "VS",  "VS+DRW", "VS+TLA+DRW", "VS+TLA+ADRW", "CB"};
    return names;
}

/// Which hyperparameters a scheme actually reads.
struct SchemeAxes {
    bool nu = false;
    bool tau = false;
    bool gamma = false;
    bool t0 = true;
};

inline SchemeAxes scheme_axes(const std::string& name) {
    SchemeAxes a;
    a.nu = name.find("ADRW") != std::string::npos;
    a.tau = a.gamma = name.rfind("VS", 0) == 0;
    a.t0 = name != "CB";
    return a;
}

struct TrainConfig {
    double lr = 0.1;
    std::vector<int> milestones;  ///< T0 is added automatically when 0 < T0 < T
    double lr_decay = 0.1;
    double momentum = 0.9;
    double weight_decay = 2e-4;
    long batch_size = 128;
};

struct EpochRecord {
    int epoch = 0;
    std::string phase = "warmup";  ///< "warmup" (t < T0) or "terminal"
    double train_loss = 0.0;
    double test_balanced_accuracy = 0.0;
    Vector train_class_accuracy;
    Vector B;
    AccuracyRatio min_maj;
    double learning_rate = 0.0;
    VSParams params;
};

struct TrainResult {
    ScoreModel final_model;
    ScoreModel best_model;
    int best_epoch = 0;
    std::vector<EpochRecord> records;
};

inline MultiStepSchedule effective_lr_schedule(const ScheduleSpec& spec, const TrainConfig& cfg) {
    MultiStepSchedule lr{cfg.lr, cfg.milestones, cfg.lr_decay};
    lr.validate();
    if (spec.drw_epoch > 0 && spec.drw_epoch < spec.total_epochs &&
        std::find(lr.milestones.begin(), lr.milestones.end(), spec.drw_epoch) == lr.milestones.end()) {
        lr.milestones.push_back(spec.drw_epoch);
        std::sort(lr.milestones.begin(), lr.milestones.end());
    }
    return lr;
}

/// Minibatch SGD for spec.total_epochs epochs. Deterministic in `seed`.
/// Throws NumericalError when a batch loss turns non-finite.
inline TrainResult run_training(const LabeledDataset& train, const LabeledDataset& test, const ScoreModel& model_init,
                                const ScheduleSpec& spec, const TrainConfig& cfg, std::uint64_t seed) {
    spec.validate();
    validate(model_init);
    if (model_init.input_dim() != train.dim() || test.dim() != train.dim())
        throw ConfigError("training: feature dimension mismatch");
    if (model_init.num_classes() != train.num_classes() || spec.num_classes() != train.num_classes() ||
        test.num_classes() != train.num_classes())
        throw ConfigError("training: class count mismatch");
    if (cfg.batch_size < 1) throw ConfigError("training: batch size must be >= 1");

    const MultiStepSchedule lr_sched = effective_lr_schedule(spec, cfg);
    TrainResult out;
    out.final_model = model_init;
    ScoreModel& model = out.final_model;
    OptState opt = make_opt_state(model, cfg.lr, cfg.momentum, cfg.weight_decay);
    const Eigen::Index batch = std::min<Eigen::Index>(cfg.batch_size, train.size());
    double best_acc = -1.0;

    for (int t = 0; t < spec.total_epochs; ++t) {
        const VSParams params = phase_params(t, spec, train.counts);
        opt.learning_rate = learning_rate_at(t, lr_sched);
        for (const auto& idx : minibatches(train.size(), batch, derive_seed(seed, "epoch", static_cast<std::uint64_t>(t)))) {
            Matrix xb = select_rows(train.features, idx);
            Labels yb(idx.size());
            for (std::size_t i = 0; i < idx.size(); ++i) yb[i] = train.labels[static_cast<std::size_t>(idx[i])];
            std::pair<double, ScoreModel> step;
            try {
                step = loss_and_grads(model, xb, yb, params);
            } catch (const InvalidInput&) {
                // the loss rejects non-finite scores; that is divergence, not bad input
                if (!model.all_finite() || !forward_batch(model, xb).allFinite())
                    throw NumericalError("non-finite scores at epoch " + std::to_string(t), t);
                throw;
            }
            auto& [loss, grads] = step;
            if (!std::isfinite(loss) || !grads.all_finite())
                throw NumericalError("non-finite loss at epoch " + std::to_string(t), t);
            sgd_step(model, grads, opt);
        }
        if (!model.all_finite()) throw NumericalError("non-finite parameters at epoch " + std::to_string(t), t);

        EpochRecord rec;
        rec.epoch = t;
        rec.phase = t < spec.drw_epoch ? "warmup" : "terminal";
        rec.learning_rate = opt.learning_rate;
        rec.params = params;
        const Matrix train_scores = forward_batch(model, train.features);
        if (!train_scores.allFinite()) throw NumericalError("non-finite scores at epoch " + std::to_string(t), t);
        rec.train_loss = mean_loss(train_scores, train.labels, params);
        if (!std::isfinite(rec.train_loss)) throw NumericalError("non-finite loss at epoch " + std::to_string(t), t);
        rec.train_class_accuracy = balanced_accuracy(train_scores, train.labels).per_class;
        rec.B = b_min(train_scores, train.labels);
        rec.min_maj = min_maj_ratio(rec.train_class_accuracy, train.counts);
        rec.test_balanced_accuracy = balanced_accuracy(forward_batch(model, test.features), test.labels).value;
        if (rec.test_balanced_accuracy > best_acc) {
            best_acc = rec.test_balanced_accuracy;
            out.best_epoch = t;
            out.best_model = model;
        }
        out.records.push_back(std::move(rec));
    }
    return out;
}

inline nlohmann::ordered_json to_ordered_json(const EpochRecord& r) {
    return {{"epoch", r.epoch},
            {"phase", r.phase},
            {"train_loss", r.train_loss},
            {"test_balanced_accuracy", r.test_balanced_accuracy},
            {"train_class_accuracy", to_std(r.train_class_accuracy)},
            {"B", to_std(r.B)},
            {"acc_ratio_min_maj", ratio_json(r.min_maj)},
            {"acc_ratio_zero_majority", r.min_maj.zero_majority},
            {"learning_rate", r.learning_rate},
            {"params", r.params}};
}

inline nlohmann::ordered_json to_ordered_json(const ScheduleSpec& s) {
    return {{"name", s.name},
            {"total_epochs", s.total_epochs},
            {"drw_epoch", s.drw_epoch},
            {"reweight", to_string(s.reweight)},
            {"cb_p", s.cb_p},
            {"nu", s.nu},
            {"tla_enabled", s.tla_enabled},
            {"warmup_beta", to_std(s.warmup_beta)},
            {"warmup_delta", to_std(s.warmup_delta)},
            {"terminal_delta", to_std(s.terminal_delta)},
            {"alpha_normalization", "sum_y pi_y alpha_y = 1"}};
}

}  // namespace vslab
