#pragma once

// Finite-difference verification of the analytic loss and model gradients.

#include "core.hpp"
#include "losses.hpp"
#include "model.hpp"

#include <json.hpp>

#include <functional>
#include <random>

namespace vslab {

/// ||a - b||_inf / max(||a||_inf, ||b||_inf, floor). The floor keeps
/// vanishing gradients (confident samples) from turning round-off into a
/// large ratio.
inline double relative_error(const Vector& a, const Vector& b, double floor = 1e-2) {
    const double scale = std::max({a.lpNorm<Eigen::Infinity>(), b.lpNorm<Eigen::Infinity>(), floor});
    return (a - b).lpNorm<Eigen::Infinity>() / scale;
}

using LossGradFn = std::function<Vector(const Vector&, Label, const VSParams&)>;
using ModelGradFn = std::function<std::pair<double, ScoreModel>(const ScoreModel&, const Matrix&, std::span<const Label>,
                                                                const VSParams&)>;

struct GradcheckConfig {
    int loss_trials = 200;
    int model_trials = 20;
    double loss_step = 1e-6;
    double model_step = 1e-5;
    double loss_threshold = 1e-5;
    double model_threshold = 1e-4;
    std::uint64_t seed = 2024;
    LossGradFn loss_grad = [](const Vector& s, Label y, const VSParams& p) { return vs_loss_grad(s, y, p); };
    ModelGradFn model_grad = [](const ScoreModel& m, const Matrix& X, std::span<const Label> y, const VSParams& p) {
        return loss_and_grads(m, X, y, p);
    };
};

struct GradcheckReport {
    double loss_max_rel = 0.0;
    double model_max_rel = 0.0;
    int loss_trials = 0;
    int model_trials = 0;
    bool passed = false;
    nlohmann::ordered_json worst_loss_case;
    nlohmann::ordered_json worst_model_case;
};

namespace detail {

inline VSParams random_params(std::mt19937_64& rng, Eigen::Index C) {
    std::uniform_real_distribution<double> ua(0.1, 3.0), ub(0.2, 3.0), ud(-5.0, 5.0);
    VSParams p{Vector(C), Vector(C), Vector(C)};
    for (Eigen::Index j = 0; j < C; ++j) {
        p.alpha[j] = ua(rng);
        p.beta[j] = ub(rng);
        p.delta[j] = ud(rng);
    }
    return p;
}

inline Vector central_difference(const std::function<double(const Vector&)>& f, const Vector& x, double h) {
    Vector g(x.size());
    Vector xp = x;
    for (Eigen::Index i = 0; i < x.size(); ++i) {
        const double orig = xp[i];
        xp[i] = orig + h;
        const double fp = f(xp);
        xp[i] = orig - h;
        const double fm = f(xp);
        xp[i] = orig;
        g[i] = (fp - fm) / (2.0 * h);
    }
    return g;
}

}  // namespace detail

/// Loss level: random (scores, label, params) with scores in [-5, 5]^C.
/// Model level: random linear / one-hidden-layer models and batches; draws
/// with a hidden preactivation near the relu kink are redrawn.
inline GradcheckReport run_gradcheck(const GradcheckConfig& cfg) {
    GradcheckReport rep;
    std::mt19937_64 rng(derive_seed(cfg.seed, "gradcheck-loss"));
    std::uniform_int_distribution<int> uc(2, 8);
    std::uniform_real_distribution<double> us(-5.0, 5.0);

    for (int trial = 0; trial < cfg.loss_trials; ++trial) {
        const int C = uc(rng);
        Vector s(C);
        for (int j = 0; j < C; ++j) s[j] = us(rng);
        const Label y = std::uniform_int_distribution<int>(0, C - 1)(rng);
        const VSParams p = detail::random_params(rng, C);
        const Vector g = cfg.loss_grad(s, y, p);
        const Vector fd = detail::central_difference([&](const Vector& v) { return vs_loss(v, y, p); }, s, cfg.loss_step);
        const double err = relative_error(g, fd);
        if (err > rep.loss_max_rel || trial == 0) {
            rep.loss_max_rel = std::max(rep.loss_max_rel, err);
            rep.worst_loss_case = {{"trial", trial},  {"scores", to_std(s)}, {"label", y},         {"params", p},
                                   {"analytic", to_std(g)}, {"finite_difference", to_std(fd)}, {"rel_error", err}};
        }
        ++rep.loss_trials;
    }

    std::mt19937_64 mrng(derive_seed(cfg.seed, "gradcheck-model"));
    std::uniform_int_distribution<int> ud(1, 6), uh(1, 8), un(1, 8), uk(2, 5);
    std::normal_distribution<double> nx(0.0, 1.0);
    for (int trial = 0; trial < cfg.model_trials; ++trial) {
        const int d = ud(mrng), C = uk(mrng), n = un(mrng);
        const ModelKind kind = trial % 2 == 0 ? ModelKind::Linear : ModelKind::OneHiddenLayer;
        ScoreModel m;
        Matrix X(n, d);
        for (;;) {
            m = make_model(kind, d, C, uh(mrng), mrng());
            m.b1 = Vector::NullaryExpr(m.b1.size(), [&] { return 0.3 * nx(mrng); });
            if (kind == ModelKind::OneHiddenLayer) m.b2 = Vector::NullaryExpr(m.b2.size(), [&] { return 0.3 * nx(mrng); });
            for (int i = 0; i < n; ++i)
                for (int k = 0; k < d; ++k) X(i, k) = nx(mrng);
            if (kind == ModelKind::Linear) break;
            Matrix pre = X * m.W1.transpose();
            pre.rowwise() += m.b1.transpose();
            if (pre.cwiseAbs().minCoeff() > 1e-3) break;
        }
        Labels y(static_cast<std::size_t>(n));
        for (auto& v : y) v = std::uniform_int_distribution<int>(0, C - 1)(mrng);
        const VSParams p = detail::random_params(mrng, C);

        const Vector g = flatten(cfg.model_grad(m, X, y, p).second);
        const Vector theta = flatten(m);
        const Vector fd = detail::central_difference(
            [&](const Vector& v) {
                ScoreModel probe = m;
                assign(probe, v);
                return loss_and_grads(probe, X, y, p).first;
            },
            theta, cfg.model_step);
        const double err = relative_error(g, fd);
        if (err > rep.model_max_rel || trial == 0) {
            rep.model_max_rel = std::max(rep.model_max_rel, err);
            rep.worst_model_case = {{"trial", trial}, {"kind", to_string(kind)}, {"input_dim", d},
                                    {"num_classes", C}, {"batch", n}, {"params", p}, {"rel_error", err}};
        }
        ++rep.model_trials;
    }
    rep.passed = rep.loss_max_rel <= cfg.loss_threshold && rep.model_max_rel <= cfg.model_threshold;
    return rep;
}

}  // namespace vslab
