#pragma once

// Generalization-bound machinery for imbalanced classification.
//
// The data-dependent bound reads
//
//   R_bal <~ Phi + C_S(F) / (C pi_C) * sum_y mu_y sqrt(pi_y)
//   Phi    = 1/(C pi_C) * [ R_emp + 3 M sqrt(log(2/delta) / 2N) ]
//
// where mu_y is a per-class (local) Lipschitz constant of the loss. For the
// VS loss mu_y = alpha_y beta~_y (1 - p_y), so it shrinks as class y is fit
// well (large B_y). The union bound it is compared against averages
// per-class bounds with a single global Lipschitz constant.
//
// Constants hidden by "<~" are taken as 1; values are only meaningful when
// compared with each other under that convention.

#include "core.hpp"
#include "eval.hpp"
#include "losses.hpp"

#include <json.hpp>

#include <algorithm>
#include <cmath>
#include <limits>
#include <optional>
#include <random>
#include <span>
#include <string>
#include <vector>

namespace vslab {

namespace detail {

inline void check_scores_labels(const Matrix& scores, std::span<const Label> labels) {
    require(scores.rows() == static_cast<Eigen::Index>(labels.size()), "scores/labels size mismatch");
    require(scores.cols() >= 2, "need at least 2 classes");
    for (Label y : labels) require(y >= 0 && y < scores.cols(), "label out of range");
}

inline void require_nonempty_classes(const Vector& seen) {
    for (Eigen::Index y = 0; y < seen.size(); ++y)
        require(seen[y] > 0.0, "class " + std::to_string(y) + " has no samples");
}

}  // namespace detail

namespace detail {

/// 1 - softmax(z)_y as r / (1 + r) with r = sum_{j != y} exp(z_j - z_y). Every step
/// is monotone under rounding, so raising a rival logit or lowering z_y never
/// lowers the result; p.sum() - p[y] loses that near saturation.
inline double rival_mass(const Vector& z, Eigen::Index y) {
    double r = 0.0;
    for (Eigen::Index j = 0; j < z.size(); ++j)
        if (j != y) r += std::exp(z[j] - z[y]);
    return 1.0 / (1.0 + 1.0 / r);
}

}  // namespace detail

/// B_y = min over class-y samples of the true-class score.
inline Vector b_min(const Matrix& scores, std::span<const Label> labels) {
    detail::check_scores_labels(scores, labels);
    const auto C = scores.cols();
    Vector b = Vector::Constant(C, std::numeric_limits<double>::infinity());
    Vector seen = Vector::Zero(C);
    for (Eigen::Index i = 0; i < scores.rows(); ++i) {
        const Label y = labels[static_cast<std::size_t>(i)];
        b[y] = std::min(b[y], scores(i, y));
        seen[y] = 1.0;
    }
    detail::require_nonempty_classes(seen);
    return b;
}

/// margin_y = min over class-y samples of (true score - best competing score).
inline Vector min_margin(const Matrix& scores, std::span<const Label> labels) {
    detail::check_scores_labels(scores, labels);
    const auto C = scores.cols();
    Vector m = Vector::Constant(C, std::numeric_limits<double>::infinity());
    Vector seen = Vector::Zero(C);
    for (Eigen::Index i = 0; i < scores.rows(); ++i) {
        const Label y = labels[static_cast<std::size_t>(i)];
        double rival = -std::numeric_limits<double>::infinity();
        for (Eigen::Index j = 0; j < C; ++j)
            if (j != y) rival = std::max(rival, scores(i, j));
        m[y] = std::min(m[y], scores(i, y) - rival);
        seen[y] = 1.0;
    }
    detail::require_nonempty_classes(seen);
    return m;
}

/// beta~_y = sqrt(beta_y^2 + (sum_{j != y} beta_j)^2)
inline Vector beta_tilde(const Vector& beta) {
    detail::require((beta.array() > 0.0).all(), "beta_tilde: beta must be positive");
    const double total = beta.sum();
    Vector out(beta.size());
    for (Eigen::Index y = 0; y < beta.size(); ++y) out[y] = std::hypot(beta[y], total - beta[y]);
    return out;
}

enum class LipschitzMode {
    /// max over class-y samples of alpha_y beta~_y (1 - p_y(x)): the per-sample supremum.
    Pointwise,
    /// alpha_y beta~_y (1 - softmax) with the true-class logit at beta_y B_y + Delta_y and each
    /// competing logit at its maximum over S_y. Upper-bounds Pointwise.
    BSurrogate,
};

inline const char* to_string(LipschitzMode m) { return m == LipschitzMode::Pointwise ? "pointwise" : "b-surrogate"; }

inline Vector local_lipschitz(const Matrix& scores, std::span<const Label> labels, const VSParams& params,
                              LipschitzMode mode = LipschitzMode::Pointwise) {
    detail::check_scores_labels(scores, labels);
    params.validate();
    const auto C = scores.cols();
    detail::require(params.num_classes() == C, "local_lipschitz: params/scores class count mismatch");
    const Vector bt = beta_tilde(params.beta);

    if (mode == LipschitzMode::Pointwise) {
        Vector worst = Vector::Constant(C, -1.0);
        for (Eigen::Index i = 0; i < scores.rows(); ++i) {
            const Label y = labels[static_cast<std::size_t>(i)];
            worst[y] = std::max(worst[y], detail::rival_mass(detail::adjusted_logits(scores.row(i).transpose(), params), y));
        }
        for (Eigen::Index y = 0; y < C; ++y) detail::require(worst[y] >= 0.0, "class " + std::to_string(y) + " has no samples");
        return params.alpha.cwiseProduct(bt).cwiseProduct(worst);
    }

    // per class: lowest true score and highest score of every rival over S_y
    Matrix extreme = Matrix::Constant(C, C, -std::numeric_limits<double>::infinity());
    Vector seen = Vector::Zero(C);
    for (Eigen::Index i = 0; i < scores.rows(); ++i) {
        const Label y = labels[static_cast<std::size_t>(i)];
        for (Eigen::Index j = 0; j < C; ++j)
            extreme(y, j) = j == y ? (seen[y] > 0.0 ? std::min(extreme(y, j), scores(i, j)) : scores(i, j))
                                   : std::max(extreme(y, j), scores(i, j));
        seen[y] = 1.0;
    }
    detail::require_nonempty_classes(seen);
    Vector mu(C);
    for (Eigen::Index y = 0; y < C; ++y) {
        mu[y] = params.alpha[y] * bt[y] * detail::rival_mass(detail::adjusted_logits(extreme.row(y).transpose(), params), y);
    }
    return mu;
}

enum class ComplexityMethod { LinearAnalytic, MonteCarlo };

inline const char* to_string(ComplexityMethod m) {
    return m == ComplexityMethod::LinearAnalytic ? "linear-analytic" : "monte-carlo";
}

struct ComplexityEstimate {
    double value = 0.0;
    ComplexityMethod method = ComplexityMethod::LinearAnalytic;
    double norm_bound = 1.0;
    long mc_samples = 0;
    std::uint64_t seed = 0;
};

/// Empirical Rademacher complexity of {x -> <w, x> : ||w|| <= B} on the rows of X.
///   LinearAnalytic: B sqrt(sum_n ||x_n||^2) / N        (Jensen upper bound)
///   MonteCarlo:     mean over K sign draws of B ||sum_n xi_n x_n|| / N
inline ComplexityEstimate complexity(const Matrix& X, ComplexityMethod method, double norm_bound, long mc_samples = 1000,
                                     std::uint64_t seed = 0) {
    detail::require(norm_bound > 0.0, "complexity: norm bound must be positive");
    detail::require(X.rows() >= 1, "complexity: empty sample");
    const double n = static_cast<double>(X.rows());
    ComplexityEstimate est{0.0, method, norm_bound, 0, seed};
    if (method == ComplexityMethod::LinearAnalytic) {
        est.value = norm_bound * std::sqrt(X.squaredNorm()) / n;
        return est;
    }
    detail::require(mc_samples >= 1, "complexity: need at least one Monte Carlo sample");
    est.mc_samples = mc_samples;
    std::mt19937_64 rng(derive_seed(seed, "rademacher"));
    Vector acc(X.cols());
    double total = 0.0;
    for (long k = 0; k < mc_samples; ++k) {
        acc.setZero();
        std::uint64_t bits = 0;
        for (Eigen::Index i = 0; i < X.rows(); ++i) {
            if (i % 64 == 0) bits = rng();
            if (bits & 1U)
                acc += X.row(i).transpose();
            else
                acc -= X.row(i).transpose();
            bits >>= 1U;
        }
        total += acc.norm();
    }
    est.value = norm_bound * total / (static_cast<double>(mc_samples) * n);
    return est;
}

struct InverseSqrtFit {
    double c = 0.0;   ///< value ~ c / sqrt(N)
    double r2 = 0.0;  ///< coefficient of determination of that fit
};

/// Least-squares fit of values against 1/sqrt(N) through the origin.
inline InverseSqrtFit fit_inverse_sqrt(std::span<const double> sizes, std::span<const double> values) {
    detail::require(sizes.size() == values.size() && sizes.size() >= 2, "fit_inverse_sqrt: need >= 2 points");
    double sxx = 0.0, sxy = 0.0, mean = 0.0;
    for (std::size_t i = 0; i < sizes.size(); ++i) {
        const double x = 1.0 / std::sqrt(sizes[i]);
        sxx += x * x;
        sxy += x * values[i];
        mean += values[i];
    }
    mean /= static_cast<double>(values.size());
    InverseSqrtFit fit{sxy / sxx, 0.0};
    double ss_res = 0.0, ss_tot = 0.0;
    for (std::size_t i = 0; i < sizes.size(); ++i) {
        const double r = values[i] - fit.c / std::sqrt(sizes[i]);
        ss_res += r * r;
        ss_tot += (values[i] - mean) * (values[i] - mean);
    }
    fit.r2 = ss_tot > 0.0 ? 1.0 - ss_res / ss_tot : (ss_res == 0.0 ? 1.0 : 0.0);
    return fit;
}

/// Phi(L, delta) = 1/(C pi_C) [ R_emp + 3 M sqrt(log(2/delta) / (2N)) ]
inline double phi(double empirical_risk, double M, double delta, int C, double pi_C, long N) {
    detail::require(delta > 0.0 && delta < 1.0, "phi: delta must lie in (0,1)");
    detail::require(pi_C > 0.0, "phi: pi_C must be positive");
    detail::require(M > 0.0, "phi: M must be positive");
    detail::require(C >= 2 && N >= 1, "phi: need C >= 2 and N >= 1");
    return (empirical_risk + 3.0 * M * std::sqrt(std::log(2.0 / delta) / (2.0 * static_cast<double>(N)))) /
           (C * pi_C);
}

/// Phi + complexity / (C pi_C) * sum_y mu_y sqrt(pi_y)
inline double data_dependent_bound(double phi_value, double complexity_value, const Vector& mu, const Vector& pi) {
    detail::require(mu.size() == pi.size() && mu.size() >= 2, "data_dependent_bound: length mismatch");
    const double pi_C = pi.minCoeff();
    detail::require(pi_C > 0.0, "data_dependent_bound: priors must be positive");
    const double C = static_cast<double>(pi.size());
    return phi_value + complexity_value / (C * pi_C) * mu.dot(pi.cwiseSqrt());
}

/// 1/C sum_y [ R_y + mu * C_{S_y}(F) + 3 M sqrt(log(2C/delta) / (2 N_y)) ]
inline double union_bound(const Vector& per_class_risks, const Vector& per_class_complexities, double mu_global,
                          double M, double delta, std::span<const long> counts) {
    const auto C = per_class_risks.size();
    detail::require(C >= 2, "union_bound: need at least 2 classes");
    detail::require(per_class_complexities.size() == C && static_cast<Eigen::Index>(counts.size()) == C,
                    "union_bound: length mismatch");
    detail::require(delta > 0.0 && delta < 1.0, "union_bound: delta must lie in (0,1)");
    detail::require(M >= 0.0 && mu_global >= 0.0, "union_bound: M and mu must be nonnegative");
    const double log_term = std::log(2.0 * static_cast<double>(C) / delta);
    double total = 0.0;
    for (Eigen::Index y = 0; y < C; ++y) {
        const long n = counts[static_cast<std::size_t>(y)];
        detail::require(n >= 1, "union_bound: counts must be >= 1");
        total += per_class_risks[y] + mu_global * per_class_complexities[y] +
                 3.0 * M * std::sqrt(log_term / (2.0 * static_cast<double>(n)));
    }
    return total / static_cast<double>(C);
}

namespace detail {

inline void check_sorted_priors(const Vector& pi) {
    require(pi.size() >= 2, "priors: need at least 2 classes");
    require((pi.array() > 0.0).all(), "priors: must be positive");
    for (Eigen::Index y = 1; y < pi.size(); ++y)
        require(pi[y] <= pi[y - 1], "priors must be sorted nonincreasing");
}

}  // namespace detail

/// h1(k) = pi_C^-k sum_y pi_y^-1/2 - pi_C^-1 sum_y pi_y^(1/2 - k)
///
/// With mu_y proportional to N_y^-k, h1 has the sign of (union - data-dependent)
/// complexity terms. h1(1) = 0 and h1 is nondecreasing for k >= 1.
inline double h1(double kappa, const Vector& pi) {
    detail::check_sorted_priors(pi);
    const double pi_C = pi[pi.size() - 1];
    const double a = pi.array().pow(-0.5).sum() / std::pow(pi_C, kappa);
    const double b = pi.array().pow(0.5 - kappa).sum() / pi_C;
    return a - b;
}

struct KappaRow {
    double kappa = 0.0;
    double h1 = 0.0;
    double data_dep = 0.0;  ///< 1/(C pi_C) sum_y pi_y^(1/2 - k)
    double union_ = 0.0;    ///< 1/(C pi_C^k) sum_y pi_y^-1/2
};

/// Complexity terms of both bounds under mu_y ~ N_y^-k, with the shared
/// factor C_S(F) / N^k dropped. h1 = C * (union - data_dep).
inline std::vector<KappaRow> kappa_sweep(const Vector& pi, std::span<const double> kappas) {
    detail::check_sorted_priors(pi);
    const double C = static_cast<double>(pi.size());
    const double pi_C = pi[pi.size() - 1];
    std::vector<KappaRow> rows;
    rows.reserve(kappas.size());
    for (double k : kappas) {
        KappaRow r;
        r.kappa = k;
        r.h1 = h1(k, pi);
        r.data_dep = pi.array().pow(0.5 - k).sum() / (C * pi_C);
        r.union_ = pi.array().pow(-0.5).sum() / (C * std::pow(pi_C, k));
        rows.push_back(r);
    }
    return rows;
}

struct BoundReport {
    double phi = 0.0;
    double M = 0.0;
    double delta = 0.05;
    double empirical_risk = 0.0;
    long n = 0;
    Vector priors;
    std::vector<long> counts;
    LipschitzMode mu_mode = LipschitzMode::Pointwise;
    Vector mu;                 ///< the mode used in the bound
    Vector mu_pointwise;
    Vector mu_bsurrogate;
    Vector B;
    Vector min_margins;
    ComplexityEstimate complexity;
    double data_dependent_bound = 0.0;
    Vector per_class_terms;    ///< complexity / (C pi_C) * mu_y sqrt(pi_y)
    double union_bound = 0.0;
    Vector per_class_risks;
    Vector per_class_complexities;
    double mu_global = 0.0;
};

struct BoundOptions {
    double delta = 0.05;
    std::optional<double> M;  ///< loss cap; default is the largest observed loss
    LipschitzMode mode = LipschitzMode::Pointwise;
    /// Complexity of F on each S_y. Default scales the full-sample value by sqrt(N / N_y).
    std::optional<Vector> per_class_complexities;
};

/// Assembles every term of both bounds for the VS loss at `params`.
inline BoundReport vs_bound_report(const Matrix& scores, std::span<const Label> labels, const VSParams& params,
                                   const ComplexityEstimate& complexity_est, const BoundOptions& opt = {}) {
    detail::check_scores_labels(scores, labels);
    params.validate();
    const auto C = scores.cols();
    detail::require(params.num_classes() == C, "vs_bound_report: params/scores class count mismatch");

    BoundReport r;
    r.delta = opt.delta;
    r.n = static_cast<long>(scores.rows());
    r.counts.assign(static_cast<std::size_t>(C), 0);
    double max_loss = 0.0;
    double total = 0.0;
    for (Eigen::Index i = 0; i < scores.rows(); ++i) {
        const Label y = labels[static_cast<std::size_t>(i)];
        ++r.counts[static_cast<std::size_t>(y)];
        const double l = vs_loss(scores.row(i).transpose(), y, params);
        total += l;
        max_loss = std::max(max_loss, l);
    }
    for (long c : r.counts) detail::require(c >= 1, "vs_bound_report: every class needs samples");
    r.priors = priors_from_counts(r.counts);
    r.empirical_risk = total / static_cast<double>(r.n);
    r.M = opt.M.value_or(std::max(max_loss, std::numeric_limits<double>::min()));

    const double pi_C = r.priors.minCoeff();
    r.phi = phi(r.empirical_risk, r.M, r.delta, static_cast<int>(C), pi_C, r.n);

    r.B = b_min(scores, labels);
    r.min_margins = min_margin(scores, labels);
    r.mu_pointwise = local_lipschitz(scores, labels, params, LipschitzMode::Pointwise);
    r.mu_bsurrogate = local_lipschitz(scores, labels, params, LipschitzMode::BSurrogate);
    r.mu_mode = opt.mode;
    r.mu = opt.mode == LipschitzMode::Pointwise ? r.mu_pointwise : r.mu_bsurrogate;
    r.complexity = complexity_est;

    r.data_dependent_bound = data_dependent_bound(r.phi, complexity_est.value, r.mu, r.priors);
    r.per_class_terms =
        (complexity_est.value / (static_cast<double>(C) * pi_C)) * r.mu.cwiseProduct(r.priors.cwiseSqrt());

    r.per_class_risks = per_class_risks(scores, labels, params);
    if (opt.per_class_complexities) {
        detail::require(opt.per_class_complexities->size() == C, "vs_bound_report: per-class complexity length");
        r.per_class_complexities = *opt.per_class_complexities;
    } else {
        r.per_class_complexities = complexity_est.value * r.priors.cwiseInverse().cwiseSqrt();
    }
    r.mu_global = r.mu.maxCoeff();
    r.union_bound = union_bound(r.per_class_risks, r.per_class_complexities, r.mu_global, r.M, r.delta, r.counts);
    return r;
}

inline nlohmann::ordered_json to_ordered_json(const ComplexityEstimate& c) {
    nlohmann::ordered_json j{{"value", c.value}, {"method", to_string(c.method)}, {"norm_bound", c.norm_bound}};
    if (c.method == ComplexityMethod::MonteCarlo) {
        j["mc_samples"] = c.mc_samples;
        j["seed"] = c.seed;
    }
    return j;
}

inline nlohmann::ordered_json to_ordered_json(const BoundReport& r) {
    return {{"convention", "asymptotic constants set to 1; compare bounds only with each other"},
            {"phi", r.phi},
            {"M", r.M},
            {"delta", r.delta},
            {"empirical_risk", r.empirical_risk},
            {"n", r.n},
            {"counts", r.counts},
            {"priors", to_std(r.priors)},
            {"mu_mode", to_string(r.mu_mode)},
            {"mu", to_std(r.mu)},
            {"mu_pointwise", to_std(r.mu_pointwise)},
            {"mu_bsurrogate", to_std(r.mu_bsurrogate)},
            {"B", to_std(r.B)},
            {"min_margins", to_std(r.min_margins)},
            {"complexity", to_ordered_json(r.complexity)},
            {"data_dependent_bound", r.data_dependent_bound},
            {"per_class_terms", to_std(r.per_class_terms)},
            {"union_bound", r.union_bound},
            {"per_class_risks", to_std(r.per_class_risks)},
            {"per_class_complexities", to_std(r.per_class_complexities)},
            {"mu_global", r.mu_global}};
}

}  // namespace vslab
