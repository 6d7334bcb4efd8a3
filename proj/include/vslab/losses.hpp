#pragma once

// Vector-Scaling (VS) loss family.
//
//   L(s, y) = -alpha_y * log( exp(beta_y s_y + delta_y) / sum_j exp(beta_j s_j + delta_j) )
//
// alpha re-weights classes, beta scales logits, delta shifts them. CE, the
// balanced loss, class-balanced (CB), logit-adjusted (LA), CDT and LDAM-style
// margins are all points in this family (see `preset`).

#include "core.hpp"

#include <json.hpp>

#include <algorithm>
#include <cmath>
#include <numeric>
#include <string>
#include <string_view>

namespace vslab {

struct VSParams {
    Vector alpha;
    Vector beta;
    Vector delta;

    Eigen::Index num_classes() const noexcept { return alpha.size(); }

    /// alpha = beta = 1, delta = 0: plain softmax cross-entropy.
    static VSParams cross_entropy(Eigen::Index C) {
        return {Vector::Ones(C), Vector::Ones(C), Vector::Zero(C)};
    }

    void validate() const {
        const auto C = alpha.size();
        detail::require(C >= 2, "VSParams: need at least 2 classes");
        detail::require(beta.size() == C && delta.size() == C,
                        "VSParams: alpha, beta, delta must have equal length");
        detail::require(alpha.allFinite() && (alpha.array() > 0.0).all(),
                        "VSParams: alpha must be finite and positive");
        detail::require(beta.allFinite() && (beta.array() > 0.0).all(),
                        "VSParams: beta must be finite and positive");
        detail::require(delta.allFinite(), "VSParams: delta must be finite");
    }

    friend bool operator==(const VSParams& a, const VSParams& b) {
        return a.alpha == b.alpha && a.beta == b.beta && a.delta == b.delta;
    }
};

inline void to_json(nlohmann::json& j, const VSParams& p) {
    j = nlohmann::json{{"alpha", to_std(p.alpha)}, {"beta", to_std(p.beta)}, {"delta", to_std(p.delta)}};
}

inline void from_json(const nlohmann::json& j, VSParams& p) {
    p.alpha = from_std(j.at("alpha").get<std::vector<double>>());
    p.beta = from_std(j.at("beta").get<std::vector<double>>());
    p.delta = from_std(j.at("delta").get<std::vector<double>>());
    p.validate();
}

inline void to_json(nlohmann::ordered_json& j, const VSParams& p) {
    j = nlohmann::ordered_json{
        {"alpha", to_std(p.alpha)}, {"beta", to_std(p.beta)}, {"delta", to_std(p.delta)}};
}

struct AdjustedDistribution {
    Vector probs;
    double log_normalizer = 0.0;  ///< log sum_j exp(beta_j s_j + delta_j)
};

namespace detail {

inline void check_scores(const Vector& scores, const VSParams& params) {
    params.validate();
    require(scores.size() == params.num_classes(), "score vector length does not match class count");
    require(scores.allFinite(), "non-finite score");
}

inline void check_label(Label y, Eigen::Index C) {
    require(y >= 0 && y < C, "label " + std::to_string(y) + " outside [0, " + std::to_string(C) + ")");
}

inline Vector adjusted_logits(const Vector& scores, const VSParams& params) {
    return params.beta.cwiseProduct(scores) + params.delta;
}

}  // namespace detail

inline AdjustedDistribution adjusted_softmax(const Vector& scores, const VSParams& params) {
    detail::check_scores(scores, params);
    const Vector a = detail::adjusted_logits(scores, params);
    const double m = a.maxCoeff();
    Vector e = (a.array() - m).exp();
    const double z = e.sum();
    return {e / z, m + std::log(z)};
}

/// alpha_y * (logsumexp(adjusted) - adjusted_y); never forms log(p_y).
inline double vs_loss(const Vector& scores, Label label, const VSParams& params) {
    detail::check_scores(scores, params);
    detail::check_label(label, params.num_classes());
    const Vector a = detail::adjusted_logits(scores, params);
    const double m = a.maxCoeff();
    const double lse = m + std::log((a.array() - m).exp().sum());
    return params.alpha[label] * std::max(0.0, lse - a[label]);
}

/// d/ds of vs_loss:
///   true class   -alpha_y beta_y (1 - p_y)
///   other j      +alpha_y beta_j p_j
inline Vector vs_loss_grad(const Vector& scores, Label label, const VSParams& params) {
    detail::check_label(label, params.num_classes());
    const Vector p = adjusted_softmax(scores, params).probs;
    const double a = params.alpha[label];
    Vector g = a * params.beta.cwiseProduct(p);
    // 1 - p_y summed from the competitors so it stays accurate when p_y -> 1
    const double miss = p.sum() - p[label];
    g[label] = -a * params.beta[label] * miss;
    return g;
}

/// Fisher-consistent subfamily:
///   (delta_y / pi_y) * log(1 + sum_{j != y} (delta_j / delta_y) exp(s_j - s_y))
/// Evaluated on its own terms, not through vs_loss.
inline double fisher_loss(const Vector& scores, Label label, const Vector& fisher_deltas, const Vector& pi) {
    const auto C = scores.size();
    detail::require(C >= 2, "fisher_loss: need at least 2 classes");
    detail::require(fisher_deltas.size() == C && pi.size() == C, "fisher_loss: length mismatch");
    detail::check_label(label, C);
    detail::require(scores.allFinite(), "non-finite score");
    detail::require((fisher_deltas.array() > 0.0).all(), "fisher_loss: deltas must be positive");
    detail::require((pi.array() > 0.0).all(), "fisher_loss: priors must be positive");

    // log(1 + sum_j exp(t_j)) with t_j = log(delta_j/delta_y) + s_j - s_y
    double m = 0.0;
    std::vector<double> t;
    t.reserve(static_cast<std::size_t>(C));
    for (Eigen::Index j = 0; j < C; ++j) {
        if (j == label) continue;
        t.push_back(std::log(fisher_deltas[j] / fisher_deltas[label]) + scores[j] - scores[label]);
        m = std::max(m, t.back());
    }
    double acc = std::exp(-m);
    for (double tj : t) acc += std::exp(tj - m);
    return fisher_deltas[label] / pi[label] * (m + std::log(acc));
}

/// VSParams that make vs_loss coincide with fisher_loss:
/// alpha = delta / pi, beta = 1, Delta = log delta.
inline VSParams fisher_as_vs(const Vector& fisher_deltas, const Vector& pi) {
    return {fisher_deltas.cwiseQuotient(pi), Vector::Ones(pi.size()), fisher_deltas.array().log().matrix()};
}

enum class PresetKind { CE, Balanced, CB, LA, CDT, LDAM, VS };

inline PresetKind parse_preset_kind(std::string_view name) {
    std::string s(name);
    std::transform(s.begin(), s.end(), s.begin(), [](unsigned char c) { return std::tolower(c); });
    if (s == "ce") return PresetKind::CE;
    if (s == "balanced") return PresetKind::Balanced;
    if (s == "cb") return PresetKind::CB;
    if (s == "la") return PresetKind::LA;
    if (s == "cdt") return PresetKind::CDT;
    if (s == "ldam") return PresetKind::LDAM;
    if (s == "vs") return PresetKind::VS;
    throw InvalidInput("unknown preset '" + std::string(name) + "'");
}

inline Vector priors_from_counts(std::span<const long> counts) {
    Vector pi(static_cast<Eigen::Index>(counts.size()));
    const double n = std::accumulate(counts.begin(), counts.end(), 0.0);
    for (std::size_t i = 0; i < counts.size(); ++i) pi[static_cast<Eigen::Index>(i)] = counts[i] / n;
    return pi;
}

/// Class-balanced weight (1 - p) / (1 - p^N_y).
inline double class_balanced_weight(long count, double p) {
    return (1.0 - p) / (1.0 - std::pow(p, static_cast<double>(count)));
}

/// Named members of the VS family. `hyper` is the preset's single knob
/// (p for CB, tau for LA, gamma for CDT, c for LDAM); the VS preset takes
/// gamma in `hyper` and tau in `hyper2`. Alpha is returned un-normalized.
inline VSParams preset(PresetKind kind, std::span<const long> counts, double hyper = 1.0, double hyper2 = 1.0) {
    const auto C = static_cast<Eigen::Index>(counts.size());
    detail::require(C >= 2, "preset: need at least 2 classes");
    for (long n : counts) detail::require(n >= 1, "preset: class counts must be >= 1");

    VSParams p = VSParams::cross_entropy(C);
    const Vector pi = priors_from_counts(counts);
    const double head = static_cast<double>(*std::max_element(counts.begin(), counts.end()));

    auto cdt_beta = [&](double gamma) {
        Vector b(C);
        for (Eigen::Index y = 0; y < C; ++y) b[y] = std::pow(counts[static_cast<std::size_t>(y)] / head, gamma);
        return b;
    };

    switch (kind) {
        case PresetKind::CE:
            break;
        case PresetKind::Balanced:
            p.alpha = pi.cwiseInverse();
            break;
        case PresetKind::CB:
            detail::require(hyper > 0.0 && hyper < 1.0, "CB preset: p must lie in (0,1)");
            for (Eigen::Index y = 0; y < C; ++y) p.alpha[y] = class_balanced_weight(counts[static_cast<std::size_t>(y)], hyper);
            break;
        case PresetKind::LA:
            detail::require(hyper > 0.0, "LA preset: tau must be positive");
            p.delta = hyper * pi.array().log().matrix();
            break;
        case PresetKind::CDT:
            detail::require(hyper > 0.0, "CDT preset: gamma must be positive");
            p.beta = cdt_beta(hyper);
            break;
        case PresetKind::LDAM:
            detail::require(hyper > 0.0, "LDAM preset: scale c must be positive");
            for (Eigen::Index y = 0; y < C; ++y)
                p.delta[y] = -hyper * std::pow(static_cast<double>(counts[static_cast<std::size_t>(y)]), -0.25);
            break;
        case PresetKind::VS:
            detail::require(hyper > 0.0, "VS preset: gamma must be positive");
            detail::require(hyper2 > 0.0, "VS preset: tau must be positive");
            p.beta = cdt_beta(hyper);
            p.delta = hyper2 * pi.array().log().matrix();
            break;
    }
    return p;
}

/// Rescales alpha so that sum_y pi_y alpha_y = 1 (expected per-sample weight 1).
inline Vector normalize_alpha(const Vector& alpha, const Vector& pi) {
    detail::require(alpha.size() == pi.size(), "normalize_alpha: length mismatch");
    const double z = pi.dot(alpha);
    detail::require(z > 0.0 && std::isfinite(z), "normalize_alpha: degenerate weights");
    return alpha / z;
}

}  // namespace vslab
