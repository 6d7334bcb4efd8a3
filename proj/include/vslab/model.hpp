#pragma once

// Score functions f: R^d -> R^C with hand-written backprop, plus
// momentum SGD and a multistep learning-rate schedule.

#include "core.hpp"
#include "losses.hpp"

#include <json.hpp>

#include <algorithm>
#include <cmath>
#include <random>
#include <span>
#include <string>
#include <utility>
#include <vector>

namespace vslab {

enum class ModelKind { Linear, OneHiddenLayer };

inline const char* to_string(ModelKind k) { return k == ModelKind::Linear ? "linear" : "mlp"; }

inline ModelKind parse_model_kind(std::string_view s) {
    if (s == "linear") return ModelKind::Linear;
    if (s == "mlp" || s == "hidden") return ModelKind::OneHiddenLayer;
    throw InvalidInput("unknown model kind '" + std::string(s) + "'");
}

/// Linear:          s = W1 x + b1              (W1: C x d)
/// OneHiddenLayer:  s = W2 relu(W1 x + b1) + b2 (W1: h x d, W2: C x h)
///
/// The same type doubles as the gradient container: a gradient has exactly
/// the parameter shapes of the model it belongs to.
struct ScoreModel {
    ModelKind kind = ModelKind::Linear;
    Matrix W1;
    Vector b1;
    Matrix W2;
    Vector b2;

    Eigen::Index input_dim() const noexcept { return W1.cols(); }
    Eigen::Index num_classes() const noexcept { return kind == ModelKind::Linear ? W1.rows() : W2.rows(); }
    Eigen::Index hidden_width() const noexcept { return kind == ModelKind::Linear ? 0 : W1.rows(); }

    ScoreModel zeros_like() const {
        ScoreModel z{kind, Matrix::Zero(W1.rows(), W1.cols()), Vector::Zero(b1.size()),
                     Matrix::Zero(W2.rows(), W2.cols()), Vector::Zero(b2.size())};
        return z;
    }

    bool all_finite() const { return W1.allFinite() && b1.allFinite() && W2.allFinite() && b2.allFinite(); }

    /// Applies fn to a flat (row-major) view of every parameter tensor, in a fixed order.
    template <class Fn>
    void for_each_tensor(Fn&& fn) {
        fn(Eigen::Map<Vector>(W1.data(), W1.size()));
        fn(Eigen::Map<Vector>(b1.data(), b1.size()));
        if (kind == ModelKind::OneHiddenLayer) {
            fn(Eigen::Map<Vector>(W2.data(), W2.size()));
            fn(Eigen::Map<Vector>(b2.data(), b2.size()));
        }
    }

    template <class Fn>
    void for_each_tensor(Fn&& fn) const {
        fn(Eigen::Map<const Vector>(W1.data(), W1.size()));
        fn(Eigen::Map<const Vector>(b1.data(), b1.size()));
        if (kind == ModelKind::OneHiddenLayer) {
            fn(Eigen::Map<const Vector>(W2.data(), W2.size()));
            fn(Eigen::Map<const Vector>(b2.data(), b2.size()));
        }
    }

    Eigen::Index parameter_count() const {
        return W1.size() + b1.size() + (kind == ModelKind::OneHiddenLayer ? W2.size() + b2.size() : 0);
    }

    friend bool operator==(const ScoreModel& a, const ScoreModel& b) {
        return a.kind == b.kind && a.W1 == b.W1 && a.b1 == b.b1 && a.W2 == b.W2 && a.b2 == b.b2;
    }
};

/// All parameters concatenated (W1 row-major, b1, then W2, b2 when present).
inline Vector flatten(const ScoreModel& m) {
    Vector out(m.parameter_count());
    Eigen::Index at = 0;
    m.for_each_tensor([&](auto t) {
        out.segment(at, t.size()) = t;
        at += t.size();
    });
    return out;
}

inline void assign(ScoreModel& m, const Vector& flat) {
    detail::require(flat.size() == m.parameter_count(), "assign: parameter count mismatch");
    Eigen::Index at = 0;
    m.for_each_tensor([&](auto t) {
        t = flat.segment(at, t.size());
        at += t.size();
    });
}

/// Weights ~ U[-1/sqrt(fan_in), 1/sqrt(fan_in)], biases zero.
inline ScoreModel make_model(ModelKind kind, Eigen::Index input_dim, Eigen::Index num_classes,
                             Eigen::Index hidden_width, std::uint64_t seed) {
    detail::require(input_dim >= 1 && num_classes >= 2, "make_model: bad shape");
    std::mt19937_64 rng(derive_seed(seed, "init"));
    auto fill = [&](Matrix& w) {
        const double r = 1.0 / std::sqrt(static_cast<double>(w.cols()));
        std::uniform_real_distribution<double> u(-r, r);
        for (Eigen::Index i = 0; i < w.rows(); ++i)
            for (Eigen::Index j = 0; j < w.cols(); ++j) w(i, j) = u(rng);
    };
    ScoreModel m;
    m.kind = kind;
    if (kind == ModelKind::Linear) {
        m.W1 = Matrix(num_classes, input_dim);
        fill(m.W1);
        m.b1 = Vector::Zero(num_classes);
    } else {
        detail::require(hidden_width >= 1, "make_model: hidden width must be >= 1");
        m.W1 = Matrix(hidden_width, input_dim);
        m.W2 = Matrix(num_classes, hidden_width);
        fill(m.W1);
        fill(m.W2);
        m.b1 = Vector::Zero(hidden_width);
        m.b2 = Vector::Zero(num_classes);
    }
    return m;
}

inline void validate(const ScoreModel& m) {
    detail::require(m.W1.rows() == m.b1.size(), "model: W1/b1 shape mismatch");
    if (m.kind == ModelKind::OneHiddenLayer) {
        detail::require(m.W2.cols() == m.W1.rows(), "model: W2/W1 shape mismatch");
        detail::require(m.W2.rows() == m.b2.size(), "model: W2/b2 shape mismatch");
    }
    detail::require(m.num_classes() >= 2, "model: need at least 2 classes");
    detail::require(m.all_finite(), "model: non-finite parameter");
}

/// Scores for a batch; row i holds f(X.row(i)).
inline Matrix forward_batch(const ScoreModel& m, const Matrix& X) {
    detail::require(X.cols() == m.input_dim(), "forward: input dimension mismatch");
    Matrix pre = X * m.W1.transpose();
    pre.rowwise() += m.b1.transpose();
    if (m.kind == ModelKind::Linear) return pre;
    Matrix s = pre.cwiseMax(0.0) * m.W2.transpose();
    s.rowwise() += m.b2.transpose();
    return s;
}

inline Vector forward(const ScoreModel& m, const Vector& x) {
    detail::require(x.size() == m.input_dim(), "forward: input dimension mismatch");
    detail::require(x.allFinite(), "forward: non-finite input");
    Vector pre = m.W1 * x + m.b1;
    if (m.kind == ModelKind::Linear) return pre;
    return m.W2 * pre.cwiseMax(0.0) + m.b2;
}

/// Mean VS loss over the batch and its exact parameter gradient.
inline std::pair<double, ScoreModel> loss_and_grads(const ScoreModel& m, const Matrix& X, std::span<const Label> y,
                                                    const VSParams& params) {
    detail::require(X.rows() > 0, "loss_and_grads: empty batch");
    detail::require(X.rows() == static_cast<Eigen::Index>(y.size()), "loss_and_grads: batch size mismatch");
    detail::require(X.cols() == m.input_dim(), "loss_and_grads: input dimension mismatch");
    const Eigen::Index n = X.rows();
    const double inv_n = 1.0 / static_cast<double>(n);

    Matrix pre = X * m.W1.transpose();
    pre.rowwise() += m.b1.transpose();
    Matrix hidden;
    Matrix scores;
    if (m.kind == ModelKind::Linear) {
        scores = pre;
    } else {
        hidden = pre.cwiseMax(0.0);
        scores = hidden * m.W2.transpose();
        scores.rowwise() += m.b2.transpose();
    }

    double loss = 0.0;
    Matrix dscores(n, scores.cols());
    for (Eigen::Index i = 0; i < n; ++i) {
        const Vector s = scores.row(i).transpose();
        const Label yi = y[static_cast<std::size_t>(i)];
        loss += vs_loss(s, yi, params);
        dscores.row(i) = vs_loss_grad(s, yi, params).transpose() * inv_n;
    }

    ScoreModel g = m.zeros_like();
    if (m.kind == ModelKind::Linear) {
        g.W1 = dscores.transpose() * X;
        g.b1 = dscores.colwise().sum().transpose();
    } else {
        g.W2 = dscores.transpose() * hidden;
        g.b2 = dscores.colwise().sum().transpose();
        Matrix dpre = (dscores * m.W2).cwiseProduct((pre.array() > 0.0).cast<double>().matrix());
        g.W1 = dpre.transpose() * X;
        g.b1 = dpre.colwise().sum().transpose();
    }
    return {loss * inv_n, std::move(g)};
}

struct OptState {
    ScoreModel velocity;
    double momentum = 0.9;
    double weight_decay = 2e-4;
    double learning_rate = 0.1;
};

inline OptState make_opt_state(const ScoreModel& m, double lr, double momentum = 0.9, double weight_decay = 2e-4) {
    detail::require(lr > 0.0, "optimizer: learning rate must be positive");
    detail::require(momentum >= 0.0 && momentum < 1.0, "optimizer: momentum must lie in [0,1)");
    detail::require(weight_decay >= 0.0, "optimizer: weight decay must be nonnegative");
    return {m.zeros_like(), momentum, weight_decay, lr};
}

/// v <- momentum v + g + wd theta;  theta <- theta - lr v
inline void sgd_step(ScoreModel& m, const ScoreModel& grads, OptState& opt) {
    auto step = [&](auto& theta, const auto& g, auto& v) {
        v = opt.momentum * v + g + opt.weight_decay * theta;
        theta -= opt.learning_rate * v;
    };
    step(m.W1, grads.W1, opt.velocity.W1);
    step(m.b1, grads.b1, opt.velocity.b1);
    if (m.kind == ModelKind::OneHiddenLayer) {
        step(m.W2, grads.W2, opt.velocity.W2);
        step(m.b2, grads.b2, opt.velocity.b2);
    }
}

struct MultiStepSchedule {
    double base = 0.1;
    std::vector<int> milestones{160, 180};
    double decay = 0.1;

    void validate() const {
        if (!(base > 0.0)) throw ConfigError("learning rate must be positive");
        if (!(decay > 0.0)) throw ConfigError("learning rate decay must be positive");
        for (std::size_t i = 1; i < milestones.size(); ++i)
            if (milestones[i] <= milestones[i - 1]) throw ConfigError("learning rate milestones must be strictly increasing");
    }
};

/// base * decay^(number of milestones <= t)
inline double learning_rate_at(int t, const MultiStepSchedule& s) {
    s.validate();
    detail::require(t >= 0, "learning_rate_at: negative epoch");
    const auto passed = std::count_if(s.milestones.begin(), s.milestones.end(), [t](int m) { return m <= t; });
    return s.base * std::pow(s.decay, static_cast<double>(passed));
}

/// Frobenius norm of the weights (linear), or the product of per-layer
/// Frobenius norms (hidden). Used as the norm bound B of the hypothesis class.
inline double parameter_norm(const ScoreModel& m) {
    if (m.kind == ModelKind::Linear) return m.W1.norm();
    return m.W1.norm() * m.W2.norm();
}

namespace detail {

template <class Json>
Json matrix_json(const Matrix& w) {
    return Json{{"rows", w.rows()}, {"cols", w.cols()}, {"data", std::vector<double>(w.data(), w.data() + w.size())}};
}

inline Matrix matrix_from_json(const nlohmann::json& j) {
    const auto rows = j.at("rows").get<Eigen::Index>();
    const auto cols = j.at("cols").get<Eigen::Index>();
    const auto data = j.at("data").get<std::vector<double>>();
    if (static_cast<Eigen::Index>(data.size()) != rows * cols) throw ParseError("checkpoint: tensor size mismatch");
    return Eigen::Map<const Matrix>(data.data(), rows, cols);
}

}  // namespace detail

inline nlohmann::ordered_json checkpoint_json(const ScoreModel& m) {
    using J = nlohmann::ordered_json;
    J j{{"kind", to_string(m.kind)},
        {"input_dim", m.input_dim()},
        {"num_classes", m.num_classes()},
        {"hidden_width", m.hidden_width()},
        {"W1", detail::matrix_json<J>(m.W1)},
        {"b1", to_std(m.b1)}};
    if (m.kind == ModelKind::OneHiddenLayer) {
        j["W2"] = detail::matrix_json<J>(m.W2);
        j["b2"] = to_std(m.b2);
    }
    return j;
}

inline ScoreModel model_from_json(const nlohmann::json& j) {
    try {
        ScoreModel m;
        m.kind = parse_model_kind(j.at("kind").get<std::string>());
        m.W1 = detail::matrix_from_json(j.at("W1"));
        m.b1 = from_std(j.at("b1").get<std::vector<double>>());
        if (m.kind == ModelKind::OneHiddenLayer) {
            m.W2 = detail::matrix_from_json(j.at("W2"));
            m.b2 = from_std(j.at("b2").get<std::vector<double>>());
        }
        validate(m);
        if (m.input_dim() != j.at("input_dim").get<Eigen::Index>() ||
            m.num_classes() != j.at("num_classes").get<Eigen::Index>())
            throw ParseError("checkpoint: shape metadata disagrees with tensors");
        return m;
    } catch (const nlohmann::json::exception& e) {
        throw ParseError(std::string("checkpoint: ") + e.what());
    } catch (const InvalidInput& e) {
        throw ParseError(std::string("checkpoint: ") + e.what());
    }
}

}  // namespace vslab
