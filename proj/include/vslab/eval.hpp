#pragma once

// Metrics: balanced (class-averaged) top-1 accuracy, empirical and balanced
// surrogate risks, and the minority/majority accuracy ratio.

#include "core.hpp"
#include "data.hpp"
#include "losses.hpp"
#include "model.hpp"

#include <json.hpp>

#include <limits>
#include <span>
#include <utility>
#include <vector>

namespace vslab {

/// Index of the largest entry; ties go to the lowest index.
inline Eigen::Index argmax_lowest(const Eigen::Ref<const Eigen::RowVectorXd>& row) {
    Eigen::Index best = 0;
    for (Eigen::Index j = 1; j < row.size(); ++j)
        if (row[j] > row[best]) best = j;
    return best;
}

struct BalancedAccuracy {
    double value = 0.0;
    Vector per_class;
};

inline BalancedAccuracy balanced_accuracy(const Matrix& scores, std::span<const Label> labels) {
    detail::require(scores.rows() == static_cast<Eigen::Index>(labels.size()), "balanced_accuracy: size mismatch");
    const auto C = scores.cols();
    Vector hits = Vector::Zero(C);
    Vector totals = Vector::Zero(C);
    for (Eigen::Index i = 0; i < scores.rows(); ++i) {
        const Label y = labels[static_cast<std::size_t>(i)];
        detail::require(y >= 0 && y < C, "balanced_accuracy: label out of range");
        totals[y] += 1.0;
        if (argmax_lowest(scores.row(i)) == y) hits[y] += 1.0;
    }
    for (Eigen::Index y = 0; y < C; ++y)
        detail::require(totals[y] > 0.0, "balanced_accuracy: class " + std::to_string(y) + " absent from labels");
    BalancedAccuracy out;
    out.per_class = hits.cwiseQuotient(totals);
    out.value = out.per_class.mean();
    return out;
}

/// Mean VS loss per class (classes with no samples get 0).
inline Vector per_class_risks(const Matrix& scores, std::span<const Label> labels, const VSParams& params) {
    const auto C = params.num_classes();
    Vector sum = Vector::Zero(C);
    Vector cnt = Vector::Zero(C);
    for (Eigen::Index i = 0; i < scores.rows(); ++i) {
        const Label y = labels[static_cast<std::size_t>(i)];
        sum[y] += vs_loss(scores.row(i).transpose(), y, params);
        cnt[y] += 1.0;
    }
    for (Eigen::Index y = 0; y < C; ++y)
        if (cnt[y] > 0.0) sum[y] /= cnt[y];
    return sum;
}

inline double mean_loss(const Matrix& scores, std::span<const Label> labels, const VSParams& params) {
    detail::require(scores.rows() > 0, "mean_loss: empty set");
    double acc = 0.0;
    for (Eigen::Index i = 0; i < scores.rows(); ++i)
        acc += vs_loss(scores.row(i).transpose(), labels[static_cast<std::size_t>(i)], params);
    return acc / static_cast<double>(scores.rows());
}

struct SurrogateRisks {
    double empirical = 0.0;  ///< mean loss on the (imbalanced) training set
    double balanced = 0.0;   ///< mean loss on the balanced test set
};

inline SurrogateRisks surrogate_risks(const ScoreModel& model, const LabeledDataset& train,
                                      const LabeledDataset& balanced_test, const VSParams& params) {
    return {mean_loss(forward_batch(model, train.features), train.labels, params),
            mean_loss(forward_batch(model, balanced_test.features), balanced_test.labels, params)};
}

enum class GroupSplit { TopHalf, Custom };

struct AccuracyRatio {
    double value = 1.0;
    bool zero_majority = false;  ///< majority accuracy was 0; value is +inf
};

/// mean minority accuracy / mean majority accuracy. Classes are assumed in
/// canonical (count-descending) order; TopHalf puts ceil(C/2) classes in the
/// majority group, Custom puts the first `majority_size`.
inline AccuracyRatio min_maj_ratio(const Vector& per_class_accuracy, std::span<const long> counts,
                                   GroupSplit split = GroupSplit::TopHalf, Eigen::Index majority_size = 0) {
    const auto C = per_class_accuracy.size();
    detail::require(static_cast<Eigen::Index>(counts.size()) == C, "min_maj_ratio: length mismatch");
    for (std::size_t i = 1; i < counts.size(); ++i)
        detail::require(counts[i] <= counts[i - 1], "min_maj_ratio: counts must be in canonical order");
    const Eigen::Index k = split == GroupSplit::TopHalf ? (C + 1) / 2 : majority_size;
    detail::require(k >= 1 && k < C, "min_maj_ratio: both groups must be nonempty");
    const double maj = per_class_accuracy.head(k).mean();
    const double min = per_class_accuracy.tail(C - k).mean();
    if (maj <= 0.0) return {std::numeric_limits<double>::infinity(), true};
    return {min / maj, false};
}

struct EvalReport {
    double balanced_accuracy = 0.0;
    Vector per_class_accuracy;
    double balanced_surrogate_risk = 0.0;
    double empirical_risk = 0.0;
    AccuracyRatio acc_ratio_min_maj;
};

inline EvalReport evaluate(const ScoreModel& model, const LabeledDataset& train, const LabeledDataset& test,
                           const VSParams& params) {
    const auto acc = balanced_accuracy(forward_batch(model, test.features), test.labels);
    const auto risks = surrogate_risks(model, train, test, params);
    return {acc.value, acc.per_class, risks.balanced, risks.empirical, min_maj_ratio(acc.per_class, train.counts)};
}

inline nlohmann::ordered_json ratio_json(const AccuracyRatio& r) {
    if (r.zero_majority) return nullptr;
    return r.value;
}

inline nlohmann::ordered_json to_ordered_json(const EvalReport& r) {
    return {{"balanced_accuracy", r.balanced_accuracy},
            {"per_class_accuracy", to_std(r.per_class_accuracy)},
            {"balanced_surrogate_risk", r.balanced_surrogate_risk},
            {"empirical_risk", r.empirical_risk},
            {"acc_ratio_min_maj", ratio_json(r.acc_ratio_min_maj)},
            {"acc_ratio_zero_majority", r.acc_ratio_min_maj.zero_majority},
            {"group_split", "top-half"},
            {"test_distribution", "balanced mixture, uniform class sampling"}};
}

}  // namespace vslab
