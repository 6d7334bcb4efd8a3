#pragma once

// Imbalanced training sets: class-count profiles (long-tailed / step),
// Gaussian-mixture synthesis, CSV ingestion, and minibatch shuffling.
//
// Every LabeledDataset is kept in canonical label order: class 0 is the
// largest, counts never increase with the class index.

#include "core.hpp"
#include "losses.hpp"

#include <json.hpp>

#include <algorithm>
#include <cctype>
#include <charconv>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <numeric>
#include <optional>
#include <random>
#include <sstream>
#include <string>
#include <vector>

namespace vslab {

enum class ImbalanceKind { LongTailed, Step };

inline ImbalanceKind parse_imbalance_kind(std::string_view s) {
    if (s == "lt" || s == "LT" || s == "long-tailed") return ImbalanceKind::LongTailed;
    if (s == "step" || s == "Step") return ImbalanceKind::Step;
    throw InvalidInput("unknown imbalance kind '" + std::string(s) + "'");
}

inline const char* to_string(ImbalanceKind k) { return k == ImbalanceKind::LongTailed ? "lt" : "step"; }

struct ImbalanceProfile {
    ImbalanceKind kind = ImbalanceKind::LongTailed;
    int num_classes = 10;
    long head_count = 1000;
    double rho = 100.0;  ///< N_1 / N_C
};

/// Per-class sample counts, nonincreasing in the class index.
///   LT:   N_y = round(N_1 * rho^(-y/(C-1)))
///   Step: ceil(C/2) head classes at N_1, the rest at round(N_1 / rho)
/// Every count is clamped to at least 1.
inline std::vector<long> class_counts(const ImbalanceProfile& profile) {
    const int C = profile.num_classes;
    detail::require(C >= 2, "class_counts: need at least 2 classes");
    detail::require(profile.rho >= 1.0 && std::isfinite(profile.rho), "class_counts: rho must be >= 1");
    detail::require(profile.head_count >= 1, "class_counts: head count must be >= 1");

    std::vector<long> counts(static_cast<std::size_t>(C));
    const double head = static_cast<double>(profile.head_count);
    for (int y = 0; y < C; ++y) {
        double n = head;
        if (profile.kind == ImbalanceKind::LongTailed) {
            n = head * std::pow(profile.rho, -static_cast<double>(y) / (C - 1));
        } else if (y >= (C + 1) / 2) {
            n = head / profile.rho;
        }
        counts[static_cast<std::size_t>(y)] = std::max(1L, std::lround(n));
    }
    return counts;
}

struct LabeledDataset {
    Matrix features;            ///< N x d
    Labels labels;              ///< length N, values in [0, C)
    std::vector<long> counts;   ///< N_y, nonincreasing
    Vector priors;              ///< pi_y = N_y / N

    Eigen::Index size() const noexcept { return features.rows(); }
    Eigen::Index dim() const noexcept { return features.cols(); }
    int num_classes() const noexcept { return static_cast<int>(counts.size()); }
    double imbalance_ratio() const { return static_cast<double>(counts.front()) / counts.back(); }
};

struct CanonicalDataset {
    LabeledDataset dataset;
    /// original_label[new] = label the class carried before relabeling
    std::vector<int> original_label;
};

/// Builds a dataset and relabels classes so counts are nonincreasing.
/// Ties keep their original relative order.
inline CanonicalDataset make_dataset(Matrix features, Labels labels, int num_classes) {
    detail::require(num_classes >= 2, "dataset: need at least 2 classes");
    detail::require(features.rows() == static_cast<Eigen::Index>(labels.size()),
                    "dataset: feature rows and label count differ");
    detail::require(features.allFinite(), "dataset: non-finite feature");

    std::vector<long> raw(static_cast<std::size_t>(num_classes), 0);
    for (Label y : labels) {
        detail::require(y >= 0 && y < num_classes, "dataset: label out of range");
        ++raw[static_cast<std::size_t>(y)];
    }
    std::vector<int> order(static_cast<std::size_t>(num_classes));
    std::iota(order.begin(), order.end(), 0);
    std::stable_sort(order.begin(), order.end(), [&](int a, int b) { return raw[a] > raw[b]; });

    std::vector<int> relabel(static_cast<std::size_t>(num_classes));
    for (int i = 0; i < num_classes; ++i) relabel[static_cast<std::size_t>(order[i])] = i;
    for (Label& y : labels) y = relabel[static_cast<std::size_t>(y)];

    CanonicalDataset out;
    out.original_label = order;
    auto& ds = out.dataset;
    ds.features = std::move(features);
    ds.labels = std::move(labels);
    ds.counts.resize(static_cast<std::size_t>(num_classes));
    for (int i = 0; i < num_classes; ++i) ds.counts[static_cast<std::size_t>(i)] = raw[static_cast<std::size_t>(order[i])];
    ds.priors = Vector(num_classes);
    const double n = static_cast<double>(ds.labels.size());
    for (int i = 0; i < num_classes; ++i) ds.priors[i] = n > 0 ? ds.counts[static_cast<std::size_t>(i)] / n : 0.0;
    return out;
}

struct GaussianMixtureSpec {
    Matrix class_means;  ///< C x d
    double sigma = 1.0;  ///< isotropic standard deviation
    std::uint64_t seed = 0;

    void validate() const {
        detail::require(class_means.rows() >= 2, "mixture: need at least 2 classes");
        detail::require(class_means.allFinite(), "mixture: non-finite mean");
        detail::require(sigma > 0.0 && std::isfinite(sigma), "mixture: sigma must be positive");
    }
};

/// Class means at distance `radius` from the origin along random directions.
inline Matrix random_means(int num_classes, int dim, double radius, std::uint64_t seed) {
    detail::require(num_classes >= 2 && dim >= 1, "random_means: bad shape");
    std::mt19937_64 rng(derive_seed(seed, "means"));
    std::normal_distribution<double> normal(0.0, 1.0);
    Matrix m(num_classes, dim);
    for (int y = 0; y < num_classes; ++y) {
        for (int k = 0; k < dim; ++k) m(y, k) = normal(rng);
        m.row(y) *= radius / m.row(y).norm();
    }
    return m;
}

namespace detail {

inline LabeledDataset draw_mixture(const GaussianMixtureSpec& spec, std::span<const long> counts, std::uint64_t stream_seed) {
    spec.validate();
    require(static_cast<Eigen::Index>(counts.size()) == spec.class_means.rows(),
            "mixture: counts length does not match number of means");
    const long n = std::accumulate(counts.begin(), counts.end(), 0L);
    const auto d = spec.class_means.cols();
    Matrix x(n, d);
    Labels labels;
    labels.reserve(static_cast<std::size_t>(n));
    std::mt19937_64 rng(stream_seed);
    std::normal_distribution<double> normal(0.0, 1.0);
    Eigen::Index row = 0;
    for (std::size_t y = 0; y < counts.size(); ++y) {
        require(counts[y] >= 0, "mixture: negative count");
        for (long i = 0; i < counts[y]; ++i, ++row) {
            for (Eigen::Index k = 0; k < d; ++k)
                x(row, k) = spec.class_means(static_cast<Eigen::Index>(y), k) + spec.sigma * normal(rng);
            labels.push_back(static_cast<Label>(y));
        }
    }
    return make_dataset(std::move(x), std::move(labels), static_cast<int>(counts.size())).dataset;
}

}  // namespace detail

/// counts[y] isotropic Gaussian draws around class_means[y]. Deterministic in spec.seed.
inline LabeledDataset generate(const GaussianMixtureSpec& spec, std::span<const long> counts) {
    return detail::draw_mixture(spec, counts, derive_seed(spec.seed, "train-draws"));
}

/// Uniform-class test set from the same mixture, drawn from a stream
/// disjoint from the training stream.
inline LabeledDataset generate_balanced_test(const GaussianMixtureSpec& spec, long per_class, std::uint64_t seed) {
    detail::require(per_class >= 1, "balanced test: per_class must be >= 1");
    const std::vector<long> counts(static_cast<std::size_t>(spec.class_means.rows()), per_class);
    return detail::draw_mixture(spec, counts, derive_seed(seed, "test-draws"));
}

/// Writes `f0,...,f{d-1},label` with round-trip exact decimals.
inline void save_csv(const LabeledDataset& ds, const std::string& path) {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw ConfigError("cannot write " + path);
    for (Eigen::Index k = 0; k < ds.dim(); ++k) out << 'f' << k << ',';
    out << "label\n";
    char buf[32];
    for (Eigen::Index i = 0; i < ds.size(); ++i) {
        for (Eigen::Index k = 0; k < ds.dim(); ++k) {
            std::snprintf(buf, sizeof buf, "%.17g", ds.features(i, k));
            out << buf << ',';
        }
        out << ds.labels[static_cast<std::size_t>(i)] << '\n';
    }
}

namespace detail {

inline std::vector<std::string> split_csv_line(const std::string& line) {
    std::vector<std::string> cells;
    std::string cell;
    std::istringstream ss(line);
    while (std::getline(ss, cell, ',')) cells.push_back(cell);
    if (!line.empty() && line.back() == ',') cells.emplace_back();
    return cells;
}

inline std::string trim(std::string s) {
    auto not_space = [](unsigned char c) { return !std::isspace(c); };
    s.erase(s.begin(), std::find_if(s.begin(), s.end(), not_space));
    s.erase(std::find_if(s.rbegin(), s.rend(), not_space).base(), s.end());
    return s;
}

}  // namespace detail

/// Parses the CSV contract. `declared_classes`, when given, bounds the label
/// range; otherwise C = max label + 1.
inline CanonicalDataset load_csv(const std::string& path, std::optional<int> declared_classes = std::nullopt) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw ParseError("cannot open " + path);

    std::string line;
    long lineno = 0;
    auto next_line = [&]() -> bool {
        if (!std::getline(in, line)) return false;
        ++lineno;
        if (!line.empty() && line.back() == '\r') line.pop_back();
        return true;
    };
    if (!next_line()) throw ParseError("empty file", 1);
    if (lineno == 1 && line.rfind("\xEF\xBB\xBF", 0) == 0) line.erase(0, 3);

    const auto header = detail::split_csv_line(line);
    if (header.empty() || detail::trim(header.back()) != "label")
        throw ParseError("missing label column (last header cell must be 'label')", 1);
    const std::size_t d = header.size() - 1;

    std::vector<double> values;
    Labels labels;
    int max_label = -1;
    while (next_line()) {
        if (detail::trim(line).empty()) continue;
        const auto cells = detail::split_csv_line(line);
        if (cells.size() != header.size())
            throw ParseError("ragged row: expected " + std::to_string(header.size()) + " cells, got " +
                                 std::to_string(cells.size()),
                             lineno);
        for (std::size_t k = 0; k < d; ++k) {
            const std::string c = detail::trim(cells[k]);
            double v = 0.0;
            const auto [ptr, ec] = std::from_chars(c.data(), c.data() + c.size(), v);
            if (ec != std::errc() || ptr != c.data() + c.size() || c.empty() || !std::isfinite(v))
                throw ParseError("feature '" + c + "' is not a finite decimal", lineno);
            values.push_back(v);
        }
        const std::string lc = detail::trim(cells.back());
        long y = -1;
        const auto [ptr, ec] = std::from_chars(lc.data(), lc.data() + lc.size(), y);
        if (ec != std::errc() || ptr != lc.data() + lc.size() || lc.empty() || y < 0)
            throw ParseError("label '" + lc + "' is not a nonnegative integer", lineno);
        if (declared_classes && y >= *declared_classes)
            throw ParseError("label " + lc + " out of range for " + std::to_string(*declared_classes) + " classes",
                             lineno);
        if (y > 1'000'000) throw ParseError("label " + lc + " implausibly large", lineno);
        labels.push_back(static_cast<Label>(y));
        max_label = std::max(max_label, static_cast<int>(y));
    }
    const int C = declared_classes.value_or(max_label + 1);
    if (C < 2) throw ParseError("need at least 2 classes", lineno);

    Matrix x(static_cast<Eigen::Index>(labels.size()), static_cast<Eigen::Index>(d));
    if (!values.empty()) x = Eigen::Map<const Matrix>(values.data(), x.rows(), x.cols());
    return make_dataset(std::move(x), std::move(labels), C);
}

inline nlohmann::ordered_json manifest(const LabeledDataset& ds, std::uint64_t seed) {
    return {{"n", ds.size()}, {"d", ds.dim()}, {"c", ds.num_classes()}, {"counts", ds.counts}, {"seed", seed}};
}

/// Shuffled permutation of [0, n) cut into ceil(n/m) blocks; the last may be short.
inline std::vector<std::vector<Eigen::Index>> minibatches(Eigen::Index n, Eigen::Index batch_size,
                                                          std::uint64_t epoch_seed) {
    detail::require(batch_size >= 1 && batch_size <= n, "minibatches: need 1 <= m <= N");
    std::vector<Eigen::Index> perm(static_cast<std::size_t>(n));
    std::iota(perm.begin(), perm.end(), Eigen::Index{0});
    std::mt19937_64 rng(epoch_seed);
    std::shuffle(perm.begin(), perm.end(), rng);

    std::vector<std::vector<Eigen::Index>> blocks;
    blocks.reserve(static_cast<std::size_t>((n + batch_size - 1) / batch_size));
    for (Eigen::Index start = 0; start < n; start += batch_size) {
        const auto stop = std::min(n, start + batch_size);
        blocks.emplace_back(perm.begin() + start, perm.begin() + stop);
    }
    return blocks;
}

inline Matrix select_rows(const Matrix& m, std::span<const Eigen::Index> rows) {
    Matrix out(static_cast<Eigen::Index>(rows.size()), m.cols());
    for (std::size_t i = 0; i < rows.size(); ++i) out.row(static_cast<Eigen::Index>(i)) = m.row(rows[i]);
    return out;
}

}  // namespace vslab
