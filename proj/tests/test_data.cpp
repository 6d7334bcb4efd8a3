#include <vslab/data.hpp>

#include <gtest/gtest.h>

#include "scratch_dir.hpp"

#include <algorithm>
#include <numeric>
#include <set>

using namespace vslab;

namespace {

GaussianMixtureSpec mixture(int C, int d, double sigma = 1.0, std::uint64_t seed = 11) {
    return {random_means(C, d, 2.0, 5), sigma, seed};
}

}  // namespace

TEST(ClassCounts, LongTailed) {
    const auto c = class_counts({ImbalanceKind::LongTailed, 10, 5000, 100.0});
    ASSERT_EQ(c.size(), 10U);
    EXPECT_EQ(c.front(), 5000);
    EXPECT_EQ(c.back(), 50);
    EXPECT_EQ(c, (std::vector<long>{5000, 2997, 1797, 1077, 646, 387, 232, 139, 83, 50}));
}

TEST(ClassCounts, Step) {
    const auto c = class_counts({ImbalanceKind::Step, 10, 5000, 100.0});
    EXPECT_EQ(c, (std::vector<long>{5000, 5000, 5000, 5000, 5000, 50, 50, 50, 50, 50}));
    // odd C puts the extra class in the head
    const auto odd = class_counts({ImbalanceKind::Step, 5, 100, 10.0});
    EXPECT_EQ(odd, (std::vector<long>{100, 100, 100, 10, 10}));
}

TEST(ClassCounts, RhoOneIsBalanced) {
    for (auto kind : {ImbalanceKind::LongTailed, ImbalanceKind::Step}) {
        const auto c = class_counts({kind, 7, 321, 1.0});
        EXPECT_TRUE(std::all_of(c.begin(), c.end(), [](long n) { return n == 321; }));
    }
}

TEST(ClassCounts, ClampedToOne) {
    const auto c = class_counts({ImbalanceKind::LongTailed, 5, 10, 1000.0});
    EXPECT_EQ(c.back(), 1);
    EXPECT_TRUE(std::all_of(c.begin(), c.end(), [](long n) { return n >= 1; }));
}

TEST(ClassCounts, RejectsBadProfiles) {
    EXPECT_THROW(class_counts({ImbalanceKind::LongTailed, 1, 100, 10.0}), InvalidInput);
    EXPECT_THROW(class_counts({ImbalanceKind::LongTailed, 10, 100, 0.5}), InvalidInput);
    EXPECT_THROW(class_counts({ImbalanceKind::Step, 10, 0, 10.0}), InvalidInput);
    EXPECT_THROW(parse_imbalance_kind("zipf"), InvalidInput);
}

TEST(ClassCounts, LongTailedPropertySweep) {
    for (int C : {2, 3, 5, 10, 20, 50})
        for (long head : {100L, 1000L, 5000L})
            for (double rho : {1.5, 2.0, 10.0, 50.0, 100.0, 200.0}) {
                const auto c = class_counts({ImbalanceKind::LongTailed, C, head, rho});
                for (std::size_t i = 1; i < c.size(); ++i) EXPECT_LE(c[i], c[i - 1]);
                const double nc = static_cast<double>(c.back());
                const double ratio = static_cast<double>(c.front()) / nc;
                EXPECT_GE(ratio, rho * (1.0 - 1.0 / nc) - 1e-12) << C << " " << head << " " << rho;
                EXPECT_LE(ratio, rho * (1.0 + 1.0 / nc) + 1e-12) << C << " " << head << " " << rho;
                // strictly decreasing whenever consecutive targets are more than one unit apart
                if (head / rho * (std::pow(rho, 1.0 / (C - 1)) - 1.0) > 1.0)
                    for (std::size_t i = 1; i < c.size(); ++i) EXPECT_LT(c[i], c[i - 1]);
            }
}

TEST(Generate, Bookkeeping) {
    const std::vector<long> counts{3, 2};
    const auto ds = generate(mixture(2, 2), counts);
    EXPECT_EQ(ds.size(), 5);
    EXPECT_EQ(ds.dim(), 2);
    EXPECT_EQ(ds.counts, counts);
    EXPECT_NEAR(ds.priors[0], 0.6, 1e-15);
    EXPECT_NEAR(ds.priors[1], 0.4, 1e-15);
    EXPECT_NEAR(ds.priors.sum(), 1.0, 1e-12);
}

TEST(Generate, Deterministic) {
    const std::vector<long> counts{40, 7, 3};
    const auto a = generate(mixture(3, 4), counts);
    const auto b = generate(mixture(3, 4), counts);
    EXPECT_EQ(a.features, b.features);
    EXPECT_EQ(a.labels, b.labels);
    const auto c = generate(mixture(3, 4, 1.0, 12), counts);
    EXPECT_NE(a.features, c.features);
}

TEST(Generate, TinySigmaCollapsesToMeans) {
    const auto spec = mixture(3, 2, 1e-300);
    const auto ds = generate(spec, std::vector<long>{4, 3, 2});
    for (Eigen::Index i = 0; i < ds.size(); ++i)
        EXPECT_EQ(Vector(ds.features.row(i).transpose()),
                  Vector(spec.class_means.row(ds.labels[static_cast<std::size_t>(i)]).transpose()));
}

TEST(Generate, EmpiricalMeansConverge) {
    const auto spec = mixture(2, 3, 0.7);
    const long n = 10000;
    const auto ds = generate(spec, std::vector<long>{n, n});
    for (int y = 0; y < 2; ++y) {
        Vector sum = Vector::Zero(3);
        for (Eigen::Index i = 0; i < ds.size(); ++i)
            if (ds.labels[static_cast<std::size_t>(i)] == y) sum += ds.features.row(i).transpose();
        const Vector mean = sum / static_cast<double>(n);
        for (int k = 0; k < 3; ++k) EXPECT_NEAR(mean[k], spec.class_means(y, k), 5.0 * 0.7 / std::sqrt(double(n)));
    }
}

TEST(Generate, RejectsMismatchedSpec) {
    EXPECT_THROW(generate(mixture(3, 2), std::vector<long>{1, 2}), InvalidInput);
    auto bad = mixture(2, 2);
    bad.sigma = 0.0;
    EXPECT_THROW(generate(bad, std::vector<long>{1, 1}), InvalidInput);
}

TEST(BalancedTest, ExactPerClassCounts) {
    const auto ds = generate_balanced_test(mixture(3, 2), 4, 99);
    EXPECT_EQ(ds.size(), 12);
    EXPECT_EQ(ds.counts, (std::vector<long>{4, 4, 4}));
    for (int y = 0; y < 3; ++y) EXPECT_NEAR(ds.priors[y], 1.0 / 3.0, 1e-15);
    const auto one = generate_balanced_test(mixture(3, 2), 1, 99);
    EXPECT_EQ(one.counts, (std::vector<long>{1, 1, 1}));
    EXPECT_THROW(generate_balanced_test(mixture(3, 2), 0, 99), InvalidInput);
}

TEST(BalancedTest, DisjointFromTrainingDraws) {
    const auto spec = mixture(2, 3);
    const auto train = generate(spec, std::vector<long>{50, 50});
    const auto test = generate_balanced_test(spec, 50, spec.seed);
    std::set<std::vector<double>> rows;
    for (Eigen::Index i = 0; i < train.size(); ++i)
        rows.insert(to_std(train.features.row(i).transpose()));
    for (Eigen::Index i = 0; i < test.size(); ++i)
        EXPECT_EQ(rows.count(to_std(test.features.row(i).transpose())), 0U);
}

TEST(MakeDataset, RelabelsByCount) {
    Matrix x(4, 1);
    x << 0, 1, 2, 3;
    const auto c = make_dataset(x, Labels{0, 1, 1, 1}, 2);
    EXPECT_EQ(c.dataset.counts, (std::vector<long>{3, 1}));
    EXPECT_EQ(c.dataset.labels, (Labels{1, 0, 0, 0}));
    EXPECT_EQ(c.original_label, (std::vector<int>{1, 0}));
}

TEST(Csv, RoundTripIsIdentity) {
    ScratchDir dir;
    const auto ds = generate(mixture(3, 4), std::vector<long>{9, 5, 2});
    save_csv(ds, dir / "d.csv");
    const auto back = load_csv(dir / "d.csv");
    EXPECT_EQ(back.dataset.features, ds.features);
    EXPECT_EQ(back.dataset.labels, ds.labels);
    EXPECT_EQ(back.dataset.counts, ds.counts);
    EXPECT_EQ(back.original_label, (std::vector<int>{0, 1, 2}));
}

TEST(Csv, TwoRows) {
    ScratchDir dir;
    spit(dir / "t.csv", "f0,f1,label\n0.5,1,0\n-2,3e-1,1\n");
    const auto c = load_csv(dir / "t.csv");
    EXPECT_EQ(c.dataset.size(), 2);
    EXPECT_EQ(c.dataset.num_classes(), 2);
    EXPECT_DOUBLE_EQ(c.dataset.features(1, 1), 0.3);
}

TEST(Csv, SwapsClassesWhenMinorityComesFirst) {
    ScratchDir dir;
    spit(dir / "t.csv", "f0,label\n1,0\n2,1\n3,1\n");
    const auto c = load_csv(dir / "t.csv");
    EXPECT_EQ(c.dataset.counts, (std::vector<long>{2, 1}));
    EXPECT_EQ(c.dataset.labels, (Labels{1, 0, 0}));
    EXPECT_EQ(c.original_label, (std::vector<int>{1, 0}));
}

TEST(Csv, CrlfAndBom) {
    ScratchDir dir;
    spit(dir / "t.csv", "\xEF\xBB\xBF" "f0,label\r\n1,0\r\n2,1\r\n");
    const auto c = load_csv(dir / "t.csv");
    EXPECT_EQ(c.dataset.size(), 2);
}

TEST(Csv, ErrorsNameTheRow) {
    ScratchDir dir;
    auto line_of = [&](const std::string& text, std::optional<int> C = std::nullopt) {
        spit(dir / "e.csv", text);
        try {
            load_csv(dir / "e.csv", C);
        } catch (const ParseError& e) {
            return e.line();
        }
        return -100L;
    };
    EXPECT_EQ(line_of("f0,label\n1,0\n2,7\n", 3), 3);
    EXPECT_EQ(line_of("f0,f1,label\n1,2,0\n1,1\n"), 3);
    EXPECT_EQ(line_of("f0,label\n1,0\n1,0.5\n"), 3);
    EXPECT_EQ(line_of("f0,label\n1,0\n1,-1\n"), 3);
    EXPECT_EQ(line_of("f0,label\nx,0\n"), 2);
    EXPECT_EQ(line_of("f0,f1\n1,0\n"), 1);
    EXPECT_THROW(load_csv(dir / "missing.csv"), ParseError);
}

TEST(Minibatches, BlockSizes) {
    const auto b = minibatches(5, 2, 1);
    ASSERT_EQ(b.size(), 3U);
    EXPECT_EQ(b[0].size(), 2U);
    EXPECT_EQ(b[1].size(), 2U);
    EXPECT_EQ(b[2].size(), 1U);
}

TEST(Minibatches, FullBatchIsPermutation) {
    const auto b = minibatches(17, 17, 3);
    ASSERT_EQ(b.size(), 1U);
    auto v = b[0];
    std::sort(v.begin(), v.end());
    for (Eigen::Index i = 0; i < 17; ++i) EXPECT_EQ(v[static_cast<std::size_t>(i)], i);
}

TEST(Minibatches, DeterministicPerSeed) {
    EXPECT_EQ(minibatches(100, 7, 42), minibatches(100, 7, 42));
    EXPECT_NE(minibatches(100, 7, 42), minibatches(100, 7, 43));
    EXPECT_THROW(minibatches(5, 6, 0), InvalidInput);
    EXPECT_THROW(minibatches(5, 0, 0), InvalidInput);
}

TEST(Manifest, Fields) {
    const auto ds = generate(mixture(2, 3), std::vector<long>{4, 2});
    EXPECT_EQ(manifest(ds, 17).dump(), R"({"n":6,"d":3,"c":2,"counts":[4,2],"seed":17})");
}
