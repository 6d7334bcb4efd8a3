#include <vslab/commands.hpp>

#include <gtest/gtest.h>

#include "scratch_dir.hpp"

#include <cstdlib>
#include <sstream>

using namespace vslab;
using namespace vslab::cli;

namespace {

ExperimentConfig small_config(const std::string& scheme = "CE") {
    ExperimentConfig c;
    c.profile = {ImbalanceKind::LongTailed, 4, 80, 10.0};
    c.dim = 3;
    c.test_per_class = 20;
    c.train.batch_size = 32;
    c.train.milestones = {9};
    c.scheme = scheme;
    c.hyper.epochs = 10;
    c.hyper.t0 = 8;
    return c;
}

std::vector<std::string> lines(const std::string& text) {
    std::vector<std::string> out;
    std::istringstream in(text);
    for (std::string l; std::getline(in, l);) out.push_back(l);
    return out;
}

int run_cli(const std::string& args) {
    const int status = std::system((std::string(VSLAB_CLI_PATH) + " " + args + " >/dev/null 2>&1").c_str());
    return WIFEXITED(status) ? WEXITSTATUS(status) : -1;
}

}  // namespace

TEST(GenData, WritesFilesAndPrintsCounts) {
    ScratchDir dir;
    GenDataOptions o;
    o.config.profile = {ImbalanceKind::LongTailed, 10, 5000, 100.0};
    o.config.test_per_class = 5;
    o.out_dir = dir.path().string();
    std::ostringstream out, err;
    ASSERT_EQ(cmd_gen_data(o, out, err), kExitOk) << err.str();
    EXPECT_NE(out.str().find("counts: 5000,2997,1797,1077,646,387,232,139,83,50"), std::string::npos);
    EXPECT_NE(out.str().find("rho: 100"), std::string::npos);
    const auto train = load_csv(dir / "train.csv").dataset;
    EXPECT_EQ(train.counts.back(), 50);
    const auto manifest = nlohmann::json::parse(slurp(dir / "train.json"));
    EXPECT_EQ(manifest["n"], 12408);
    EXPECT_EQ(manifest["c"], 10);
}

TEST(GenData, RhoOneIsBalanced) {
    ScratchDir dir;
    GenDataOptions o;
    o.config.profile = {ImbalanceKind::LongTailed, 3, 40, 1.0};
    o.out_dir = dir.path().string();
    std::ostringstream out, err;
    ASSERT_EQ(cmd_gen_data(o, out, err), kExitOk);
    EXPECT_EQ(load_csv(dir / "train.csv").dataset.counts, (std::vector<long>{40, 40, 40}));
}

TEST(GenData, OneClassIsUsageError) {
    GenDataOptions o;
    o.config.profile.num_classes = 1;
    std::ostringstream out, err;
    EXPECT_EQ(cmd_gen_data(o, out, err), kExitUsage);
    EXPECT_FALSE(err.str().empty());
    EXPECT_EQ(run_cli("gen-data --classes 1 --out /tmp/vslab_never"), kExitUsage);
}

TEST(GenData, ConflictingFlagsAreUsageErrors) {
    EXPECT_EQ(run_cli("gen-data --kind zipf"), kExitUsage);
    EXPECT_EQ(run_cli("compare-bounds --priors 0.5,0.5 --counts 3,3"), kExitUsage);
    EXPECT_EQ(run_cli("sweep --seeds 1,2 --num-seeds 3"), kExitUsage);
    EXPECT_EQ(run_cli(""), kExitUsage);
}

TEST(Train, SummaryEchoesScheme) {
    ScratchDir dir;
    TrainOptions o;
    o.config = small_config("CE");
    o.out_dir = dir.path().string();
    std::ostringstream out, err;
    ASSERT_EQ(cmd_train(o, out, err), kExitOk) << err.str();
    const auto summary = nlohmann::json::parse(slurp(dir / "summary.json"));
    EXPECT_EQ(summary["scheme"], "CE");
    EXPECT_EQ(summary["schedule"]["name"], "CE");
    EXPECT_EQ(lines(slurp(dir / "epochs.jsonl")).size(), 10U);
    EXPECT_TRUE(std::filesystem::exists(dir.path() / "checkpoint.json"));
    for (const auto& [key, file] : summary["files"].items())
        EXPECT_TRUE(std::filesystem::exists(dir.path() / file.get<std::string>())) << key;
}

TEST(Train, PhasesVisibleInEpochLog) {
    ScratchDir dir;
    TrainOptions o;
    o.config = small_config("VS+TLA+ADRW");
    o.config.hyper.nu = 1.0;
    o.config.hyper.tau = 1.0;
    o.config.hyper.gamma = 0.1;
    o.out_dir = dir.path().string();
    std::ostringstream out, err;
    ASSERT_EQ(cmd_train(o, out, err), kExitOk) << err.str();
    const auto log = lines(slurp(dir / "epochs.jsonl"));
    ASSERT_EQ(log.size(), 10U);
    for (std::size_t t = 0; t < log.size(); ++t) {
        const auto rec = nlohmann::json::parse(log[t]);
        EXPECT_EQ(rec["epoch"], t);
        const auto alpha = rec["params"]["alpha"].get<std::vector<double>>();
        const auto beta = rec["params"]["beta"].get<std::vector<double>>();
        if (t < 8) {
            EXPECT_EQ(rec["phase"], "warmup");
            EXPECT_EQ(alpha, std::vector<double>(4, 1.0));
            EXPECT_LT(beta.back(), 1.0);
        } else {
            EXPECT_EQ(rec["phase"], "terminal");
            EXPECT_GT(alpha.back(), alpha.front());
            EXPECT_EQ(beta, std::vector<double>(4, 1.0));
        }
    }
}

TEST(Train, ByteIdenticalReruns) {
    ScratchDir a, b;
    for (const auto* dir : {&a, &b}) {
        TrainOptions o;
        o.config = small_config("VS+TLA+ADRW");
        o.seed = 5;
        o.out_dir = dir->path().string();
        std::ostringstream out, err;
        ASSERT_EQ(cmd_train(o, out, err), kExitOk);
    }
    for (const char* f : {"summary.json", "epochs.jsonl", "checkpoint.json", "train.csv", "config.json"})
        EXPECT_EQ(slurp(a / f), slurp(b / f)) << f;
}

TEST(Train, ConfigErrorsExitTwo) {
    ScratchDir dir;
    TrainOptions o;
    o.config = small_config("CE+DRW");
    o.config.hyper.t0 = 50;
    o.out_dir = dir.path().string();
    std::ostringstream out, err;
    EXPECT_EQ(cmd_train(o, out, err), kExitUsage);
    o.config = small_config("CE");
    o.config.train.milestones = {5, 3};
    EXPECT_EQ(cmd_train(o, out, err), kExitUsage);
    o.config = small_config("CE");
    o.config.train.lr = -1.0;
    EXPECT_EQ(cmd_train(o, out, err), kExitUsage);
    o.config = small_config("CE");
    o.bounds.delta = 1.5;
    EXPECT_EQ(cmd_train(o, out, err), kExitUsage);
}

TEST(Train, DivergenceExitsThreeWithEpoch) {
    ScratchDir dir;
    spit(dir / "huge.csv", "f0,label\n1e200,0\n-1e200,1\n2e200,0\n");
    TrainOptions o;
    o.config = small_config("CE");
    o.config.train.lr = 1e100;
    o.train_csv = dir / "huge.csv";
    o.out_dir = (dir.path() / "run").string();
    std::ostringstream out, err;
    EXPECT_EQ(cmd_train(o, out, err), kExitNumerical);
    EXPECT_NE(err.str().find("epoch"), std::string::npos);
}

TEST(Train, CsvInput) {
    ScratchDir dir;
    GenDataOptions g;
    g.config = small_config();
    g.out_dir = dir.path().string();
    std::ostringstream out, err;
    ASSERT_EQ(cmd_gen_data(g, out, err), kExitOk);
    TrainOptions o;
    o.config = small_config("LDAM+DRW");
    o.train_csv = dir / "train.csv";
    o.test_csv = dir / "test.csv";
    o.out_dir = (dir.path() / "run").string();
    ASSERT_EQ(cmd_train(o, out, err), kExitOk) << err.str();
    const auto summary = nlohmann::json::parse(slurp(dir / "run/summary.json"));
    EXPECT_EQ(summary["run_config"]["data_source"], "csv");
}

TEST(Train, ConfigFileReproducesRun) {
    ScratchDir dir;
    const std::string a = dir / "a", b = dir / "b";
    ASSERT_EQ(run_cli("train --scheme CE+ADRW --epochs 6 --classes 3 --head 50 --dim 2 --seed 9 --out " + a), 0);
    ASSERT_EQ(run_cli("train --config " + a + "/config.json --out " + b), 0);
    EXPECT_EQ(slurp(a + "/summary.json"), slurp(b + "/summary.json"));
    EXPECT_EQ(run_cli("train --config " + dir / "nope.json"), kExitUsage);
}

TEST(Bounds, DiscoversPathsFromRun) {
    ScratchDir dir;
    TrainOptions o;
    o.config = small_config("VS+DRW");
    o.out_dir = dir.path().string();
    std::ostringstream out, err;
    ASSERT_EQ(cmd_train(o, out, err), kExitOk);
    BoundsOptions b;
    b.run_dir = dir.path().string();
    ASSERT_EQ(cmd_bounds(b, out, err), kExitOk) << err.str();
    const auto r = nlohmann::json::parse(slurp(dir / "bound_report.json"));
    for (const char* key : {"phi", "mu_pointwise", "mu_bsurrogate", "B", "min_margins", "data_dependent_bound",
                            "union_bound", "per_class_terms"})
        EXPECT_TRUE(r.contains(key)) << key;
    const auto summary = nlohmann::json::parse(slurp(dir / "summary.json"));
    EXPECT_EQ(r["params"], summary["final_params"]);
    // recomposition from the serialized fields
    const auto mu = r["mu"].get<std::vector<double>>();
    const auto pi = r["priors"].get<std::vector<double>>();
    double sum = 0.0;
    for (std::size_t y = 0; y < mu.size(); ++y) sum += mu[y] * std::sqrt(pi[y]);
    const double piC = *std::min_element(pi.begin(), pi.end());
    const double C = static_cast<double>(pi.size());
    EXPECT_NEAR(r["data_dependent_bound"].get<double>(),
                r["phi"].get<double>() + r["complexity"]["value"].get<double>() / (C * piC) * sum, 1e-12);
}

TEST(Bounds, ZeroModelGivesZeroB) {
    ScratchDir dir;
    ScoreModel m = make_model(ModelKind::Linear, 3, 4, 0, 1);
    m.W1.setZero();
    spit(dir / "zero.json", checkpoint_json(m).dump());
    GenDataOptions g;
    g.config = small_config();
    g.out_dir = dir.path().string();
    std::ostringstream out, err;
    ASSERT_EQ(cmd_gen_data(g, out, err), kExitOk);
    BoundsOptions b;
    b.checkpoint = dir / "zero.json";
    b.data_csv = dir / "train.csv";
    b.out_path = dir / "report.json";
    ASSERT_EQ(cmd_bounds(b, out, err), kExitOk) << err.str();
    const auto r = nlohmann::json::parse(slurp(dir / "report.json"));
    EXPECT_EQ(r["B"].get<std::vector<double>>(), std::vector<double>(4, 0.0));
    EXPECT_EQ(r["complexity"]["value"], 0.0);
    EXPECT_EQ(r["data_dependent_bound"], r["phi"]);
}

TEST(Bounds, MissingCheckpointAndShapeMismatch) {
    ScratchDir dir;
    GenDataOptions g;
    g.config = small_config();
    g.out_dir = dir.path().string();
    std::ostringstream out, err;
    ASSERT_EQ(cmd_gen_data(g, out, err), kExitOk);
    BoundsOptions b;
    b.checkpoint = dir / "missing.json";
    b.data_csv = dir / "train.csv";
    EXPECT_EQ(cmd_bounds(b, out, err), kExitUsage);
    EXPECT_NE(err.str().find("missing.json"), std::string::npos);
    spit(dir / "wrong.json", checkpoint_json(make_model(ModelKind::Linear, 5, 4, 0, 1)).dump());
    b.checkpoint = dir / "wrong.json";
    EXPECT_EQ(cmd_bounds(b, out, err), kExitUsage);
    BoundsOptions none;
    none.run_dir = dir / "no_such_run";
    EXPECT_EQ(cmd_bounds(none, out, err), kExitUsage);
}

TEST(CompareBounds, KappaGrid) {
    CompareOptions o;
    o.priors = std::vector<double>{0.5, 0.3, 0.15, 0.05};
    o.kappas = {1.0, 1.25, 2.0, 3.0};
    std::ostringstream out, err;
    ASSERT_EQ(cmd_compare_bounds(o, out, err), kExitOk);
    const auto rows = lines(out.str());
    ASSERT_EQ(rows.size(), 5U);
    EXPECT_EQ(rows[0], "kappa,h1,data_dep,union");
    for (std::size_t i = 1; i < rows.size(); ++i) {
        const double h = std::stod(rows[i].substr(rows[i].find(',') + 1));
        EXPECT_GE(h, -1e-9);
        if (i == 1) EXPECT_NEAR(h, 0.0, 1e-9);
    }
}

TEST(CompareBounds, InputErrors) {
    std::ostringstream out, err;
    CompareOptions unsorted;
    unsorted.priors = std::vector<double>{0.2, 0.8};
    EXPECT_EQ(cmd_compare_bounds(unsorted, out, err), kExitUsage);
    CompareOptions single;
    single.priors = std::vector<double>{1.0};
    EXPECT_EQ(cmd_compare_bounds(single, out, err), kExitUsage);
    CompareOptions unnormalized;
    unnormalized.priors = std::vector<double>{0.6, 0.6};
    EXPECT_EQ(cmd_compare_bounds(unnormalized, out, err), kExitUsage);
    CompareOptions counts;
    counts.counts = std::vector<long>{30, 10};
    EXPECT_EQ(cmd_compare_bounds(counts, out, err), kExitOk);
    CompareOptions neither;
    EXPECT_EQ(cmd_compare_bounds(neither, out, err), kExitUsage);
}

TEST(Gradcheck, DefaultPasses) {
    GradcheckOptions o;
    std::ostringstream out, err;
    EXPECT_EQ(cmd_gradcheck(o, out, err), kExitOk);
    EXPECT_NE(out.str().find("PASS"), std::string::npos);
}

TEST(Gradcheck, InjectedWrongSignFails) {
    GradcheckOptions o;
    o.config.loss_grad = [](const Vector& s, Label y, const VSParams& p) { return Vector(-vs_loss_grad(s, y, p)); };
    std::ostringstream out, err;
    EXPECT_EQ(cmd_gradcheck(o, out, err), kExitCheckFailed);
    EXPECT_NE(out.str().find("offending_loss_case"), std::string::npos);
    EXPECT_EQ(out.str().find("offending_model_case"), std::string::npos);

    GradcheckOptions m;
    m.config.model_grad = [](const ScoreModel& mod, const Matrix& X, std::span<const Label> y, const VSParams& p) {
        auto r = loss_and_grads(mod, X, y, p);
        r.second.b1 *= -1.0;
        return r;
    };
    std::ostringstream out2;
    EXPECT_EQ(cmd_gradcheck(m, out2, err), kExitCheckFailed);
    EXPECT_NE(out2.str().find("offending_model_case"), std::string::npos);
}

TEST(Gradcheck, ThousandTrials) {
    GradcheckOptions o;
    o.config.loss_trials = 1000;
    std::ostringstream out, err;
    EXPECT_EQ(cmd_gradcheck(o, out, err), kExitOk);
    EXPECT_NE(out.str().find("1000 cases"), std::string::npos);
}

TEST(Sweep, GridBookkeeping) {
    ScratchDir dir;
    SweepOptions o;
    o.config = small_config();
    o.grid.schemes = {"VS+TLA+ADRW"};
    o.grid.nu = {0.5, 1.0};
    o.grid.gamma = {0.1, 0.2};
    o.grid.seeds = {0, 1, 2};
    o.out_dir = dir.path().string();
    std::ostringstream out, err;
    ASSERT_EQ(cmd_sweep(o, out, err), kExitOk) << err.str();
    const auto rows = lines(slurp(dir / "sweep.csv"));
    ASSERT_EQ(rows.size(), 1U + 12U + 4U);
    EXPECT_EQ(std::count_if(rows.begin(), rows.end(), [](const auto& r) { return r.rfind("detail,", 0) == 0; }), 12);
    EXPECT_EQ(std::count_if(rows.begin(), rows.end(), [](const auto& r) { return r.rfind("aggregate,", 0) == 0; }), 4);
    EXPECT_TRUE(std::filesystem::exists(dir.path() / "runs/11/summary.json"));
}

TEST(Sweep, CrossEntropyIgnoresTauGammaWithWarning) {
    ScratchDir dir;
    SweepOptions o;
    o.config = small_config();
    o.grid.schemes = {"CE", "VS"};
    o.grid.tau = {0.5, 1.0};
    o.grid.gamma = {0.1};
    o.out_dir = dir.path().string();
    std::ostringstream out, err;
    ASSERT_EQ(cmd_sweep(o, out, err), kExitOk);
    EXPECT_NE(err.str().find("CE ignores the tau axis"), std::string::npos);
    EXPECT_NE(err.str().find("CE ignores the gamma axis"), std::string::npos);
    const auto rows = lines(slurp(dir / "sweep.csv"));
    EXPECT_EQ(rows.size(), 1U + 3U + 3U);
}

TEST(Sweep, DeterministicAcrossWorkerCounts) {
    ScratchDir a, b;
    for (auto [dir, workers] : {std::pair{&a, 1U}, std::pair{&b, 3U}}) {
        SweepOptions o;
        o.config = small_config();
        o.grid.schemes = {"CE", "CE+DRW", "CB"};
        o.grid.seeds = {4, 5};
        o.workers = workers;
        o.out_dir = dir->path().string();
        std::ostringstream out, err;
        ASSERT_EQ(cmd_sweep(o, out, err), kExitOk);
    }
    EXPECT_EQ(slurp(a / "sweep.csv"), slurp(b / "sweep.csv"));
}

TEST(Sweep, UnknownSchemeIsUsageError) {
    SweepOptions o;
    o.grid.schemes = {"Focal"};
    std::ostringstream out, err;
    EXPECT_EQ(cmd_sweep(o, out, err), kExitUsage);
}
