#include <vslab/commands.hpp>

#include <CLI11.hpp>

#include <cmath>
#include <iostream>
#include <string>
#include <vector>

namespace {

using namespace vslab;
using namespace vslab::cli;

// Flag values for the synthetic problem and the optimizer. Only flags the
// user actually passed are applied, so they can override a loaded config.
struct ExperimentFlags {
    ExperimentConfig d;  // defaults for help text
    std::string kind = "lt";
    int classes = d.profile.num_classes;
    long head = d.profile.head_count;
    double rho = d.profile.rho;
    int dim = d.dim;
    double radius = d.mean_radius;
    double sigma = d.sigma;
    std::uint64_t mixture_seed = d.mixture_seed;
    long test_per_class = d.test_per_class;
    std::string model = "linear";
    int hidden = d.hidden_width;
    double lr = d.train.lr;
    std::vector<int> milestones;
    double lr_decay = d.train.lr_decay;
    double momentum = d.train.momentum;
    double wd = d.train.weight_decay;
    long batch = d.train.batch_size;
    std::string scheme = d.scheme;
    double nu = d.hyper.nu;
    double tau = d.hyper.tau;
    double gamma = d.hyper.gamma;
    double cb_p = d.hyper.cb_p;
    double ldam_c = d.hyper.ldam_c;
    int epochs = d.hyper.epochs;
    int t0 = d.hyper.t0;
};

void add_data_flags(CLI::App* app, ExperimentFlags& f) {
    app->add_option("--kind", f.kind, "imbalance profile")->check(CLI::IsMember({"lt", "step"}))->capture_default_str();
    app->add_option("--classes", f.classes, "number of classes")->capture_default_str();
    app->add_option("--head", f.head, "samples in the largest class")->capture_default_str();
    app->add_option("--rho", f.rho, "imbalance ratio N_1/N_C")->capture_default_str();
    app->add_option("--dim", f.dim, "feature dimension")->capture_default_str();
    app->add_option("--radius", f.radius, "norm of the class means")->capture_default_str();
    app->add_option("--sigma", f.sigma, "within-class standard deviation")->capture_default_str();
    app->add_option("--mixture-seed", f.mixture_seed, "seed fixing the class means")->capture_default_str();
    app->add_option("--test-per-class", f.test_per_class, "balanced test samples per class")->capture_default_str();
}

void add_train_flags(CLI::App* app, ExperimentFlags& f) {
    app->add_option("--model", f.model, "score model")->check(CLI::IsMember({"linear", "mlp"}))->capture_default_str();
    app->add_option("--hidden", f.hidden, "hidden width of the mlp")->capture_default_str();
    app->add_option("--lr", f.lr, "base learning rate")->capture_default_str();
    app->add_option("--milestones", f.milestones, "epochs at which the learning rate decays (default: 0.9*epochs; T0 is always added)");
    app->add_option("--lr-decay", f.lr_decay, "learning rate decay factor")->capture_default_str();
    app->add_option("--momentum", f.momentum, "SGD momentum")->capture_default_str();
    app->add_option("--wd", f.wd, "weight decay")->capture_default_str();
    app->add_option("--batch", f.batch, "minibatch size")->capture_default_str();
    app->add_option("--cb-p", f.cb_p, "class-balanced weighting parameter")->capture_default_str();
    app->add_option("--ldam-c", f.ldam_c, "LDAM margin scale")->capture_default_str();
    app->add_option("--epochs", f.epochs, "total epochs T")->capture_default_str();
}

void add_scheme_flags(CLI::App* app, ExperimentFlags& f) {
    app->add_option("--scheme", f.scheme, "training scheme")->check(CLI::IsMember(scheme_names()))->capture_default_str();
    app->add_option("--nu", f.nu, "ADRW exponent")->capture_default_str();
    app->add_option("--tau", f.tau, "additive adjustment strength")->capture_default_str();
    app->add_option("--gamma", f.gamma, "multiplicative adjustment strength")->capture_default_str();
    app->add_option("--t0", f.t0, "re-weighting epoch T0")->capture_default_str();
}

bool given(const CLI::App* app, const char* name) {
    auto* opt = app->get_option_no_throw(name);
    return opt != nullptr && opt->count() > 0;
}

void apply(const CLI::App* app, const ExperimentFlags& f, ExperimentConfig& c) {
    if (given(app, "--kind")) c.profile.kind = parse_imbalance_kind(f.kind);
    if (given(app, "--classes")) c.profile.num_classes = f.classes;
    if (given(app, "--head")) c.profile.head_count = f.head;
    if (given(app, "--rho")) c.profile.rho = f.rho;
    if (given(app, "--dim")) c.dim = f.dim;
    if (given(app, "--radius")) c.mean_radius = f.radius;
    if (given(app, "--sigma")) c.sigma = f.sigma;
    if (given(app, "--mixture-seed")) c.mixture_seed = f.mixture_seed;
    if (given(app, "--test-per-class")) c.test_per_class = f.test_per_class;
    if (given(app, "--model")) c.model = parse_model_kind(f.model);
    if (given(app, "--hidden")) c.hidden_width = f.hidden;
    if (given(app, "--lr")) c.train.lr = f.lr;
    if (given(app, "--milestones")) c.train.milestones = f.milestones;
    if (given(app, "--lr-decay")) c.train.lr_decay = f.lr_decay;
    if (given(app, "--momentum")) c.train.momentum = f.momentum;
    if (given(app, "--wd")) c.train.weight_decay = f.wd;
    if (given(app, "--batch")) c.train.batch_size = f.batch;
    if (given(app, "--scheme")) c.scheme = f.scheme;
    if (given(app, "--nu")) c.hyper.nu = f.nu;
    if (given(app, "--tau")) c.hyper.tau = f.tau;
    if (given(app, "--gamma")) c.hyper.gamma = f.gamma;
    if (given(app, "--cb-p")) c.hyper.cb_p = f.cb_p;
    if (given(app, "--ldam-c")) c.hyper.ldam_c = f.ldam_c;
    if (given(app, "--epochs")) {
        c.hyper.epochs = f.epochs;
        if (!given(app, "--t0")) c.hyper.t0 = static_cast<int>(std::lround(0.8 * f.epochs));
    }
    if (given(app, "--t0")) c.hyper.t0 = f.t0;
}

void default_milestones(ExperimentConfig& c) {
    if (!c.train.milestones.empty()) return;
    const int m = static_cast<int>(std::lround(0.9 * c.hyper.epochs));
    if (m > 0 && m < c.hyper.epochs) c.train.milestones = {m};
}

struct BoundFlags {
    double delta = 0.05;
    double m_cap = 0.0;
    std::string complexity = "linear";
    long mc_samples = 1000;
};

void add_bound_flags(CLI::App* app, BoundFlags& b) {
    app->add_option("--delta", b.delta, "confidence parameter")->capture_default_str();
    app->add_option("--m-cap", b.m_cap, "loss cap M (default: max training loss)");
    app->add_option("--complexity", b.complexity, "complexity estimator")
        ->check(CLI::IsMember({"linear", "mc"}))
        ->capture_default_str();
    app->add_option("--mc-samples", b.mc_samples, "Monte Carlo sign draws")->capture_default_str();
}

BoundSettings to_settings(const CLI::App* app, const BoundFlags& b) {
    BoundSettings s;
    s.delta = b.delta;
    if (given(app, "--m-cap")) s.m_cap = b.m_cap;
    s.method = b.complexity == "mc" ? ComplexityMethod::MonteCarlo : ComplexityMethod::LinearAnalytic;
    s.mc_samples = b.mc_samples;
    return s;
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"Vector-scaling losses, data-dependent bounds and re-weighting schedules for imbalanced learning"};
    app.require_subcommand(1);

    // gen-data
    ExperimentFlags gen_flags;
    std::uint64_t gen_seed = 0;
    std::string gen_out = ".";
    auto* gen = app.add_subcommand("gen-data", "synthesize an imbalanced Gaussian-mixture dataset");
    add_data_flags(gen, gen_flags);
    gen->add_option("--seed", gen_seed, "root seed")->capture_default_str();
    gen->add_option("--out", gen_out, "output directory")->capture_default_str();

    // train
    ExperimentFlags train_flags;
    BoundFlags train_bounds;
    std::uint64_t train_seed = 0;
    std::string train_out = "run", train_config, train_data, train_test;
    auto* train = app.add_subcommand("train", "train one scheme and log every epoch");
    add_data_flags(train, train_flags);
    add_train_flags(train, train_flags);
    add_scheme_flags(train, train_flags);
    add_bound_flags(train, train_bounds);
    train->add_option("--config", train_config, "run config (config.json of an earlier run); flags override it")
        ->check(CLI::ExistingFile);
    train->add_option("--data", train_data, "training CSV instead of synthetic data");
    train->add_option("--test", train_test, "test CSV (with --data)");
    train->add_option("--seed", train_seed, "root seed")->capture_default_str();
    train->add_option("--out", train_out, "output directory")->capture_default_str();

    // bounds
    BoundFlags bound_flags;
    std::string bounds_run, bounds_ckpt, bounds_data, bounds_params, bounds_out;
    std::uint64_t bounds_seed = 0;
    auto* bounds = app.add_subcommand("bounds", "evaluate the data-dependent and union bounds for a checkpoint");
    bounds->add_option("--run", bounds_run, "run directory written by train");
    bounds->add_option("--checkpoint", bounds_ckpt, "checkpoint JSON");
    bounds->add_option("--data", bounds_data, "dataset CSV");
    bounds->add_option("--params", bounds_params, "loss parameters JSON (alpha, beta, delta)");
    add_bound_flags(bounds, bound_flags);
    bounds->add_option("--seed", bounds_seed, "seed for Monte Carlo complexity")->capture_default_str();
    bounds->add_option("--out", bounds_out, "report path (default: RUN/bound_report.json or ./bound_report.json)");

    // compare-bounds
    CompareOptions cmp;
    std::vector<double> cmp_priors, cmp_kappas;
    std::vector<long> cmp_counts;
    std::string cmp_data, cmp_out;
    auto* compare = app.add_subcommand("compare-bounds", "h1(kappa) and both bound aggregates over a kappa grid");
    auto* o_priors = compare->add_option("--priors", cmp_priors, "class priors, nonincreasing")->delimiter(',');
    auto* o_counts = compare->add_option("--counts", cmp_counts, "class counts, nonincreasing")->delimiter(',');
    auto* o_data = compare->add_option("--data", cmp_data, "dataset CSV");
    o_priors->excludes(o_counts)->excludes(o_data);
    o_counts->excludes(o_data);
    compare->add_option("--kappa", cmp_kappas, "kappa grid (default 1,1.25,1.5,2,2.5,3)")->delimiter(',');
    compare->add_option("--out", cmp_out, "CSV path (default: stdout)");

    // gradcheck
    GradcheckOptions gc;
    std::string gc_out;
    auto* grad = app.add_subcommand("gradcheck", "finite-difference check of the loss and model gradients");
    grad->add_option("--trials", gc.config.loss_trials, "loss-level cases")->capture_default_str();
    grad->add_option("--model-trials", gc.config.model_trials, "model-level cases")->capture_default_str();
    grad->add_option("--seed", gc.config.seed, "seed")->capture_default_str();
    grad->add_option("--out", gc_out, "JSON report path");

    // sweep
    ExperimentFlags sweep_flags;
    SweepOptions sw;
    std::vector<std::string> sw_schemes;
    std::vector<std::uint64_t> sw_seeds;
    int sw_num_seeds = 0;
    auto* sweep = app.add_subcommand("sweep", "grid over schemes, nu, tau, gamma, T0 and seeds");
    add_data_flags(sweep, sweep_flags);
    add_train_flags(sweep, sweep_flags);
    sweep->add_option("--scheme", sw_schemes, "schemes")->delimiter(',')->check(CLI::IsMember(scheme_names()));
    sweep->add_option("--nu", sw.grid.nu, "nu grid")->delimiter(',');
    sweep->add_option("--tau", sw.grid.tau, "tau grid")->delimiter(',');
    sweep->add_option("--gamma", sw.grid.gamma, "gamma grid")->delimiter(',');
    sweep->add_option("--t0", sw.grid.t0, "T0 grid")->delimiter(',');
    auto* o_seeds = sweep->add_option("--seeds", sw_seeds, "explicit seeds")->delimiter(',');
    auto* o_nseeds = sweep->add_option("--num-seeds", sw_num_seeds, "use seeds 0..n-1");
    o_seeds->excludes(o_nseeds);
    sweep->add_option("--workers", sw.workers, "parallel runs")->capture_default_str();
    sweep->add_option("--out", sw.out_dir, "output directory")->capture_default_str();

    try {
        app.parse(argc, argv);
    } catch (const CLI::CallForHelp& e) {
        return app.exit(e);
    } catch (const CLI::CallForAllHelp& e) {
        return app.exit(e);
    } catch (const CLI::ParseError& e) {
        app.exit(e);
        return kExitUsage;
    }

    if (gen->parsed()) {
        GenDataOptions o;
        apply(gen, gen_flags, o.config);
        o.seed = gen_seed;
        o.out_dir = gen_out;
        return cmd_gen_data(o);
    }
    if (train->parsed()) {
        TrainOptions o;
        if (!train_config.empty()) {
            // Either a bare experiment config or the config.json written by train.
            try {
                std::ifstream in(train_config);
                const auto j = nlohmann::json::parse(in);
                o.config = config_from_json(j.contains("experiment") ? j.at("experiment") : j);
                if (j.contains("seed") && !given(train, "--seed")) train_seed = j.at("seed").get<std::uint64_t>();
            } catch (const std::exception& e) {
                std::cerr << "error: " << train_config << ": " << e.what() << "\n";
                return kExitUsage;
            }
        }
        try {
            apply(train, train_flags, o.config);
        } catch (const std::exception& e) {
            std::cerr << "error: " << e.what() << "\n";
            return kExitUsage;
        }
        default_milestones(o.config);
        o.seed = train_seed;
        o.bounds = to_settings(train, train_bounds);
        if (!train_data.empty()) o.train_csv = train_data;
        if (!train_test.empty()) o.test_csv = train_test;
        o.out_dir = train_out;
        return cmd_train(o);
    }
    if (bounds->parsed()) {
        BoundsOptions o;
        if (!bounds_run.empty()) o.run_dir = bounds_run;
        if (!bounds_ckpt.empty()) o.checkpoint = bounds_ckpt;
        if (!bounds_data.empty()) o.data_csv = bounds_data;
        if (!bounds_params.empty()) o.params_json = bounds_params;
        const bool any_bound_flag = given(bounds, "--delta") || given(bounds, "--m-cap") ||
                                    given(bounds, "--complexity") || given(bounds, "--mc-samples");
        if (any_bound_flag || bounds_run.empty()) o.settings = to_settings(bounds, bound_flags);
        o.seed = bounds_seed;
        if (!bounds_out.empty()) o.out_path = bounds_out;
        return cmd_bounds(o);
    }
    if (compare->parsed()) {
        if (given(compare, "--priors")) cmp.priors = cmp_priors;
        if (given(compare, "--counts")) cmp.counts = cmp_counts;
        if (given(compare, "--data")) cmp.data_csv = cmp_data;
        if (!cmp_kappas.empty()) cmp.kappas = cmp_kappas;
        if (!cmp_out.empty()) cmp.out_path = cmp_out;
        return cmd_compare_bounds(cmp);
    }
    if (grad->parsed()) {
        if (!gc_out.empty()) gc.out_path = gc_out;
        return cmd_gradcheck(gc);
    }
    if (sweep->parsed()) {
        try {
            apply(sweep, sweep_flags, sw.config);
        } catch (const std::exception& e) {
            std::cerr << "error: " << e.what() << "\n";
            return kExitUsage;
        }
        default_milestones(sw.config);
        if (!sw_schemes.empty()) sw.grid.schemes = sw_schemes;
        if (!sw_seeds.empty()) {
            sw.grid.seeds = sw_seeds;
        } else if (sw_num_seeds > 0) {
            sw.grid.seeds.clear();
            for (int s = 0; s < sw_num_seeds; ++s) sw.grid.seeds.push_back(static_cast<std::uint64_t>(s));
        }
        return cmd_sweep(sw);
    }
    return kExitUsage;
}
