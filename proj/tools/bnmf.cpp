// bnmf: synthetic data, MAP and Gibbs fits, b sweeps and oracle-bound evaluation.

#include "CLI11.hpp"

#include <iostream>

#include "bnmf/bnmf.hpp"

namespace {

void add_common(CLI::App* app, bnmf::RunOptions& o) {
    app->add_option("--m1", o.m1, "rows of the synthetic matrix");
    app->add_option("--m2", o.m2, "columns of the synthetic matrix");
    app->add_option("--rank", o.rank, "true rank of the synthetic matrix");
    app->add_option("--K", o.K, "factorization width");
    app->add_option("--entry-upper", o.entry_upper, "upper bound of the uniform true factor entries");
    app->add_option("--sigma2", o.sigma2, "noise variance");
    app->add_option("--noise", o.noise, "noise model: gaussian | uniform");
    app->add_option("--seed", o.seed, "master seed");
    app->add_option("--prior", o.prior, "exponential | trunc-gauss:a=<x> | heavy-tail:zeta=<x>");
    app->add_option("--hyperprior", o.hyperprior, "inv-gamma:a=<x>,b=<x> | gamma:b=<x>");
    app->add_option("--lambda", o.lambda, "inverse temperature (default 1/(4 sigma2))");
    app->add_option("--b-grid", o.b_grid, "hyperprior b values for sweep")->delimiter(',');
    app->add_option("--algorithm", o.algorithm, "estimator for sweep: map | gibbs");
    app->add_option("--iters", o.iters, "outer MAP cycles or Gibbs iterations");
    app->add_option("--burn-in", o.burn_in, "Gibbs burn-in iterations");
    app->add_option("--inner-sweeps", o.inner_sweeps, "coordinate passes per truncated-normal row draw");
    app->add_option("--max-inner", o.max_inner, "projected-gradient steps per MAP block");
    app->add_option("--tol", o.tol_obj, "relative objective tolerance");
    app->add_option("--input", o.input, "matrix CSV to factor (Y), or M for bound");
    app->add_option("--truth-u", o.truth_u, "U0 CSV for bound");
    app->add_option("--truth-v", o.truth_v, "V0 CSV for bound");
    app->add_option("--r", o.r, "comparison rank for bound");
    app->add_option("--L", o.L, "entry bound for the bounded-entry form of the bound");
    app->add_option("--out", o.out, "output directory");
}

} // namespace

int main(int argc, char** argv) {
    CLI::App app{"Bayesian non-negative matrix factorization"};
    app.require_subcommand(1);

    bnmf::RunOptions opts;
    std::string config_path;
    for (const char* name : {"generate", "map", "gibbs", "sweep", "bound"}) {
        CLI::App* sub = app.add_subcommand(name);
        add_common(sub, opts);
        sub->callback([&opts, name] { opts.command = name; });
    }
    CLI::App* run = app.add_subcommand("run", "run a JSON experiment config");
    run->add_option("config", config_path, "config file")->required();

    CLI11_PARSE(app, argc, argv);

    try {
        if (run->parsed()) {
            bnmf::run_experiment(config_path);
        } else {
            bnmf::run_experiment(opts);
        }
    } catch (const bnmf::ConfigError& e) {
        std::cerr << "usage error: " << e.what() << '\n';
        return 2;
    } catch (const bnmf::ParseError& e) {
        std::cerr << "parse error: " << e.what() << '\n';
        return 2;
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << '\n';
        return 1;
    }
    return 0;
}
