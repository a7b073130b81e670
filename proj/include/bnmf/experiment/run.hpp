#pragma once

#include <nlohmann/json.hpp>

#include <filesystem>
#include <fstream>
#include <optional>
#include <set>
#include <string>
#include <vector>

#include "bnmf/bound.hpp"
#include "bnmf/map.hpp"
#include "bnmf/sampler.hpp"
#include "bnmf/experiment/matrix_io.hpp"
#include "bnmf/experiment/sweep.hpp"
#include "bnmf/experiment/synthetic.hpp"

namespace bnmf {

/// Settings shared by every subcommand; the command line and JSON config files both fill this.
struct RunOptions {
    std::string command;
    int m1 = 100;
    int m2 = 100;
    int rank = 2;
    int K = 5;
    double entry_upper = 3.0;
    double sigma2 = 0.01;
    std::string noise = "gaussian";
    std::uint64_t seed = 1;
    std::string prior = "exponential";
    std::string hyperprior = "gamma:b=1";
    std::optional<double> lambda;
    std::vector<double> b_grid{1e0, 1e1, 1e2, 1e3, 1e4, 1e5, 1e6, 1e7, 1e8, 1e9};
    std::string algorithm = "map";
    int iters = 0; // 0: 500 outer cycles for map, 1000 iterations for gibbs
    int burn_in = 200;
    int inner_sweeps = 4;
    int max_inner = 50;
    double tol_obj = 1e-9;
    double gamma_floor = 1e-8;
    double jitter = 1e-10;
    std::optional<std::string> input;
    std::optional<std::string> truth_u;
    std::optional<std::string> truth_v;
    std::optional<int> r;
    std::optional<double> L;
    std::string out = "run";
    unsigned threads = 0;

    int resolved_iters() const {
        if (iters > 0) return iters;
        return (command == "gibbs" || (command == "sweep" && algorithm == "gibbs")) ? 1000 : 500;
    }
};

inline const std::set<std::string>& run_commands() {
    static const std::set<std::string> c{"generate", "map", "gibbs", "sweep", "bound"};
    return c;
}

inline nlohmann::json to_json(const RunOptions& o) {
    nlohmann::json j{{"command", o.command},
                     {"m1", o.m1},
                     {"m2", o.m2},
                     {"rank", o.rank},
                     {"K", o.K},
                     {"entry_upper", o.entry_upper},
                     {"sigma2", o.sigma2},
                     {"noise", o.noise},
                     {"seed", o.seed},
                     {"prior", o.prior},
                     {"hyperprior", o.hyperprior},
                     {"b_grid", o.b_grid},
                     {"algorithm", o.algorithm},
                     {"iters", o.resolved_iters()},
                     {"burn_in", o.burn_in},
                     {"inner_sweeps", o.inner_sweeps},
                     {"max_inner", o.max_inner},
                     {"tol_obj", o.tol_obj},
                     {"gamma_floor", o.gamma_floor},
                     {"jitter", o.jitter},
                     {"out", o.out}};
    j["lambda"] = o.lambda ? nlohmann::json(*o.lambda) : nlohmann::json(nullptr);
    if (o.input) j["input"] = *o.input;
    if (o.truth_u) j["truth_u"] = *o.truth_u;
    if (o.truth_v) j["truth_v"] = *o.truth_v;
    if (o.r) j["r"] = *o.r;
    if (o.L) j["L"] = *o.L;
    return j;
}

namespace detail {

template <class T>
void read_field(const nlohmann::json& j, const char* key, T& dst) {
    if (!j.contains(key) || j.at(key).is_null()) return;
    try {
        dst = j.at(key).get<T>();
    } catch (const nlohmann::json::exception&) {
        throw ConfigError(std::string("field '") + key + "': wrong type");
    }
}

template <class T>
void read_field(const nlohmann::json& j, const char* key, std::optional<T>& dst) {
    if (!j.contains(key) || j.at(key).is_null()) return;
    T v{};
    read_field(j, key, v);
    dst = v;
}

} // namespace detail

/// Reads a JSON config. Unknown keys are rejected by name.
inline RunOptions run_options_from_json(const nlohmann::json& j) {
    static const std::set<std::string> known{
        "command", "m1",        "m2",        "rank",   "K",         "entry_upper", "sigma2",  "noise",
        "seed",    "prior",     "hyperprior", "lambda", "b_grid",   "algorithm",   "iters",   "burn_in",
        "inner_sweeps", "max_inner", "tol_obj", "gamma_floor", "jitter", "input", "truth_u", "truth_v",
        "r",       "L",         "out",       "threads"};
    if (!j.is_object()) throw ConfigError("config: top level must be an object");
    for (const auto& [key, value] : j.items()) {
        if (!known.count(key)) throw ConfigError("config: unknown field '" + key + "'");
    }
    RunOptions o;
    detail::read_field(j, "command", o.command);
    detail::read_field(j, "m1", o.m1);
    detail::read_field(j, "m2", o.m2);
    detail::read_field(j, "rank", o.rank);
    detail::read_field(j, "K", o.K);
    detail::read_field(j, "entry_upper", o.entry_upper);
    detail::read_field(j, "sigma2", o.sigma2);
    detail::read_field(j, "noise", o.noise);
    detail::read_field(j, "seed", o.seed);
    detail::read_field(j, "prior", o.prior);
    detail::read_field(j, "hyperprior", o.hyperprior);
    detail::read_field(j, "lambda", o.lambda);
    detail::read_field(j, "b_grid", o.b_grid);
    detail::read_field(j, "algorithm", o.algorithm);
    detail::read_field(j, "iters", o.iters);
    detail::read_field(j, "burn_in", o.burn_in);
    detail::read_field(j, "inner_sweeps", o.inner_sweeps);
    detail::read_field(j, "max_inner", o.max_inner);
    detail::read_field(j, "tol_obj", o.tol_obj);
    detail::read_field(j, "gamma_floor", o.gamma_floor);
    detail::read_field(j, "jitter", o.jitter);
    detail::read_field(j, "input", o.input);
    detail::read_field(j, "truth_u", o.truth_u);
    detail::read_field(j, "truth_v", o.truth_v);
    detail::read_field(j, "r", o.r);
    detail::read_field(j, "L", o.L);
    detail::read_field(j, "out", o.out);
    detail::read_field(j, "threads", o.threads);
    return o;
}

/// Everything a subcommand needs, parsed and checked. Errors name the offending field.
struct ResolvedRun {
    RunOptions opts;
    SyntheticSpec spec;
    PriorSpec prior;
    ModelConfig model;
    MapConfig map;
    GibbsConfig gibbs;
    Algorithm algorithm = Algorithm::Map;
};

inline ResolvedRun resolve(const RunOptions& o) {
    auto field = [](const char* name, auto&& fn) {
        try {
            return fn();
        } catch (const std::exception& e) {
            throw ConfigError(std::string("field '") + name + "': " + e.what());
        }
    };
    if (!run_commands().count(o.command)) {
        throw ConfigError("field 'command': unknown subcommand '" + o.command + "'");
    }
    ResolvedRun r;
    r.opts = o;
    r.prior.element = field("prior", [&] { return parse_element_prior(o.prior); });
    r.prior.hyper = field("hyperprior", [&] { return parse_hyperprior(o.hyperprior); });
    r.algorithm = field("algorithm", [&] { return parse_algorithm(o.algorithm); });
    r.spec.m1 = o.m1;
    r.spec.m2 = o.m2;
    r.spec.r_true = o.rank;
    r.spec.K = o.K;
    r.spec.entry_upper = o.entry_upper;
    r.spec.sigma2 = o.sigma2;
    r.spec.seed = o.seed;
    r.spec.noise = field("noise", [&] { return parse_noise(o.noise); });
    if (!o.input) field("m1", [&] { r.spec.validate(); return 0; });

    r.model.sigma2 = o.sigma2 > 0.0 ? o.sigma2 : 1e-4;
    r.model.lambda = o.lambda ? *o.lambda : 1.0 / (4.0 * r.model.sigma2);
    r.model.K = o.K;
    field("K", [&] { r.model.validate(); return 0; });

    r.map.max_outer = o.resolved_iters();
    r.map.max_inner = o.max_inner;
    r.map.tol_obj = o.tol_obj;
    r.map.gamma_floor = o.gamma_floor;
    r.map.seed = o.seed;
    field("iters", [&] { r.map.validate(); return 0; });

    r.gibbs.n_iters = o.resolved_iters();
    r.gibbs.burn_in = o.burn_in;
    r.gibbs.inner_sweeps = o.inner_sweeps;
    r.gibbs.jitter = o.jitter;
    r.gibbs.seed = o.seed;
    if (o.command == "gibbs" || (o.command == "sweep" && r.algorithm == Algorithm::Gibbs)) {
        field("burn_in", [&] { r.gibbs.validate(); return 0; });
    }
    if (o.command == "sweep" && o.b_grid.empty()) {
        throw ConfigError("field 'b_grid': must not be empty");
    }
    for (double b : o.b_grid) {
        if (!(b > 0.0)) throw ConfigError("field 'b_grid': values must be positive");
    }
    return r;
}

namespace detail {

inline void write_json(const std::filesystem::path& path, const nlohmann::json& j) {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw std::runtime_error("cannot open '" + path.string() + "' for writing");
    out << j.dump(2) << '\n';
}

inline Matrix column_matrix(const Vector& v) {
    Matrix m(v.size(), 1);
    m.col(0) = v;
    return m;
}

struct Problem {
    Matrix Y;
    std::optional<Matrix> M;
    std::optional<Factorization> truth;
};

inline Problem load_problem(const ResolvedRun& r) {
    Problem p;
    if (r.opts.input) {
        p.Y = io::load_matrix(*r.opts.input);
    } else {
        SyntheticData d = generate_synthetic(r.spec);
        p.Y = std::move(d.Y);
        p.M = std::move(d.M);
        p.truth = std::move(d.truth);
    }
    return p;
}

inline void write_factorization(const std::filesystem::path& dir, const Factorization& fac) {
    io::save_matrix((dir / "U.csv").string(), fac.U());
    io::save_matrix((dir / "V.csv").string(), fac.V());
    io::save_matrix((dir / "gamma.csv").string(), column_matrix(fac.gamma()));
}

inline nlohmann::json fit_summary(const Factorization& fac, const Matrix& Mhat, const std::optional<Matrix>& M) {
    const Vector& g = fac.gamma();
    nlohmann::json j{{"gamma", std::vector<double>(g.data(), g.data() + g.size())},
                     {"effective_rank", effective_rank(g, relative_threshold(g))}};
    j["mse"] = M ? nlohmann::json(mse(*M, Mhat)) : nlohmann::json(nullptr);
    return j;
}

inline void cmd_generate(const ResolvedRun& r, const std::filesystem::path& dir) {
    const SyntheticData d = generate_synthetic(r.spec);
    io::save_matrix((dir / "Y.csv").string(), d.Y);
    io::save_matrix((dir / "M.csv").string(), d.M);
    io::save_matrix((dir / "U.csv").string(), d.truth.U());
    io::save_matrix((dir / "V.csv").string(), d.truth.V());
}

inline void cmd_map(const ResolvedRun& r, const std::filesystem::path& dir) {
    const Problem p = load_problem(r);
    const MapResult res = run_map(p.Y, r.model, r.map, r.prior);
    const Matrix Mhat = reconstruct(res.fac);
    write_factorization(dir, res.fac);
    io::save_matrix((dir / "Mhat.csv").string(), Mhat);

    std::ofstream trace(dir / "trace.csv", std::ios::binary);
    trace << "outer_iter,objective";
    for (int l = 0; l < r.model.K; ++l) trace << ",gamma_" << (l + 1);
    trace << '\n';
    for (const auto& row : res.trace) {
        trace << row.outer << ',' << io::format_double(row.objective);
        for (Eigen::Index l = 0; l < row.gamma.size(); ++l) trace << ',' << io::format_double(row.gamma(l));
        trace << '\n';
    }
    nlohmann::json summary = fit_summary(res.fac, Mhat, p.M);
    summary["objective"] = res.trace.empty() ? map_objective(p.Y, res.fac, r.model.lambda, r.prior)
                                             : res.trace.back().objective;
    summary["outer_iterations"] = res.trace.size();
    write_json(dir / "result.json", summary);
}

inline void cmd_gibbs(const ResolvedRun& r, const std::filesystem::path& dir) {
    const Problem p = load_problem(r);
    const GibbsResult res = run_gibbs(p.Y, r.model, r.gibbs, r.prior, p.M);
    write_factorization(dir, res.final);
    io::save_matrix((dir / "Mhat.csv").string(), res.Mhat);

    std::ofstream trace(dir / "trace.csv", std::ios::binary);
    trace << "iteration,quasi_log_posterior,mse_vs_truth_if_known\n";
    for (const auto& row : res.trace) {
        trace << row.iteration << ',' << io::format_double(row.quasi_log_posterior) << ','
              << (std::isnan(row.mse_vs_truth) ? std::string() : io::format_double(row.mse_vs_truth)) << '\n';
    }
    nlohmann::json summary = fit_summary(res.final, res.Mhat, p.M);
    summary["kept"] = r.gibbs.n_iters - r.gibbs.burn_in;
    write_json(dir / "result.json", summary);
}

inline void cmd_sweep(const ResolvedRun& r, const std::filesystem::path& dir, const nlohmann::json& echo) {
    SweepOptions s;
    s.spec = r.spec;
    s.algorithm = r.algorithm;
    s.element = r.prior.element;
    s.hyper = r.prior.hyper;
    s.b_grid = r.opts.b_grid;
    s.lambda = r.opts.lambda;
    s.map = r.map;
    s.gibbs = r.gibbs;
    s.threads = r.opts.threads;
    const SweepReport report = sweep_b(s, echo);
    write_json(dir / "report.json", to_json(report));
    write_sweep_csv((dir / "sweep.csv").string(), report);
}

inline void cmd_bound(const ResolvedRun& r, const std::filesystem::path& dir) {
    Matrix M;
    BoundQuery q;
    if (r.opts.truth_u || r.opts.truth_v) {
        if (!r.opts.truth_u || !r.opts.truth_v || !r.opts.input) {
            throw ConfigError("field 'truth_u': bound on files needs --input (M), --truth-u and --truth-v");
        }
        M = io::load_matrix(*r.opts.input);
        q.U0 = io::load_matrix(*r.opts.truth_u);
        q.V0 = io::load_matrix(*r.opts.truth_v);
        q.r = r.opts.r.value_or(static_cast<int>(q.U0.cols()));
    } else {
        const SyntheticData d = generate_synthetic(r.spec);
        M = d.M;
        q.U0 = d.truth.U();
        q.V0 = d.truth.V();
        q.r = r.opts.r.value_or(r.spec.r_true);
    }
    q.L = r.opts.L;
    ModelConfig model = r.model;
    const PriorConstants pc = prior_constants(r.prior, model, M.rows(), M.cols());
    const BoundBreakdown b = theorem_bound(q, M, model, pc);

    nlohmann::json j;
    j["r"] = q.r;
    j["sigma2"] = model.sigma2;
    j["constants"] = {{"S_f", *pc.S_f},
                      {"C_f", pc.C_f},
                      {"log_alpha", *pc.log_alpha},
                      {"beta", pc.beta},
                      {"eps_max", pc.eps_max}};
    j["theorem"] = to_json(b);
    if (q.L) {
        const double c = corollary_bound(q.r, *q.L, model.K, M.rows(), M.cols(), model, pc);
        j["corollary"] = {{"L", *q.L},
                          {"remainder", detail::bound_number(c)},
                          {"total", detail::bound_number(c + b.approx_error)}};
    }
    write_json(dir / "bound.json", j);
}

} // namespace detail

/**
 * Runs one subcommand and writes its outputs, plus the resolved config as
 * config.json, under opts.out.
 */
inline void run_experiment(const RunOptions& opts) {
    const ResolvedRun r = resolve(opts);
    const std::filesystem::path dir(opts.out);
    std::filesystem::create_directories(dir);
    const nlohmann::json echo = to_json(opts);
    detail::write_json(dir / "config.json", echo);
    if (opts.command == "generate") {
        detail::cmd_generate(r, dir);
    } else if (opts.command == "map") {
        detail::cmd_map(r, dir);
    } else if (opts.command == "gibbs") {
        detail::cmd_gibbs(r, dir);
    } else if (opts.command == "sweep") {
        detail::cmd_sweep(r, dir, echo);
    } else {
        detail::cmd_bound(r, dir);
    }
}

/// Loads a JSON config file and runs it.
inline void run_experiment(const std::string& config_path) {
    std::ifstream in(config_path);
    if (!in) throw std::runtime_error("cannot open config '" + config_path + "'");
    nlohmann::json j;
    try {
        in >> j;
    } catch (const nlohmann::json::parse_error& e) {
        throw ConfigError(std::string("config: ") + e.what());
    }
    run_experiment(run_options_from_json(j));
}

} // namespace bnmf
