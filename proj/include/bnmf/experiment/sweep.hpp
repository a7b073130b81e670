#pragma once

#include <nlohmann/json.hpp>

#include <algorithm>
#include <atomic>
#include <chrono>
#include <cstdlib>
#include <fstream>
#include <optional>
#include <string>
#include <thread>
#include <vector>

#include "bnmf/map.hpp"
#include "bnmf/sampler.hpp"
#include "bnmf/experiment/matrix_io.hpp"
#include "bnmf/experiment/synthetic.hpp"

namespace bnmf {

enum class Algorithm { Map, Gibbs };

inline Algorithm parse_algorithm(const std::string& s) {
    if (s == "map") return Algorithm::Map;
    if (s == "gibbs") return Algorithm::Gibbs;
    throw ConfigError("unknown algorithm '" + s + "'");
}

inline std::string algorithm_name(Algorithm a) { return a == Algorithm::Map ? "map" : "gibbs"; }

struct SweepOptions {
    SyntheticSpec spec;
    Algorithm algorithm = Algorithm::Map;
    ElementPrior element = ElementPrior::exponential();
    ScaleHyperprior hyper = ScaleHyperprior::gamma(1.0); // b is replaced by each grid value
    std::vector<double> b_grid;
    std::optional<double> lambda; // default 1 / (4 sigma2)
    MapConfig map;
    GibbsConfig gibbs;
    double tau_rel = 1e-3;
    unsigned threads = 0; // 0: BNMF_THREADS or hardware concurrency
};

struct SweepRecord {
    double b = 0.0;
    double mse = 0.0;
    Vector gamma;
    int effective_rank = 0;
    double wall_time_s = 0.0;
    std::optional<std::string> error;
};

struct SweepReport {
    nlohmann::json config;
    std::vector<SweepRecord> records;
};

/// Worker count: explicit request, else BNMF_THREADS, else hardware concurrency.
inline unsigned sweep_threads(unsigned requested, std::size_t tasks) {
    unsigned n = requested;
    if (n == 0) {
        if (const char* env = std::getenv("BNMF_THREADS")) {
            n = static_cast<unsigned>(std::max(1L, std::strtol(env, nullptr, 10)));
        } else {
            n = std::max(1u, std::thread::hardware_concurrency());
        }
    }
    return static_cast<unsigned>(std::min<std::size_t>(n, std::max<std::size_t>(tasks, 1)));
}

/// Seed of grid point `index`, derived from the sweep seed.
inline std::uint64_t point_seed(std::uint64_t seed, std::size_t index) {
    Rng r = derive_rng(seed, index);
    return r();
}

inline ModelConfig sweep_model(const SweepOptions& o) {
    ModelConfig c;
    c.sigma2 = o.spec.sigma2 > 0.0 ? o.spec.sigma2 : 1e-4;
    c.lambda = o.lambda ? *o.lambda : 1.0 / (4.0 * c.sigma2);
    c.K = o.spec.K;
    return c;
}

/**
 * Fits the chosen estimator for every b in the grid on one shared data
 * realization. Failures are recorded per point and the sweep goes on.
 */
inline SweepReport sweep_b(const SweepOptions& o, const nlohmann::json& echoed_config = {}) {
    if (o.b_grid.empty()) {
        throw ConfigError("sweep: empty b grid");
    }
    const SyntheticData data = generate_synthetic(o.spec);
    const ModelConfig model = sweep_model(o);

    SweepReport report;
    report.config = echoed_config;
    report.records.resize(o.b_grid.size());

    auto run_point = [&](std::size_t k) {
        SweepRecord& rec = report.records[k];
        rec.b = o.b_grid[k];
        const auto t0 = std::chrono::steady_clock::now();
        try {
            const PriorSpec prior{o.element, o.hyper.with_b(rec.b)};
            Matrix Mhat;
            if (o.algorithm == Algorithm::Map) {
                MapConfig mc = o.map;
                mc.seed = point_seed(o.map.seed, k);
                const MapResult r = run_map(data.Y, model, mc, prior);
                Mhat = reconstruct(r.fac);
                rec.gamma = r.fac.gamma();
            } else {
                GibbsConfig gc = o.gibbs;
                gc.seed = point_seed(o.gibbs.seed, k);
                const GibbsResult r = run_gibbs(data.Y, model, gc, prior);
                Mhat = r.Mhat;
                rec.gamma = r.final.gamma();
            }
            rec.mse = mse(data.M, Mhat);
            rec.effective_rank = effective_rank(rec.gamma, relative_threshold(rec.gamma, o.tau_rel));
        } catch (const std::exception& e) {
            rec.error = e.what();
            rec.mse = std::numeric_limits<double>::quiet_NaN();
        }
        rec.wall_time_s = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
    };

    const unsigned workers = sweep_threads(o.threads, o.b_grid.size());
    if (workers <= 1) {
        for (std::size_t k = 0; k < o.b_grid.size(); ++k) run_point(k);
    } else {
        std::atomic<std::size_t> next{0};
        std::vector<std::thread> pool;
        for (unsigned w = 0; w < workers; ++w) {
            pool.emplace_back([&] {
                for (std::size_t k = next++; k < o.b_grid.size(); k = next++) run_point(k);
            });
        }
        for (auto& t : pool) t.join();
    }
    return report;
}

inline nlohmann::json to_json(const SweepRecord& r) {
    nlohmann::json j{{"b", r.b},
                     {"mse", std::isfinite(r.mse) ? nlohmann::json(r.mse) : nlohmann::json(nullptr)},
                     {"gamma", std::vector<double>(r.gamma.data(), r.gamma.data() + r.gamma.size())},
                     {"effective_rank", r.effective_rank},
                     {"wall_time_s", r.wall_time_s}};
    if (r.error) j["error"] = *r.error;
    return j;
}

inline nlohmann::json to_json(const SweepReport& report) {
    nlohmann::json records = nlohmann::json::array();
    for (const auto& r : report.records) records.push_back(to_json(r));
    return nlohmann::json{{"config", report.config}, {"records", records}};
}

/// Plot-ready CSV: b, mse, effective_rank, wall_time_s, gamma_1..gamma_K.
inline void write_sweep_csv(const std::string& path, const SweepReport& report) {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw std::runtime_error("cannot open '" + path + "' for writing");
    Eigen::Index K = 0;
    for (const auto& r : report.records) K = std::max(K, r.gamma.size());
    out << "b,mse,effective_rank,wall_time_s";
    for (Eigen::Index l = 0; l < K; ++l) out << ",gamma_" << (l + 1);
    out << '\n';
    for (const auto& r : report.records) {
        out << io::format_double(r.b) << ',' << (std::isfinite(r.mse) ? io::format_double(r.mse) : "nan") << ','
            << r.effective_rank << ',' << io::format_double(r.wall_time_s);
        for (Eigen::Index l = 0; l < K; ++l) {
            out << ',' << (l < r.gamma.size() ? io::format_double(r.gamma(l)) : "");
        }
        out << '\n';
    }
}

} // namespace bnmf
