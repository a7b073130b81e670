#include <gtest/gtest.h>

#include "bnmf/experiment/synthetic.hpp"
#include "bnmf/sampler.hpp"
#include "checks.hpp"
#include "oracles.hpp"

using namespace bnmf;
using checks::GammaPath;

namespace {

const GammaPath kPaths[] = {GammaPath::ExpInvGamma, GammaPath::ExpGamma, GammaPath::TgInvGamma, GammaPath::TgGamma};

} // namespace

TEST(Sampler, RowConditionalDensityRatioExponential) {
    EXPECT_LE(checks::row_density_ratio(ElementPrior::exponential(), 100, 31), 1e-8);
}

TEST(Sampler, RowConditionalDensityRatioTruncGauss) {
    EXPECT_LE(checks::row_density_ratio(ElementPrior::truncated_gaussian(0.0), 100, 32), 1e-8);
}

TEST(Sampler, RowConditionalDensityRatioTruncGaussShifted) {
    // a != 0 adds a linear term; the raw exponent carries 2 a x / gamma
    std::mt19937_64 rng(33);
    const double a = 0.7;
    for (int k = 0; k < 50; ++k) {
        const auto in = checks::random_instance(rng);
        const RowConditionalBuilder b(in.V, in.gamma, in.lambda, ElementPrior::truncated_gaussian(a));
        const Vector y = in.Y.row(0).transpose();
        const RowConditional rc = b.row(y);
        const Vector x1 = in.U.row(0).transpose();
        const Vector x2 = x1 * 1.7;
        auto log_g = [a](double x, double g) { return 2 * a * x / g - x * x / (g * g); };
        const double raw = oracle::raw_row_exponent(y, x1, in.V, in.gamma, in.lambda, log_g) -
                           oracle::raw_row_exponent(y, x2, in.V, in.gamma, in.lambda, log_g);
        const double lib = rc.log_density_unnormalized(x1) - rc.log_density_unnormalized(x2);
        EXPECT_NEAR(lib, raw, 1e-8 * (1 + std::abs(raw)));
    }
}

TEST(Sampler, ScaleConditionalDensityRatioAllPaths) {
    for (GammaPath p : kPaths) {
        EXPECT_LE(checks::scale_density_ratio(p, 100, 34), 1e-8) << checks::path_name(p);
    }
}

TEST(Sampler, ScalarRowConditional) {
    // K = 1: Q = 2 lambda v.v, mean = (2 lambda v.y - 1/gamma) / Q
    Matrix V(3, 1);
    V << 1.0, 2.0, 0.5;
    Matrix Y(1, 3);
    Y << 2.0, 3.0, 1.0;
    const double lambda = 1.5, gamma = 0.8;
    const RowConditional rc = row_conditional_exponential(Y, V, Vector::Constant(1, gamma), 0, lambda, 1e-300);
    const double vv = 1 + 4 + 0.25, vy = 2 + 6 + 0.5;
    EXPECT_NEAR(rc.precision(0, 0), 2 * lambda * vv, 1e-12);
    EXPECT_NEAR(rc.mean(0), (2 * lambda * vy - 1 / gamma) / (2 * lambda * vv), 1e-12);
    EXPECT_NEAR(rc.covariance(0, 0), 1 / (2 * lambda * vv), 1e-12);

    const RowConditional tg = row_conditional_truncgauss(Y, V, Vector::Constant(1, gamma), 0, lambda, 0.0, 1e-300);
    const double q = 2 * lambda * vv + 2 / (gamma * gamma);
    EXPECT_NEAR(tg.precision(0, 0), q, 1e-12);
    EXPECT_NEAR(tg.mean(0), 2 * lambda * vy / q, 1e-12);
}

TEST(Sampler, LargeLambdaApproachesLeastSquares) {
    std::mt19937_64 rng(35);
    const Matrix V = oracle::random_matrix(8, 3, rng, 0.2, 1.0);
    const Matrix Y = oracle::random_matrix(1, 8, rng, 0.0, 3.0);
    const Vector ls = V.colPivHouseholderQr().solve(Vector(Y.row(0).transpose()));
    const RowConditional rc = row_conditional_exponential(Y, V, Vector::Ones(3), 0, 1e6);
    EXPECT_LE((rc.mean - ls).cwiseAbs().maxCoeff(), 1e-4);
}

TEST(Sampler, RowConditionalErrors) {
    const Matrix V = Matrix::Ones(3, 2);
    EXPECT_THROW(RowConditionalBuilder(V, Vector::Ones(2), 1.0, ElementPrior::heavy_tail(3.0)), ConfigError);
    EXPECT_THROW(RowConditionalBuilder(V, Vector::Ones(3), 1.0, ElementPrior::exponential()), StructuralError);
    const RowConditionalBuilder b(V, Vector::Ones(2), 1.0, ElementPrior::exponential());
    EXPECT_THROW(b.row(Vector::Ones(4)), StructuralError);
}

TEST(Sampler, TruncatedNormalMoments) {
    for (double mu : {10.0, 0.0, -3.0}) {
        const auto r = checks::truncnorm_mean(mu, 100000, 36);
        EXPECT_LE(r.z(), 4.0) << "mu=" << mu << " mean " << r.mean << " target " << r.target;
    }
    EXPECT_NEAR(checks::truncnorm_mean(0.0, 10, 1).target, std::sqrt(2 / std::numbers::pi), 1e-15);
}

TEST(Sampler, TruncatedNormalFarTail) {
    const auto r = checks::truncnorm_mean(-20.0, 100000, 37);
    EXPECT_NEAR(r.mean, 1.0 / 20.0, 0.2 / 20.0);
    EXPECT_LE(r.z(), 4.0);
}

TEST(Sampler, TruncatedNormalSupport) {
    Rng rng(38);
    for (double mu : {-50.0, -5.1, -4.9, 0.0, 3.0})
        for (int k = 0; k < 2000; ++k) EXPECT_GE(sample_univariate_truncnorm(mu, 0.3, rng), 0.0);
}

TEST(Sampler, InverseGaussianMoments) {
    const auto a = checks::inverse_gaussian_mean(1.0, 1.0, 100000, 39);
    EXPECT_LE(a.z(), 4.0) << a.mean;
    const auto b = checks::inverse_gaussian_mean(2.0, 8.0, 100000, 40);
    EXPECT_LE(b.z(), 4.0) << b.mean;
    // variance mu^3 / nu
    Rng rng(41);
    double s = 0, s2 = 0;
    const int n = 100000;
    for (int k = 0; k < n; ++k) {
        const double x = sample_inverse_gaussian(2.0, 8.0, rng);
        s += x;
        s2 += x * x;
    }
    const double var = s2 / n - (s / n) * (s / n);
    EXPECT_NEAR(var, 1.0, 0.1);
}

TEST(Sampler, InverseGaussianExtremeShapes) {
    Rng rng(42);
    for (int k = 0; k < 1000; ++k) {
        const double x = sample_inverse_gaussian(1e-3, 1e6, rng);
        EXPECT_GT(x, 0.0);
        EXPECT_NEAR(x, 1e-3, 1e-4);
        EXPECT_GT(sample_inverse_gaussian(100.0, 1e-4, rng), 0.0);
    }
}

TEST(Sampler, ScaleConditionalMeans) {
    std::mt19937_64 g(43);
    const Matrix U = oracle::random_matrix(6, 2, g, 0, 2);
    const Matrix V = oracle::random_matrix(5, 2, g, 0, 2);
    const int n = 100000;
    {
        const PriorSpec p{ElementPrior::exponential(), ScaleHyperprior::inverse_gamma(2.0, 1.5)};
        const double S = U.col(0).sum() + V.col(0).sum();
        const double shape = 2.0 + 11, scale = 1.5 + S;
        Rng rng(44);
        double s = 0;
        for (int k = 0; k < n; ++k) s += sample_gamma_conditional(p, U, V, 0, rng);
        const double mean = scale / (shape - 1);
        const double sd = scale / ((shape - 1) * std::sqrt(shape - 2));
        EXPECT_LE(std::abs(s / n - mean), 4 * sd / std::sqrt(n));
    }
    {
        const PriorSpec p{ElementPrior::exponential(), ScaleHyperprior::gamma(3.0)};
        const double S = U.col(1).sum() + V.col(1).sum();
        const double mu = std::sqrt(S / 3.0), nu = 2 * S;
        Rng rng(45);
        double s = 0;
        for (int k = 0; k < n; ++k) s += sample_gamma_conditional(p, U, V, 1, rng);
        EXPECT_LE(std::abs(s / n - mu), 4 * std::sqrt(mu * mu * mu / nu / n));
    }
    {
        // squared scale: E[gamma^2] is the IG mean in t
        const PriorSpec p{ElementPrior::truncated_gaussian(0.0), ScaleHyperprior::inverse_gamma(3.0, 0.5)};
        const double S2 = U.col(0).squaredNorm() + V.col(0).squaredNorm();
        const double shape = 3.0 + 11 / 2.0, scale = 0.5 + S2;
        Rng rng(46);
        double s = 0;
        for (int k = 0; k < n; ++k) {
            const double gmm = sample_gamma_conditional(p, U, V, 0, rng);
            s += gmm * gmm;
        }
        const double sd = scale / ((shape - 1) * std::sqrt(shape - 2));
        EXPECT_LE(std::abs(s / n - scale / (shape - 1)), 4 * sd / std::sqrt(n));
    }
}

TEST(Sampler, ScaleConditionalDegenerateColumn) {
    Matrix U = Matrix::Ones(3, 2), V = Matrix::Ones(4, 2);
    U.col(1).setZero();
    V.col(1).setZero();
    const PriorSpec g{ElementPrior::exponential(), ScaleHyperprior::gamma(2.0)};
    const auto c = scale_conditional(g, U, V, 1);
    EXPECT_EQ(c.kind, ScaleConditional::Kind::Prior);
    EXPECT_DOUBLE_EQ(c.p1, 7 - 0.5);
    Rng rng(47);
    for (int k = 0; k < 100; ++k) EXPECT_GT(sample_gamma_conditional(g, U, V, 1, rng), 0.0);
    const PriorSpec ig{ElementPrior::exponential(), ScaleHyperprior::inverse_gamma(1.0, 1.0)};
    const auto d = scale_conditional(ig, U, V, 1);
    EXPECT_EQ(d.kind, ScaleConditional::Kind::InverseGamma);
    EXPECT_DOUBLE_EQ(d.p2, 1.0);
}

TEST(Sampler, ScaleConditionalRejectsNonConjugate) {
    const Matrix U = Matrix::Ones(2, 2);
    EXPECT_THROW(scale_conditional({ElementPrior::heavy_tail(3.0), ScaleHyperprior::gamma(1.0)}, U, U, 0), ConfigError);
    EXPECT_THROW(scale_conditional({ElementPrior::truncated_gaussian(1.0), ScaleHyperprior::gamma(1.0)}, U, U, 0),
                 ConfigError);
}

TEST(Sampler, TruncatedMvnHalfNormal) {
    RowConditional rc{Vector::Zero(1), Matrix::Identity(1, 1), Matrix::Identity(1, 1)};
    Rng rng(48);
    Vector x = Vector::Ones(1);
    const int n = 20000;
    double s = 0;
    for (int k = 0; k < n; ++k) {
        x = sample_truncated_mvn(rc, 1, x, rng);
        s += x(0);
    }
    const double target = std::sqrt(2 / std::numbers::pi);
    EXPECT_LE(std::abs(s / n - target), 4 * std::sqrt((1 - 2 / std::numbers::pi) / n));
}

TEST(Sampler, TruncatedMvnDeepInsideOrthant) {
    Matrix cov(2, 2);
    cov << 1.0, 0.5, 0.5, 1.0;
    RowConditional rc{Vector::Constant(2, 10.0), cov, cov.inverse()};
    Rng rng(49);
    Vector x = Vector::Constant(2, 10.0);
    const int n = 10000;
    Vector s = Vector::Zero(2);
    for (int k = 0; k < n; ++k) {
        x = sample_truncated_mvn(rc, 4, x, rng);
        s += x;
    }
    EXPECT_LE((s / n - rc.mean).cwiseAbs().maxCoeff(), 4 * std::sqrt(1.0 / n));
}

TEST(Sampler, TruncatedMvnSupportAndErrors) {
    std::mt19937_64 g(50);
    Rng rng(51);
    for (int k = 0; k < 50; ++k) {
        const Matrix A = oracle::random_matrix(4, 4, g, -1, 1);
        const Matrix Q = A * A.transpose() + 0.1 * Matrix::Identity(4, 4);
        RowConditional rc{oracle::random_matrix(4, 1, g, -5, 2).col(0), Q.inverse(), Q};
        const Vector x = sample_truncated_mvn(rc, 3, Vector::Zero(4), rng);
        EXPECT_GE(x.minCoeff(), 0.0);
    }
    RowConditional rc{Vector::Zero(2), Matrix::Identity(2, 2), Matrix::Identity(2, 2)};
    EXPECT_THROW(sample_truncated_mvn(rc, 1, Vector::Zero(3), rng), StructuralError);
    EXPECT_THROW(sample_truncated_mvn(rc, 1, Vector::Constant(2, -1.0), rng), DomainError);
}

namespace {

SyntheticData small_problem(int m, int r, int K, double sigma2, std::uint64_t seed) {
    SyntheticSpec s;
    s.m1 = s.m2 = m;
    s.r_true = r;
    s.K = K;
    s.sigma2 = sigma2;
    s.seed = seed;
    return generate_synthetic(s);
}

} // namespace

TEST(Gibbs, StepIsDeterministicAndKeepsSupport) {
    const auto d = small_problem(10, 2, 3, 0.01, 5);
    const ModelConfig cfg = ModelConfig::theorem(0.01, 3);
    const PriorSpec p{ElementPrior::exponential(), ScaleHyperprior::gamma(1.0)};
    GibbsConfig gc;
    gc.burn_in = 2;
    ChainState a, b;
    Rng ra(7), rb(7);
    a.fac = b.fac = default_init(d.Y, 3, ra);
    default_init(d.Y, 3, rb);
    for (int k = 0; k < 200; ++k) {
        a = gibbs_step(std::move(a), d.Y, cfg, gc, p, ra);
        b = gibbs_step(std::move(b), d.Y, cfg, gc, p, rb);
        ASSERT_GE(a.fac.U().minCoeff(), 0.0);
        ASSERT_GE(a.fac.V().minCoeff(), 0.0);
        ASSERT_GT(a.fac.gamma().minCoeff(), 0.0);
    }
    EXPECT_EQ(a.fac.U(), b.fac.U());
    EXPECT_EQ(a.fac.gamma(), b.fac.gamma());
    EXPECT_EQ(a.kept, 198);
    EXPECT_EQ(a.iteration, 200);
}

TEST(Gibbs, NoiselessRankOneRunningMean) {
    std::mt19937_64 g(52);
    const Matrix u = oracle::random_matrix(15, 1, g, 0.5, 2);
    const Matrix v = oracle::random_matrix(15, 1, g, 0.5, 2);
    const Matrix Y = u * v.transpose();
    const ModelConfig cfg = ModelConfig::theorem(0.01, 2);
    GibbsConfig gc;
    gc.n_iters = 300;
    gc.burn_in = 100;
    gc.seed = 3;
    const PriorSpec p{ElementPrior::exponential(), ScaleHyperprior::gamma(1.0)};
    const GibbsResult r = run_gibbs(Y, cfg, gc, p, Y);
    EXPECT_LE(mse(Y, r.Mhat), 0.1 * 0.01 * 10);
    EXPECT_LE(r.trace.back().mse_vs_truth, 0.01);
    EXPECT_TRUE(std::isnan(r.trace.front().mse_vs_truth));
}

TEST(Gibbs, RecoversLowRankMatrix) {
    const auto d = small_problem(30, 2, 5, 0.01, 9);
    const ModelConfig cfg = ModelConfig::theorem(0.01, 5);
    const PriorSpec p{ElementPrior::exponential(), ScaleHyperprior::gamma(1.0)};
    GibbsConfig gc;
    gc.seed = 1;
    const double e1 = mse(d.M, run_gibbs(d.Y, cfg, gc, p).Mhat);
    gc.seed = 2;
    const double e2 = mse(d.M, run_gibbs(d.Y, cfg, gc, p).Mhat);
    EXPECT_LE(e1, 0.05);
    EXPECT_LE(e2, 0.05);
    EXPECT_LE(std::abs(e1 - e2), 0.25 * std::max(e1, e2));
}

TEST(Gibbs, TruncGaussPathRuns) {
    const auto d = small_problem(20, 2, 3, 0.01, 10);
    const ModelConfig cfg = ModelConfig::theorem(0.01, 3);
    const PriorSpec p{ElementPrior::truncated_gaussian(0.0), ScaleHyperprior::inverse_gamma(1.0, 1.0)};
    GibbsConfig gc;
    gc.n_iters = 400;
    gc.burn_in = 100;
    EXPECT_LE(mse(d.M, run_gibbs(d.Y, cfg, gc, p).Mhat), 0.05);
}

TEST(Gibbs, SingleKeptSampleIsFinalReconstruction) {
    const auto d = small_problem(8, 1, 2, 0.01, 11);
    const ModelConfig cfg = ModelConfig::theorem(0.01, 2);
    GibbsConfig gc;
    gc.n_iters = 20;
    gc.burn_in = 19;
    const GibbsResult r = run_gibbs(d.Y, cfg, gc, {ElementPrior::exponential(), ScaleHyperprior::gamma(1.0)});
    EXPECT_LE((r.Mhat - reconstruct(r.final)).cwiseAbs().maxCoeff(), 1e-12);
}

TEST(Gibbs, ConfigErrors) {
    const auto d = small_problem(8, 1, 2, 0.01, 12);
    const ModelConfig cfg = ModelConfig::theorem(0.01, 2);
    GibbsConfig gc;
    gc.n_iters = 10;
    gc.burn_in = 10;
    const PriorSpec p{ElementPrior::exponential(), ScaleHyperprior::gamma(1.0)};
    EXPECT_THROW(run_gibbs(d.Y, cfg, gc, p), ConfigError);
    gc.burn_in = 2;
    EXPECT_THROW(run_gibbs(d.Y, cfg, gc, {ElementPrior::heavy_tail(3.0), ScaleHyperprior::gamma(1.0)}), ConfigError);
    EXPECT_THROW(run_gibbs(d.Y, cfg, gc, {ElementPrior::truncated_gaussian(0.5), ScaleHyperprior::gamma(1.0)}),
                 ConfigError);
    EXPECT_THROW(run_gibbs(d.Y, ModelConfig::theorem(0.01, 9), gc, p), ConfigError);
}
