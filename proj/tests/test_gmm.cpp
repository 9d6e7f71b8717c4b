#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include "doctest.h"

#include <cmath>
#include <numbers>
#include <vector>

#include "kinauth/errors.hpp"
#include "kinauth/gmm.hpp"
#include "kinauth/rng.hpp"

using namespace kinauth;
using Eigen::MatrixXd;
using Eigen::VectorXd;

namespace {

MatrixXd random_samples(Rng& rng, int n, int d, double spread = 1.0) {
  MatrixXd m(n, d);
  for (int i = 0; i < n; ++i)
    for (int j = 0; j < d; ++j) m(i, j) = rng.normal(0.0, spread);
  return m;
}

// direct density evaluation without log-sum-exp
double naive_loglik(const VectorXd& y, const GmmParams& g) {
  double p = 0.0;
  for (int i = 0; i < g.components(); ++i) {
    double quad = 0.0, logdet = 0.0;
    for (int j = 0; j < g.dim(); ++j) {
      double d = y[j] - g.means(i, j);
      quad += d * d / g.vars(i, j);
      logdet += std::log(g.vars(i, j));
    }
    p += g.weights[i] *
         std::exp(-0.5 * (quad + logdet + g.dim() * std::log(2.0 * std::numbers::pi)));
  }
  return std::log(p);
}

GmmParams single_gaussian(double mu, double var) {
  GmmParams g;
  g.weights = VectorXd::Ones(1);
  g.means = MatrixXd::Constant(1, 1, mu);
  g.vars = MatrixXd::Constant(1, 1, var);
  return g;
}

}  // namespace

TEST_CASE("fit_pca recovers an exact low-dimensional subspace") {
  Rng rng(1);
  // points in a 2-d subspace of R^4
  MatrixXd basis(2, 4);
  basis << 1, 0, 1, 0, 0, 1, 0, -1;
  MatrixXd coeffs = random_samples(rng, 200, 2, 2.0);
  MatrixXd data = coeffs * basis;
  data.rowwise() += Eigen::RowVector4d(0.5, -1.0, 2.0, 0.0);
  PcaModel pca = fit_pca(data, 2);
  MatrixXd rec = pca_reconstruct(pca, pca_project(pca, data));
  CHECK((rec - data).cwiseAbs().maxCoeff() < 1e-9);
  // rows orthonormal
  MatrixXd gram = pca.basis * pca.basis.transpose();
  CHECK((gram - MatrixXd::Identity(2, 2)).cwiseAbs().maxCoeff() < 1e-9);
}

TEST_CASE("fit_pca captures about half the variance of an isotropic cloud") {
  Rng rng(2);
  MatrixXd data = random_samples(rng, 10000, 2);
  PcaModel pca = fit_pca(data, 1);
  MatrixXd proj = pca_project(pca, data);
  double var_kept = (proj.array() - proj.mean()).square().mean();
  double var_total = 0.0;
  for (int j = 0; j < 2; ++j) {
    auto col = data.col(j);
    var_total += (col.array() - col.mean()).square().mean();
  }
  CHECK(var_kept / var_total > 0.45);
  CHECK(var_kept / var_total < 0.55);
}

TEST_CASE("full-dimension PCA preserves pairwise distances") {
  Rng rng(3);
  MatrixXd data = random_samples(rng, 60, 5);
  PcaModel pca = fit_pca(data, 5);
  MatrixXd proj = pca_project(pca, data);
  for (int i = 0; i < 10; ++i)
    for (int j = i + 1; j < 10; ++j) {
      double orig = (data.row(i) - data.row(j)).norm();
      double got = (proj.row(i) - proj.row(j)).norm();
      CHECK(got == doctest::Approx(orig).epsilon(1e-9));
    }
}

TEST_CASE("fit_pca rejects d greater than the feature dimension") {
  Rng rng(4);
  MatrixXd data = random_samples(rng, 30, 3);
  CHECK_THROWS_AS(fit_pca(data, 4), std::invalid_argument);
}

TEST_CASE("kmeans with one component is the global mean") {
  Rng rng(5);
  MatrixXd data = random_samples(rng, 100, 3);
  GmmParams g = kmeans_init(data, 1, 10, 42);
  CHECK(g.weights[0] == doctest::Approx(1.0));
  for (int j = 0; j < 3; ++j)
    CHECK(g.means(0, j) == doctest::Approx(data.col(j).mean()).epsilon(1e-12));
}

TEST_CASE("kmeans separates two well-separated blobs") {
  Rng rng(6);
  MatrixXd data(200, 2);
  for (int i = 0; i < 100; ++i) {
    data(i, 0) = -5.0 + rng.normal(0.0, 0.05);
    data(i, 1) = 0.0 + rng.normal(0.0, 0.05);
    data(100 + i, 0) = 5.0 + rng.normal(0.0, 0.05);
    data(100 + i, 1) = 1.0 + rng.normal(0.0, 0.05);
  }
  GmmParams g = kmeans_init(data, 2, 20, 7);
  // match centroids to blobs by x sign
  int lo = g.means(0, 0) < 0 ? 0 : 1;
  int hi = 1 - lo;
  CHECK(std::abs(g.means(lo, 0) + 5.0) < 0.1);
  CHECK(std::abs(g.means(lo, 1) - 0.0) < 0.1);
  CHECK(std::abs(g.means(hi, 0) - 5.0) < 0.1);
  CHECK(std::abs(g.means(hi, 1) - 1.0) < 0.1);
  CHECK(g.weights[lo] == doctest::Approx(0.5).epsilon(1e-9));
}

TEST_CASE("kmeans rejects more components than samples") {
  Rng rng(8);
  MatrixXd data = random_samples(rng, 3, 2);
  CHECK_THROWS_AS(kmeans_init(data, 4, 5, 1), std::invalid_argument);
}

TEST_CASE("em with one component is the sample mean and variance in one iteration") {
  Rng rng(9);
  MatrixXd data = random_samples(rng, 500, 2, 1.7);
  GmmParams init = kmeans_init(data, 1, 2, 3);
  EmResult res = em_fit(data, init, 1);
  for (int j = 0; j < 2; ++j) {
    double mean = data.col(j).mean();
    double var = (data.col(j).array() - mean).square().mean();
    CHECK(res.gmm.means(0, j) == doctest::Approx(mean).epsilon(1e-9));
    CHECK(res.gmm.vars(0, j) == doctest::Approx(std::max(var, GmmParams::kVarFloor)).epsilon(1e-9));
  }
}

TEST_CASE("em log-likelihood never decreases") {
  Rng rng(10);
  for (int trial = 0; trial < 5; ++trial) {
    MatrixXd data = random_samples(rng, 150, 3, 1.0 + trial * 0.5);
    GmmParams init = kmeans_init(data, 4, 3, trial);
    EmResult res = em_fit(data, init, 50);
    for (std::size_t i = 1; i < res.loglik_curve.size(); ++i)
      CHECK(res.loglik_curve[i] >= res.loglik_curve[i - 1] - 1e-10);
  }
}

TEST_CASE("em on self-consistent data converges immediately") {
  Rng rng(11);
  MatrixXd data = random_samples(rng, 2000, 2);
  GmmParams init = kmeans_init(data, 1, 5, 9);
  EmResult warm = em_fit(data, init, 2);
  EmResult res = em_fit(data, warm.gmm, 10);
  for (std::size_t i = 1; i < res.loglik_curve.size(); ++i)
    CHECK(std::abs(res.loglik_curve[i] - res.loglik_curve[i - 1]) < 1e-6);
}

TEST_CASE("weights stay normalized and variances floored through em") {
  Rng rng(12);
  MatrixXd data = random_samples(rng, 120, 2, 0.01);  // tiny spread hits the floor
  GmmParams init = kmeans_init(data, 3, 5, 2);
  EmResult res = em_fit(data, init, 20);
  CHECK(res.gmm.weights.sum() == doctest::Approx(1.0).epsilon(1e-9));
  CHECK(res.gmm.vars.minCoeff() >= GmmParams::kVarFloor - 1e-18);
}

TEST_CASE("gmm_loglik closed form for the standard normal") {
  GmmParams g = single_gaussian(0.0, 1.0);
  double ll = gmm_loglik(VectorXd::Zero(1), g);
  CHECK(ll == doctest::Approx(-0.5 * std::log(2.0 * std::numbers::pi)).epsilon(1e-12));
  CHECK(ll == doctest::Approx(-0.918939).epsilon(1e-6));
}

TEST_CASE("duplicated components collapse to a single one") {
  GmmParams one = single_gaussian(0.7, 2.0);
  GmmParams two;
  two.weights = VectorXd(2);
  two.weights << 0.3, 0.7;
  two.means = MatrixXd::Constant(2, 1, 0.7);
  two.vars = MatrixXd::Constant(2, 1, 2.0);
  VectorXd y(1);
  y << -1.3;
  CHECK(gmm_loglik(y, two) == doctest::Approx(gmm_loglik(y, one)).epsilon(1e-12));
}

TEST_CASE("gmm_loglik stays finite far from every mean") {
  GmmParams g = single_gaussian(0.0, 1.0);
  VectorXd y(1);
  y << 50.0;
  double ll = gmm_loglik(y, g);
  CHECK(std::isfinite(ll));
  CHECK(ll < -1000.0);
}

TEST_CASE("gmm_loglik agrees with the naive density oracle") {
  Rng rng(13);
  for (int trial = 0; trial < 20; ++trial) {
    int M = 1 + (int)(rng.uniform(0.0, 1.0) * 4);
    int N = 1 + (int)(rng.uniform(0.0, 1.0) * 4);
    GmmParams g;
    g.weights = VectorXd(M);
    for (int i = 0; i < M; ++i) g.weights[i] = rng.uniform(0.1, 1.0);
    g.weights /= g.weights.sum();
    g.means = random_samples(rng, M, N, 2.0);
    g.vars = MatrixXd(M, N);
    for (int i = 0; i < M; ++i)
      for (int j = 0; j < N; ++j) g.vars(i, j) = rng.uniform(0.2, 3.0);
    VectorXd y = random_samples(rng, 1, N, 2.0).row(0);
    CHECK(gmm_loglik(y, g) == doctest::Approx(naive_loglik(y, g)).epsilon(1e-9));
    Eigen::MatrixXd Y = random_samples(rng, 5, N, 2.0);
    VectorXd rows = gmm_loglik_rows(Y, g);
    for (int r = 0; r < 5; ++r)
      CHECK(rows[r] == doctest::Approx(naive_loglik(Y.row(r), g)).epsilon(1e-9));
  }
}

TEST_CASE("responsibilities: single component and symmetric midpoint") {
  GmmParams g = single_gaussian(0.0, 1.0);
  VectorXd y(1);
  y << 3.0;
  CHECK(responsibilities(y, g)[0] == doctest::Approx(1.0));

  GmmParams two;
  two.weights = VectorXd::Constant(2, 0.5);
  two.means = MatrixXd(2, 1);
  two.means << -1.0, 1.0;
  two.vars = MatrixXd::Constant(2, 1, 1.0);
  VectorXd mid(1);
  mid << 0.0;
  VectorXd pr = responsibilities(mid, two);
  CHECK(pr[0] == doctest::Approx(0.5).epsilon(1e-12));
  CHECK(pr[1] == doctest::Approx(0.5).epsilon(1e-12));
}

TEST_CASE("responsibilities hand ratio e at y=0.5 for means -1, 1") {
  GmmParams two;
  two.weights = VectorXd::Constant(2, 0.5);
  two.means = MatrixXd(2, 1);
  two.means << -1.0, 1.0;
  two.vars = MatrixXd::Constant(2, 1, 1.0);
  VectorXd y(1);
  y << 0.5;
  VectorXd pr = responsibilities(y, two);
  CHECK(pr.sum() == doctest::Approx(1.0).epsilon(1e-12));
  CHECK(pr[1] / pr[0] == doctest::Approx(std::numbers::e).epsilon(1e-9));
  CHECK(pr[0] == doctest::Approx(1.0 / (1.0 + std::numbers::e)).epsilon(1e-9));
}

TEST_CASE("map_adapt with a huge relevance factor keeps the UBM means") {
  Rng rng(14);
  MatrixXd data = random_samples(rng, 200, 3);
  GmmParams ubm = em_fit(data, kmeans_init(data, 3, 5, 1), 10).gmm;
  MatrixXd enroll = random_samples(rng, 50, 3, 2.0);
  ClientModel c = map_adapt(ubm, enroll, 1e9, 5);
  CHECK((c.means - ubm.means).cwiseAbs().maxCoeff() < 1e-6);
}

TEST_CASE("map_adapt single component closed form: alpha one half") {
  GmmParams ubm = single_gaussian(2.0, 1.0);
  MatrixXd enroll(4, 1);
  enroll << 1.0, 3.0, 5.0, 7.0;  // mean 4
  ClientModel c = map_adapt(ubm, enroll, 4.0, 1);
  // n = 4, alpha = 4/(4+4) = 0.5, mu_hat = 0.5*4 + 0.5*2 = 3
  CHECK(c.means(0, 0) == doctest::Approx(3.0).epsilon(1e-12));
}

TEST_CASE("map_adapt leaves components without responsibility mass at the prior") {
  GmmParams ubm;
  ubm.weights = VectorXd::Constant(2, 0.5);
  ubm.means = MatrixXd(2, 1);
  ubm.means << 0.0, 1000.0;
  ubm.vars = MatrixXd::Constant(2, 1, 1.0);
  MatrixXd enroll(3, 1);
  enroll << -0.5, 0.0, 0.5;  // all mass on component 0
  ClientModel c = map_adapt(ubm, enroll, 4.0, 3);
  CHECK(c.means(1, 0) == doctest::Approx(1000.0).epsilon(1e-12));
  CHECK(c.means(0, 0) != doctest::Approx(0.0));
}

TEST_CASE("map_adapt rejects empty enrollment") {
  GmmParams ubm = single_gaussian(0.0, 1.0);
  CHECK_THROWS_AS(map_adapt(ubm, MatrixXd(0, 1), 4.0, 5), std::invalid_argument);
}

TEST_CASE("score_session: client identical to the UBM scores exactly zero") {
  Rng rng(15);
  MatrixXd data = random_samples(rng, 300, 2);
  GmmParams ubm = em_fit(data, kmeans_init(data, 2, 5, 4), 10).gmm;
  ClientModel c;
  c.means = ubm.means;
  MatrixXd Y = random_samples(rng, 40, 2, 3.0);
  auto records = score_session(Y, ubm, c, 10.0, 2.0, "s1", true);
  REQUIRE(records.size() == 2);  // 40 vectors at 2 Hz = 2 complete 10 s windows
  for (const auto& r : records) {
    CHECK(r.raw == doctest::Approx(0.0));
    CHECK(r.session_id == "s1");
    CHECK(r.genuine);
  }
}

TEST_CASE("score_session window bookkeeping and single-vector windows") {
  GmmParams ubm = single_gaussian(0.0, 1.0);
  ClientModel c;
  c.means = MatrixXd::Constant(1, 1, 0.5);
  MatrixXd Y(5, 1);
  Y << 0.1, -0.2, 0.3, 0.0, 0.9;
  // window of 1 vector: 5 records, each the pointwise ratio
  auto records = score_session(Y, ubm, c, 0.5, 2.0);
  REQUIRE(records.size() == 5);
  for (int i = 0; i < 5; ++i) {
    GmmParams client_g = ubm;
    client_g.means = c.means;
    double expect = gmm_loglik(Y.row(i), client_g) - gmm_loglik(Y.row(i), ubm);
    CHECK(records[i].raw == doctest::Approx(expect).epsilon(1e-12));
  }
  // incomplete trailing window dropped
  auto two = score_session(Y, ubm, c, 1.0, 2.0);
  CHECK(two.size() == 2);
}

TEST_CASE("scores from client-distributed samples are positive") {
  Rng rng(16);
  MatrixXd bg = random_samples(rng, 400, 2);
  GmmParams ubm = em_fit(bg, kmeans_init(bg, 2, 5, 5), 10).gmm;
  int wins = 0, total = 0;
  for (int seed = 0; seed < 20; ++seed) {
    Rng r2(seed + 100);
    MatrixXd enroll = random_samples(r2, 100, 2);
    enroll.array() += 1.5;  // client offset from the background
    ClientModel c = map_adapt(ubm, enroll, 4.0, 5);
    MatrixXd probe = random_samples(r2, 500, 2);
    probe.array() += 1.5;
    auto records = score_session(probe, ubm, c, 250.0, 2.0);
    for (const auto& rec : records) {
      ++total;
      if (rec.raw > 0.0) ++wins;
    }
  }
  CHECK(total > 0);
  CHECK(wins == total);  // 500-sample windows leave no room for doubt
}

TEST_CASE("score_session raw score is invariant to vector order inside a window") {
  Rng rng(17);
  MatrixXd bg = random_samples(rng, 200, 2);
  GmmParams ubm = em_fit(bg, kmeans_init(bg, 2, 4, 6), 5).gmm;
  MatrixXd enroll = random_samples(rng, 60, 2, 1.5);
  ClientModel c = map_adapt(ubm, enroll, 4.0, 3);
  MatrixXd Y = random_samples(rng, 30, 2);
  auto fwd = score_session(Y, ubm, c, 15.0, 2.0);
  MatrixXd rev = Y.colwise().reverse();
  auto bwd = score_session(rev, ubm, c, 15.0, 2.0);
  REQUIRE(fwd.size() == 1);
  REQUIRE(bwd.size() == 1);
  CHECK(fwd[0].raw == doctest::Approx(bwd[0].raw).epsilon(1e-12));
}

TEST_CASE("fit_ztnorm self-adaptation gives near-zero t-scores") {
  Rng rng(18);
  MatrixXd bg = random_samples(rng, 3000, 2);
  GmmParams ubm = em_fit(bg, kmeans_init(bg, 2, 5, 7), 20).gmm;
  // t-subset drawn from the same distribution as the UBM
  std::vector<MatrixXd> t_subsets = {random_samples(rng, 1500, 2)};
  std::vector<MatrixXd> z_seqs = {random_samples(rng, 400, 2)};
  ZtNormParams zt = fit_ztnorm(ubm, t_subsets, z_seqs, 4.0, 5, 10.0, 2.0);
  REQUIRE(zt.t_models.size() == 1);
  MatrixXd probe = random_samples(rng, 400, 2);
  auto recs = score_session(probe, ubm, zt.t_models[0].model, 200.0, 2.0);
  REQUIRE(recs.size() == 1);
  CHECK(std::abs(recs[0].raw) < 0.01);  // t-model is nearly the UBM itself
}

TEST_CASE("fit_ztnorm detects overlap between subsets") {
  Rng rng(19);
  MatrixXd bg = random_samples(rng, 200, 2);
  GmmParams ubm = em_fit(bg, kmeans_init(bg, 1, 3, 8), 5).gmm;
  MatrixXd shared = random_samples(rng, 30, 2);
  std::vector<MatrixXd> t_subsets = {shared, shared};  // identical rows overlap
  std::vector<MatrixXd> z_seqs = {random_samples(rng, 30, 2)};
  CHECK_THROWS_AS(fit_ztnorm(ubm, t_subsets, z_seqs, 4.0, 2, 10.0, 2.0),
                  std::invalid_argument);
}

TEST_CASE("zt normalization identity when both stages are standard") {
  ZtStats client_z{0.0, 1.0, false};
  ZtStats session_t{0.0, 1.0, false};
  std::vector<ScoreRecord> recs(3);
  recs[0].raw = 0.4;
  recs[1].raw = -1.1;
  recs[2].raw = 0.0;
  zt_apply(recs, client_z, session_t);
  for (const auto& r : recs) {
    CHECK(*r.z == doctest::Approx(r.raw));
    CHECK(*r.zt == doctest::Approx(r.raw));
  }
}

TEST_CASE("z-normalization is invariant to a common affine shift") {
  // shifting raw scores and the z-statistics' mean by the same constant
  // leaves the z-scores unchanged
  ZtStats z1{0.3, 0.7, false};
  ZtStats z2{0.3 + 5.0, 0.7, false};
  ZtStats t{0.0, 1.0, false};
  std::vector<ScoreRecord> a(1), b(1);
  a[0].raw = 1.1;
  b[0].raw = 1.1 + 5.0;
  zt_apply(a, z1, t);
  zt_apply(b, z2, t);
  CHECK(*a[0].z == doctest::Approx(*b[0].z).epsilon(1e-12));
}

TEST_CASE("z statistics flag a floored standard deviation") {
  Rng rng(20);
  MatrixXd bg = random_samples(rng, 200, 1);
  GmmParams ubm = em_fit(bg, kmeans_init(bg, 1, 3, 9), 5).gmm;
  ClientModel c;
  c.means = ubm.means;  // scores will be exactly 0 against every z-sequence
  ZtNormParams params;
  params.window_s = 10.0;
  params.feature_hz = 2.0;
  params.z_sequences = {random_samples(rng, 60, 1), random_samples(rng, 60, 1)};
  ZtStats zs = client_zstats(ubm, c, params);
  CHECK(zs.floored);
  CHECK(zs.stdev == doctest::Approx(1e-6));
}
