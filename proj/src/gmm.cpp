#include "kinauth/gmm.hpp"

#include <algorithm>
#include <cmath>
#include <cstring>
#include <iostream>
#include <limits>
#include <numeric>
#include <stdexcept>
#include <unordered_map>

#include "kinauth/errors.hpp"
#include "kinauth/rng.hpp"

namespace kinauth {

namespace {

constexpr double kLog2Pi = 1.8378770664093454836;  // log(2*pi)
constexpr double kZtStdFloor = 1e-6;

void check_gmm(const GmmParams& g) {
  if (g.components() < 1) throw std::invalid_argument("mixture needs at least one component");
  if (g.means.rows() != g.components() || g.vars.rows() != g.components() ||
      g.vars.cols() != g.means.cols())
    throw std::invalid_argument("inconsistent mixture parameter shapes");
}

// Per-sample per-component log(pi_i) + log N(y; mu_i, Sigma_i)
Eigen::MatrixXd component_logp(const Eigen::MatrixXd& Y, const GmmParams& g) {
  const int M = g.components();
  const long n = Y.rows();
  Eigen::MatrixXd logp(n, M);
  for (int i = 0; i < M; ++i) {
    const Eigen::ArrayXd inv_var = g.vars.row(i).transpose().array().inverse();
    const double c = std::log(g.weights(i)) -
                     0.5 * (g.dim() * kLog2Pi + g.vars.row(i).array().log().sum());
    Eigen::MatrixXd centered = Y.rowwise() - g.means.row(i);
    logp.col(i) =
        (-0.5 * (centered.array().square().rowwise() * inv_var.transpose()).rowwise().sum() + c)
            .matrix();
  }
  return logp;
}

Eigen::VectorXd logsumexp_rows(const Eigen::MatrixXd& logp) {
  Eigen::VectorXd mx = logp.rowwise().maxCoeff();
  return ((logp.colwise() - mx).array().exp().rowwise().sum().log() + mx.array()).matrix();
}

}  // namespace

PcaModel fit_pca(const Eigen::MatrixXd& samples, int d) {
  const long n = samples.rows();
  const long N = samples.cols();
  if (d < 1 || d > N) throw std::invalid_argument("pca dimension must be in [1, feature dim]");
  if (n <= d) throw std::invalid_argument("pca needs more samples than target dimensions");

  PcaModel pca;
  pca.mean = samples.colwise().mean().transpose();
  Eigen::MatrixXd centered = samples.rowwise() - pca.mean.transpose();
  Eigen::MatrixXd cov = centered.transpose() * centered / static_cast<double>(n);
  Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> solver(cov);
  if (solver.info() != Eigen::Success) throw NumericError("pca eigendecomposition failed");
  // eigenvalues ascending: take the top d, largest first
  pca.basis.resize(d, N);
  for (int r = 0; r < d; ++r) pca.basis.row(r) = solver.eigenvectors().col(N - 1 - r).transpose();
  return pca;
}

Eigen::MatrixXd pca_project(const PcaModel& pca, const Eigen::MatrixXd& samples) {
  if (samples.cols() != pca.mean.size()) throw DataError("pca input dimension mismatch");
  return (samples.rowwise() - pca.mean.transpose()) * pca.basis.transpose();
}

Eigen::MatrixXd pca_reconstruct(const PcaModel& pca, const Eigen::MatrixXd& projected) {
  if (projected.cols() != pca.dim()) throw DataError("pca projection dimension mismatch");
  return (projected * pca.basis).rowwise() + pca.mean.transpose();
}

GmmParams kmeans_init(const Eigen::MatrixXd& samples, int M, int iters, std::uint64_t seed) {
  const long n = samples.rows();
  if (M < 1) throw std::invalid_argument("component count must be positive");
  if (n < M) throw std::invalid_argument("k-means needs at least as many samples as components");

  Rng rng(derive_seed(seed, "kmeans", 0));
  std::vector<long> idx(n);
  std::iota(idx.begin(), idx.end(), 0);
  rng.shuffle(idx);
  Eigen::MatrixXd centroids(M, samples.cols());
  for (int i = 0; i < M; ++i) centroids.row(i) = samples.row(idx[i]);

  std::vector<int> assign(n, 0);
  auto assign_all = [&]() {
    for (long q = 0; q < n; ++q) {
      int best = 0;
      double best_d = (samples.row(q) - centroids.row(0)).squaredNorm();
      for (int i = 1; i < M; ++i) {
        double dist = (samples.row(q) - centroids.row(i)).squaredNorm();
        if (dist < best_d) {
          best_d = dist;
          best = i;
        }
      }
      assign[q] = best;
    }
  };

  for (int it = 0; it < iters; ++it) {
    assign_all();
    Eigen::MatrixXd sums = Eigen::MatrixXd::Zero(M, samples.cols());
    Eigen::VectorXd counts = Eigen::VectorXd::Zero(M);
    for (long q = 0; q < n; ++q) {
      sums.row(assign[q]) += samples.row(q);
      counts(assign[q]) += 1.0;
    }
    for (int i = 0; i < M; ++i) {
      if (counts(i) > 0) {
        centroids.row(i) = sums.row(i) / counts(i);
      } else {
        long far = 0;
        double far_d = -1.0;
        for (long q = 0; q < n; ++q) {
          double dist = (samples.row(q) - centroids.row(i)).squaredNorm();
          if (dist > far_d) {
            far_d = dist;
            far = q;
          }
        }
        centroids.row(i) = samples.row(far);
      }
    }
  }
  assign_all();

  GmmParams g;
  g.means = centroids;
  g.weights = Eigen::VectorXd::Zero(M);
  g.vars = Eigen::MatrixXd::Zero(M, samples.cols());
  Eigen::MatrixXd sq_sums = Eigen::MatrixXd::Zero(M, samples.cols());
  Eigen::MatrixXd sums = Eigen::MatrixXd::Zero(M, samples.cols());
  for (long q = 0; q < n; ++q) {
    const int i = assign[q];
    g.weights(i) += 1.0;
    sums.row(i) += samples.row(q);
    sq_sums.row(i) += samples.row(q).array().square().matrix();
  }
  for (int i = 0; i < M; ++i) {
    if (g.weights(i) > 0) {
      const double cnt = g.weights(i);
      Eigen::ArrayXd mean = sums.row(i).transpose().array() / cnt;
      g.means.row(i) = mean.matrix().transpose();
      g.vars.row(i) =
          (sq_sums.row(i).transpose().array() / cnt - mean.square()).matrix().transpose();
    }
  }
  g.vars = g.vars.cwiseMax(GmmParams::kVarFloor);
  g.weights /= static_cast<double>(n);
  return g;
}

EmResult em_fit(const Eigen::MatrixXd& samples, const GmmParams& init, int iters) {
  check_gmm(init);
  if (samples.cols() != init.dim()) throw DataError("em sample dimension mismatch");
  const long n = samples.rows();
  if (n < 1) throw std::invalid_argument("em needs samples");

  EmResult res;
  res.gmm = init;
  GmmParams& g = res.gmm;
  const Eigen::RowVectorXd global_var =
      ((samples.rowwise() - samples.colwise().mean()).array().square().colwise().sum() / n)
          .matrix()
          .cwiseMax(GmmParams::kVarFloor);

  for (int it = 0; it < iters; ++it) {
    Eigen::MatrixXd logp = component_logp(samples, g);
    Eigen::VectorXd lse = logsumexp_rows(logp);
    res.loglik_curve.push_back(lse.mean());
    Eigen::MatrixXd resp = ((logp.colwise() - lse).array().exp()).matrix();

    Eigen::VectorXd mass = resp.colwise().sum().transpose();
    Eigen::MatrixXd mean_num = resp.transpose() * samples;
    Eigen::MatrixXd sq_num = resp.transpose() * samples.array().square().matrix();

    for (int i = 0; i < g.components(); ++i) {
      if (mass(i) < 1e-10) {
        // component lost all responsibility mass: reseed at the sample the
        // current mixture explains worst
        long worst = 0;
        lse.minCoeff(&worst);
        g.means.row(i) = samples.row(worst);
        g.vars.row(i) = global_var;
        g.weights(i) = 1.0 / g.components();
        ++res.reinitialized;
        std::cerr << "warning: em reinitialized component " << i << " at iteration " << it
                  << "\n";
        continue;
      }
      Eigen::ArrayXd mean = mean_num.row(i).transpose().array() / mass(i);
      g.means.row(i) = mean.matrix().transpose();
      g.vars.row(i) = (sq_num.row(i).transpose().array() / mass(i) - mean.square())
                          .max(GmmParams::kVarFloor)
                          .matrix()
                          .transpose();
      g.weights(i) = mass(i) / static_cast<double>(n);
    }
    g.weights /= g.weights.sum();  // exact renormalization (also after reseeds)
  }
  return res;
}

double gmm_loglik(const Eigen::VectorXd& y, const GmmParams& g) {
  return gmm_loglik_rows(y.transpose(), g)(0);
}

Eigen::VectorXd gmm_loglik_rows(const Eigen::MatrixXd& Y, const GmmParams& g) {
  check_gmm(g);
  if (Y.cols() != g.dim()) throw DataError("feature dimension does not match mixture");
  return logsumexp_rows(component_logp(Y, g));
}

Eigen::VectorXd responsibilities(const Eigen::VectorXd& y, const GmmParams& g) {
  check_gmm(g);
  if (y.size() != g.dim()) throw DataError("feature dimension does not match mixture");
  Eigen::MatrixXd logp = component_logp(y.transpose(), g);
  Eigen::VectorXd lse = logsumexp_rows(logp);
  return ((logp.row(0).array() - lse(0)).exp()).matrix().transpose();
}

ClientModel map_adapt(const GmmParams& ubm, const Eigen::MatrixXd& enrollment, double r,
                      int iters) {
  check_gmm(ubm);
  if (enrollment.rows() < 1) throw std::invalid_argument("map adaptation needs enrollment data");
  if (enrollment.cols() != ubm.dim()) throw DataError("enrollment dimension mismatch");
  if (r < 0.0) throw std::invalid_argument("relevance factor must be non-negative");
  if (iters < 1) throw std::invalid_argument("map adaptation needs at least one iteration");

  ClientModel client;
  client.means = ubm.means;
  client.relevance = r;
  GmmParams current = ubm;  // adapted means with the UBM's weights/covariances

  for (int it = 0; it < iters; ++it) {
    current.means = client.means;
    Eigen::MatrixXd logp = component_logp(enrollment, current);
    Eigen::VectorXd lse = logsumexp_rows(logp);
    Eigen::MatrixXd resp = ((logp.colwise() - lse).array().exp()).matrix();
    Eigen::VectorXd n_i = resp.colwise().sum().transpose();
    Eigen::MatrixXd weighted = resp.transpose() * enrollment;
    for (int i = 0; i < ubm.components(); ++i) {
      if (n_i(i) <= 0.0) {
        client.means.row(i) = ubm.means.row(i);
        continue;
      }
      const double alpha = n_i(i) / (n_i(i) + r);
      Eigen::RowVectorXd e_i = weighted.row(i) / n_i(i);
      client.means.row(i) = alpha * e_i + (1.0 - alpha) * ubm.means.row(i);
    }
  }
  return client;
}

Eigen::VectorXd client_loglik_rows(const Eigen::MatrixXd& Y, const GmmParams& ubm,
                                   const ClientModel& client) {
  GmmParams g = ubm;  // weights and covariances shared with the UBM exactly
  g.means = client.means;
  return gmm_loglik_rows(Y, g);
}

std::vector<ScoreRecord> score_session(const Eigen::MatrixXd& Y, const GmmParams& ubm,
                                       const ClientModel& client, double window_s,
                                       double feature_hz, const std::string& session_id,
                                       bool genuine) {
  if (Y.rows() < 1) throw std::invalid_argument("scoring needs at least one feature vector");
  if (!(feature_hz > 0.0)) throw std::invalid_argument("feature rate must be positive");
  const long win = static_cast<long>(window_s * feature_hz + 1e-9);
  if (win < 1) throw std::invalid_argument("window covers no feature vector");

  Eigen::VectorXd ratio = client_loglik_rows(Y, ubm, client) - gmm_loglik_rows(Y, ubm);
  std::vector<ScoreRecord> records;
  for (long start = 0; start + win <= Y.rows(); start += win) {
    ScoreRecord rec;
    rec.raw = ratio.segment(start, win).mean();
    rec.session_id = session_id;
    rec.genuine = genuine;
    records.push_back(std::move(rec));
  }
  return records;
}

namespace {

std::uint64_t row_hash(const Eigen::MatrixXd& m, long row) {
  std::uint64_t h = 1469598103934665603ull;
  for (long c = 0; c < m.cols(); ++c) {
    double v = m(row, c);
    unsigned char bytes[sizeof(double)];
    std::memcpy(bytes, &v, sizeof(double));
    for (unsigned char b : bytes) {
      h ^= b;
      h *= 1099511628211ull;
    }
  }
  return h;
}

ZtStats pooled_stats(const std::vector<double>& values) {
  if (values.size() < 2)
    throw std::invalid_argument("z-statistics need at least two window scores");
  double mean = 0.0;
  for (double v : values) mean += v;
  mean /= static_cast<double>(values.size());
  double var = 0.0;
  for (double v : values) var += (v - mean) * (v - mean);
  var /= static_cast<double>(values.size());
  ZtStats st;
  st.mean = mean;
  st.stdev = std::sqrt(var);
  if (st.stdev < kZtStdFloor) {
    st.stdev = kZtStdFloor;
    st.floored = true;
    std::cerr << "warning: z-score deviation floored\n";
  }
  return st;
}

std::vector<double> window_scores(const Eigen::MatrixXd& session, const GmmParams& ubm,
                                  const ClientModel& client, const ZtNormParams& params) {
  auto records =
      score_session(session, ubm, client, params.window_s, params.feature_hz);
  std::vector<double> out;
  out.reserve(records.size());
  for (const auto& r : records) out.push_back(r.raw);
  return out;
}

}  // namespace

ZtStats client_zstats(const GmmParams& ubm, const ClientModel& client,
                      const ZtNormParams& params) {
  std::vector<double> scores;
  for (const auto& z_seq : params.z_sequences) {
    auto w = window_scores(z_seq, ubm, client, params);
    scores.insert(scores.end(), w.begin(), w.end());
  }
  return pooled_stats(scores);
}

ZtNormParams fit_ztnorm(const GmmParams& ubm, const std::vector<Eigen::MatrixXd>& t_subsets,
                        const std::vector<Eigen::MatrixXd>& z_sequences, double r, int iters,
                        double window_s, double feature_hz) {
  if (t_subsets.empty() || z_sequences.empty())
    throw std::invalid_argument("zt-norm needs t-subsets and z-sequences");

  // disjointness: no feature vector may appear in two sets
  struct Loc {
    int kind;  // 0 = t-subset, 1 = z-sequence
    int index;
    long row;
  };
  std::unordered_multimap<std::uint64_t, Loc> seen;
  auto check_set = [&seen](const Eigen::MatrixXd& m, int kind, int index,
                           const std::vector<Eigen::MatrixXd>& t_sets,
                           const std::vector<Eigen::MatrixXd>& z_sets) {
    auto row_of = [&](const Loc& loc) -> Eigen::RowVectorXd {
      return loc.kind == 0 ? t_sets[loc.index].row(loc.row) : z_sets[loc.index].row(loc.row);
    };
    for (long q = 0; q < m.rows(); ++q) {
      const std::uint64_t h = row_hash(m, q);
      auto range = seen.equal_range(h);
      for (auto it = range.first; it != range.second; ++it) {
        const Loc& loc = it->second;
        if (loc.kind == kind && loc.index == index) continue;
        if (row_of(loc) == m.row(q)) {
          auto name = [](int k, int i) {
            return (k == 0 ? "t-subset " : "z-sequence ") + std::to_string(i);
          };
          throw std::invalid_argument("zt-norm sets overlap: " + name(loc.kind, loc.index) +
                                      " and " + name(kind, index) + " share a vector");
        }
      }
      seen.emplace(h, Loc{kind, index, q});
    }
  };
  for (size_t i = 0; i < t_subsets.size(); ++i)
    check_set(t_subsets[i], 0, static_cast<int>(i), t_subsets, z_sequences);
  for (size_t i = 0; i < z_sequences.size(); ++i)
    check_set(z_sequences[i], 1, static_cast<int>(i), t_subsets, z_sequences);

  ZtNormParams params;
  params.z_sequences = z_sequences;
  params.window_s = window_s;
  params.feature_hz = feature_hz;
  params.relevance = r;
  params.map_iters = iters;
  params.t_models.reserve(t_subsets.size());
  for (size_t i = 0; i < t_subsets.size(); ++i) {
    TModel tm;
    tm.model = map_adapt(ubm, t_subsets[i], r, iters);
    tm.model.client_id = "t" + std::to_string(i);
    tm.z = client_zstats(ubm, tm.model, params);
    params.t_models.push_back(std::move(tm));
  }
  return params;
}

ZtStats t_session_stats(const ZtNormParams& params, const Eigen::MatrixXd& session,
                        const GmmParams& ubm) {
  std::vector<double> zscores;
  for (const auto& tm : params.t_models) {
    auto w = window_scores(session, ubm, tm.model, params);
    for (double v : w) zscores.push_back((v - tm.z.mean) / tm.z.stdev);
  }
  return pooled_stats(zscores);
}

std::pair<double, double> zt_normalize(double raw, const ZtStats& client_z,
                                       const ZtNormParams& params,
                                       const Eigen::MatrixXd& session, const GmmParams& ubm) {
  const double z = (raw - client_z.mean) / client_z.stdev;
  const ZtStats ts = t_session_stats(params, session, ubm);
  return {z, (z - ts.mean) / ts.stdev};
}

void zt_apply(std::vector<ScoreRecord>& records, const ZtStats& client_z,
              const ZtStats& session_t) {
  for (auto& rec : records) {
    const double z = (rec.raw - client_z.mean) / client_z.stdev;
    rec.z = z;
    rec.zt = (z - session_t.mean) / session_t.stdev;
  }
}

void zt_apply(std::vector<ScoreRecord>& records, const ZtStats& client_z,
              const ZtNormParams& params, const Eigen::MatrixXd& session, const GmmParams& ubm) {
  if (records.empty()) return;
  zt_apply(records, client_z, t_session_stats(params, session, ubm));
}

}  // namespace kinauth
