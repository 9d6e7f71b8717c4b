#pragma once

#include <Eigen/Dense>
#include <cstdint>
#include <optional>
#include <string>
#include <utility>
#include <vector>

namespace kinauth {

struct PcaModel {
  Eigen::VectorXd mean;   // N
  Eigen::MatrixXd basis;  // d x N, rows orthonormal
  int dim() const { return static_cast<int>(basis.rows()); }
};

// Top-d principal directions of the centered samples (rows = samples).
// Requires more samples than d and d <= N.
PcaModel fit_pca(const Eigen::MatrixXd& samples, int d);
Eigen::MatrixXd pca_project(const PcaModel& pca, const Eigen::MatrixXd& samples);
Eigen::MatrixXd pca_reconstruct(const PcaModel& pca, const Eigen::MatrixXd& projected);

// Diagonal-covariance Gaussian mixture.
struct GmmParams {
  Eigen::VectorXd weights;  // M
  Eigen::MatrixXd means;    // M x N
  Eigen::MatrixXd vars;     // M x N, per-dimension variances, floored

  int components() const { return static_cast<int>(weights.size()); }
  int dim() const { return static_cast<int>(means.cols()); }
  static constexpr double kVarFloor = 1e-6;
};

// Lloyd iterations from M distinct seeded samples; an emptied cluster is
// reseeded at the point farthest from its previous centroid. Weights are
// cluster fractions, variances within-cluster (floored).
GmmParams kmeans_init(const Eigen::MatrixXd& samples, int M, int iters, std::uint64_t seed);

struct EmResult {
  GmmParams gmm;
  std::vector<double> loglik_curve;  // mean log-likelihood entering each iteration
  int reinitialized = 0;             // components reseeded after losing all mass
};

// Standard diagonal-covariance EM. The recorded likelihood sequence is
// non-decreasing up to the variance floor.
EmResult em_fit(const Eigen::MatrixXd& samples, const GmmParams& init, int iters);

// log sum_i pi_i N(y; mu_i, Sigma_i), evaluated via log-sum-exp.
double gmm_loglik(const Eigen::VectorXd& y, const GmmParams& g);
Eigen::VectorXd gmm_loglik_rows(const Eigen::MatrixXd& Y, const GmmParams& g);

Eigen::VectorXd responsibilities(const Eigen::VectorXd& y, const GmmParams& g);

struct ZtStats {
  double mean = 0.0;
  double stdev = 1.0;
  bool floored = false;  // stdev fell below 1e-6 and was clamped
};

// MAP-adapted client: means only; weights and covariances remain the UBM's
// (scoring always reads them from the UBM to keep the sharing exact).
struct ClientModel {
  std::string client_id;
  Eigen::MatrixXd means;  // M x N
  double relevance = 4.0;
  std::optional<ZtStats> z;  // filled at enrollment when zt-norm is in use
};

// Mean-only MAP adaptation: per iteration n_i = sum_q Pr(i|y_q),
// E_i = (1/n_i) sum_q Pr(i|y_q) y_q, alpha_i = n_i/(n_i+r),
// mu_hat_i = alpha_i E_i + (1-alpha_i) mu_i with the UBM prior mean;
// responsibilities recomputed against the current adapted means.
ClientModel map_adapt(const GmmParams& ubm, const Eigen::MatrixXd& enrollment, double r,
                      int iters);

Eigen::VectorXd client_loglik_rows(const Eigen::MatrixXd& Y, const GmmParams& ubm,
                                   const ClientModel& client);

struct ScoreRecord {
  double raw = 0.0;
  std::optional<double> z, zt;
  std::string session_id;
  bool genuine = false;
};

// Splits Y (rows = feature vectors at feature_hz) into complete windows of
// window_s seconds and emits one record per window with
// raw = mean_q [log p(y_q|client) - log p(y_q|UBM)].
std::vector<ScoreRecord> score_session(const Eigen::MatrixXd& Y, const GmmParams& ubm,
                                       const ClientModel& client, double window_s,
                                       double feature_hz, const std::string& session_id = "",
                                       bool genuine = false);

struct TModel {
  ClientModel model;
  ZtStats z;
};

struct ZtNormParams {
  std::vector<TModel> t_models;
  std::vector<Eigen::MatrixXd> z_sequences;  // impostor sessions, rows = vectors
  double window_s = 30.0;
  double feature_hz = 2.0;
  double relevance = 4.0;
  int map_iters = 5;
};

// Builds one t-model per subset (MAP from the UBM) and its z-statistics
// from the z-sequences. Subsets must be disjoint from each other and from
// the z-sequences.
ZtNormParams fit_ztnorm(const GmmParams& ubm, const std::vector<Eigen::MatrixXd>& t_subsets,
                        const std::vector<Eigen::MatrixXd>& z_sequences, double r, int iters,
                        double window_s, double feature_hz);

// z-statistics of one client: mean/std of all window scores of the
// z-sequences against it (std floored at 1e-6 and flagged).
ZtStats client_zstats(const GmmParams& ubm, const ClientModel& client,
                      const ZtNormParams& params);

// Statistics of the session's z-normalized window scores against all
// t-models. Client-independent, so it can be computed once per session.
ZtStats t_session_stats(const ZtNormParams& params, const Eigen::MatrixXd& session,
                        const GmmParams& ubm);

// (Lambda_z, Lambda_zt) for one raw window score of the given session.
// Lambda_z standardizes by the client's z-statistics; Lambda_zt further
// standardizes by the statistics of the session's z-normalized scores
// against all t-models.
std::pair<double, double> zt_normalize(double raw, const ZtStats& client_z,
                                       const ZtNormParams& params,
                                       const Eigen::MatrixXd& session, const GmmParams& ubm);

// Fills z/zt for every record of one session given precomputed t-statistics.
void zt_apply(std::vector<ScoreRecord>& records, const ZtStats& client_z,
              const ZtStats& session_t);

// Fills z/zt for every record of one session, computing the session's
// t-model statistics once.
void zt_apply(std::vector<ScoreRecord>& records, const ZtStats& client_z,
              const ZtNormParams& params, const Eigen::MatrixXd& session, const GmmParams& ubm);

}  // namespace kinauth
