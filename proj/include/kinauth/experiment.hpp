#pragma once

#include <filesystem>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include "kinauth/config.hpp"
#include "kinauth/gmm.hpp"
#include "kinauth/metrics.hpp"
#include "kinauth/signal.hpp"
#include "kinauth/synth.hpp"
#include "kinauth/training.hpp"

namespace kinauth {

// One corpus session, resampled to the pipeline rate; label is the dense
// user index within the session's split (sorted user ids), -1 if unset.
struct SessionData {
  SensorStream stream;
  std::string split;
  int label = -1;
};

// Reads the manifest and every session CSV under corpus_dir, resampling to
// rate_hz.
std::vector<SessionData> load_sessions(const std::filesystem::path& corpus_dir, double rate_hz);

// In-memory equivalent: synthesizes the corpus and resamples if the rates
// differ.
std::vector<SessionData> synthesize_session_data(const CorpusConfig& cfg, double rate_hz);

// Assigns labels: dense index of the user id within its split.
void assign_labels(std::vector<SessionData>& sessions);

struct PipelineStats {
  NormalizationStats norm;
  ChannelStats channels;
};

// Fit on the train split only.
PipelineStats fit_pipeline_stats(const std::vector<SessionData>& sessions);

// Plain-text persistence (atomic write, full precision).
void save_pipeline_stats(const std::filesystem::path& path, const PipelineStats& stats);
PipelineStats load_pipeline_stats(const std::filesystem::path& path);

struct TrainArtifacts {
  ModelGraph model;  // best-validation checkpoint, classification head attached
  TrainResult result;
  PipelineStats stats;
  int n_classes = 0;
  double topk_accuracy = -1.0;  // on held-out train-user sessions; -1 if none
};

// Trains the feature extractor on the train split: per user, the last
// holdout_sessions sessions become validation, the rest training. Sessions
// are cut into non-overlapping chunks of block_count blocks each. Passing
// stats skips refitting them.
TrainArtifacts run_training(const std::vector<SessionData>& sessions, const ExperimentConfig& cfg,
                            const PipelineStats* stats = nullptr);

// Number of sliding blocks a frame count supports.
int max_blocks(int n_frames, int block_len, double overlap);

// Verification features for one session: extractor mode runs the stripped
// network over every sliding block (one pooled vector per block at
// rate/stride Hz); raw mode returns the normalized 14-d frames at the full
// rate. The PCA projection, if any, is applied by the caller.
Eigen::MatrixXd session_features(const SensorStream& stream, const ModelGraph* extractor,
                                 const PipelineStats& stats, const ExperimentConfig& cfg);

// Rate of the feature vector sequence produced by session_features.
double feature_rate_hz(const ModelGraph* extractor, const ExperimentConfig& cfg);

struct BackgroundModel {
  GmmParams ubm;
  std::optional<PcaModel> pca;  // applied to every feature matrix when set
};

// Background density: train-split features (capped at ubm_max_vectors,
// optionally PCA-reduced), k-means initialization, EM.
BackgroundModel fit_background(const std::vector<SessionData>& sessions,
                               const ModelGraph* extractor, const PipelineStats& stats,
                               const ExperimentConfig& cfg);

// t-model subsets and z-sequences carved from disjoint val-split sessions.
ZtNormParams fit_cohorts(const BackgroundModel& bg, const std::vector<SessionData>& sessions,
                         const ModelGraph* extractor, const PipelineStats& stats,
                         const ExperimentConfig& cfg);

struct VerificationModel {
  GmmParams ubm;
  std::optional<PcaModel> pca;
  std::vector<ClientModel> clients;
  ZtNormParams ztnorm;
  PipelineStats stats;
};

// UBM fitting plus t/z cohort construction from the train and val splits.
VerificationModel fit_verification(const std::vector<SessionData>& sessions,
                                   const ModelGraph* extractor, const PipelineStats& stats,
                                   const ExperimentConfig& cfg);

// Enrolls every test-split user from its first enroll_sessions sessions.
void enroll_clients(VerificationModel& vm, const std::vector<SessionData>& sessions,
                    const ModelGraph* extractor, const ExperimentConfig& cfg);

// One scored verification window.
struct ScoredWindow {
  std::string client_id;
  std::string session_id;
  std::string device_id;
  bool genuine = false;
  double raw = 0.0;
  double z = 0.0;
  double zt = 0.0;
};

// Scores every non-enrollment test session against every client: genuine
// for the owner, impostor for everyone else.
std::vector<ScoredWindow> score_probes(const VerificationModel& vm,
                                       const std::vector<SessionData>& sessions,
                                       const ModelGraph* extractor, const ExperimentConfig& cfg);

struct EvalSummary {
  EerResult eer_raw, eer_z, eer_zt;
  double hter = -1.0;        // threshold from even sessions, error on odd; -1 if impossible
  double per_device_eer = -1.0;
  double per_session_eer = -1.0;
  long genuine_windows = 0;
  long impostor_windows = 0;
};

EvalSummary summarize_scores(const std::vector<ScoredWindow>& windows);

// Convenience used by the CLI and tests: splits scores into genuine /
// impostor vectors for one of the three normalization stages (0 raw, 1 z,
// 2 zt).
void split_scores(const std::vector<ScoredWindow>& windows, int stage,
                  std::vector<double>& genuine, std::vector<double>& impostor);

// Small fixed model + random input pair for finite-difference checking a
// cell family end to end.
struct GradCheckProbe {
  ModelGraph model;
  SequenceBatch seq;
  int label = 1;
};

GradCheckProbe make_gradcheck_probe(CellFamily family, std::uint64_t seed);

}  // namespace kinauth
