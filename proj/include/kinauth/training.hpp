#pragma once

#include <Eigen/Dense>
#include <optional>
#include <string>
#include <vector>

#include "kinauth/models.hpp"
#include "kinauth/signal.hpp"

namespace kinauth {

// Mean per-block negative log likelihood of the labelled class. A zero
// probability is clamped at 1e-12 (with a warning on stderr).
double sequence_loss(const Eigen::MatrixXd& probs, int label);
double sequence_loss(const ModelGraph& model, const SequenceBatch& seq, int label);

struct BackpropResult {
  double loss = 0.0;
  ModelGraph grads;  // same shape as the model, parameters hold d loss / d theta
};

// Exact gradients of sequence_loss by backpropagation through time.
// Clockwork inactive-band copies propagate through the identity, dense
// clockwork bands through their lagged history reads; the zero-constrained
// blocks of U stay identically zero.
BackpropResult backprop_sequence(const ModelGraph& model, const SequenceBatch& seq, int label,
                                 const DropoutMasks* dropout = nullptr);

struct GradCheckEntry {
  std::string group;
  double max_rel_err = 0.0;
};

struct GradCheckReport {
  double step = 0.0;
  double threshold = 0.0;
  double max_rel_err = 0.0;
  bool pass = false;
  std::vector<GradCheckEntry> groups;
};

// Central finite differences against the analytic gradient, one forward
// pair per parameter. Per parameter group, the relative error is taken over
// the whole accumulated vector:
// |analytic - numeric| / max(|analytic|, |numeric|, 1e-8).
GradCheckReport gradient_check(const ModelGraph& model, const SequenceBatch& seq, int label,
                               double step = 1e-3, double threshold = 1e-4);

// One training example: preassembled blocks, plus (optionally) the
// resampled raw stream they came from so augmentation can re-derive the
// features under a fresh obfuscation draw each epoch.
struct TrainExample {
  SequenceBatch seq;
  std::optional<SensorStream> raw;
  int label = 0;
};

// Pipeline context needed to rebuild blocks from a raw stream during
// augmented training.
struct AugmentContext {
  NormalizationStats norm;
  ChannelStats channels;
  int block_len = 50;
  int block_count = 20;
  double overlap = 0.5;
};

struct TrainConfig {
  double lr = 0.05;
  double lr_decay = 1.0;  // multiplicative, applied once per epoch
  int epochs = 40;
  int batch_size = 1;
  double dropout = 0.0;  // fully-connected layers only, inverted at train time
  std::uint64_t seed = 1;
  std::optional<AugmentContext> augment;  // set => per-example obfuscation draws
};

struct TrainResult {
  ModelGraph model;        // best validation checkpoint (final model if no val set)
  std::vector<double> train_curve;  // mean example loss per epoch
  std::vector<double> val_curve;
  int best_epoch = -1;
  bool diverged = false;   // aborted on non-finite loss; model is the last good state
};

// Shuffled mini-batch SGD. Batch gradient is the sum of per-example
// gradients; dropout masks and obfuscation draws are resampled per example
// from seeded sub-streams, so a fixed seed reproduces the run bit for bit.
TrainResult train_extractor(const std::vector<TrainExample>& train,
                            const std::vector<TrainExample>& val, ModelGraph model,
                            const TrainConfig& cfg);

// Drops the softmax head so forward_sequence emits per-block penultimate
// features only. Idempotent.
ModelGraph strip_head(const ModelGraph& model);

}  // namespace kinauth
