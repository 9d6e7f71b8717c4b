#pragma once

#include <Eigen/Dense>
#include <cstdint>
#include <string>
#include <vector>

#include "kinauth/models.hpp"

namespace kinauth {

// Score convention: higher = more genuine. FAR(theta) counts impostor
// scores >= theta, FRR(theta) genuine scores < theta.
struct DetPoint {
  double theta = 0.0;
  double far = 0.0;
  double frr = 0.0;
};

struct DetCurve {
  std::vector<DetPoint> points;  // ascending theta
};

// Evaluates FAR/FRR at every distinct score value and just above it, so
// every achievable (FAR, FRR) pair appears exactly once.
DetCurve det_sweep(const std::vector<double>& genuine, const std::vector<double>& impostor);

struct EerResult {
  double eer = 0.0;
  double theta = 0.0;
};

// Threshold minimizing |FAR - FRR| (ties toward lower theta);
// EER = (FAR + FRR)/2 there.
EerResult eer(const DetCurve& curve);

double far_at(const std::vector<double>& impostor, double theta);
double frr_at(const std::vector<double>& genuine, double theta);

// (FAR(theta) + FRR(theta)) / 2 with an externally fixed threshold.
double hter(const std::vector<double>& genuine, const std::vector<double>& impostor,
            double theta);

// Per session: mean of the per-block class distributions, keep the
// ceil(p*C) most probable classes, count a hit if the label is among them.
double topk_session_accuracy(const std::vector<Eigen::MatrixXd>& session_outputs,
                             const std::vector<int>& labels, double p);

struct InvarianceReport {
  Eigen::MatrixXd traces;  // runs x steps, aligned to the unpadded sequence
  double max_deviation = 0.0;  // max spread across runs, transient excluded
  long transient = 0;          // excluded prefix length base^(K-1)
  int runs = 0;                // base^(K-1)
};

// The shift-invariance probe: a cell with normal(0, 0.1) weights, zero
// biases, and a single linear output unit is run over the sequence padded
// with x-1 leading zeros for x = 1..base^(K-1); traces are re-aligned by
// dropping the pad and compared outside the transient prefix.
InvarianceReport invariance_trace(CellFamily family, const std::vector<double>& sequence,
                                  const ClockworkConfig& cfg, std::uint64_t seed);

struct GroupScores {
  std::string group;
  std::vector<double> genuine, impostor;
};

struct GroupEerResult {
  double mean_eer = 0.0;
  int used = 0;
  int skipped = 0;  // groups missing one class of scores
};

// EER per group at its own threshold, arithmetic mean across groups.
GroupEerResult per_group_eer(const std::vector<GroupScores>& groups);

}  // namespace kinauth
