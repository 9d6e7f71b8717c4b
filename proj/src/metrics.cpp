#include "kinauth/metrics.hpp"

#include <algorithm>
#include <cmath>
#include <iostream>
#include <limits>
#include <numeric>
#include <stdexcept>

#include "kinauth/errors.hpp"
#include "kinauth/rng.hpp"

namespace kinauth {

double far_at(const std::vector<double>& impostor, double theta) {
  if (impostor.empty()) throw std::invalid_argument("no impostor scores");
  long n = 0;
  for (double s : impostor)
    if (s >= theta) ++n;
  return static_cast<double>(n) / static_cast<double>(impostor.size());
}

double frr_at(const std::vector<double>& genuine, double theta) {
  if (genuine.empty()) throw std::invalid_argument("no genuine scores");
  long n = 0;
  for (double s : genuine)
    if (s < theta) ++n;
  return static_cast<double>(n) / static_cast<double>(genuine.size());
}

DetCurve det_sweep(const std::vector<double>& genuine, const std::vector<double>& impostor) {
  if (genuine.empty() || impostor.empty())
    throw std::invalid_argument("det sweep needs genuine and impostor scores");

  std::vector<double> thresholds;
  thresholds.reserve(2 * (genuine.size() + impostor.size()));
  for (const auto* set : {&genuine, &impostor}) {
    for (double s : *set) {
      thresholds.push_back(s);
      thresholds.push_back(std::nextafter(s, std::numeric_limits<double>::infinity()));
    }
  }
  std::sort(thresholds.begin(), thresholds.end());
  thresholds.erase(std::unique(thresholds.begin(), thresholds.end()), thresholds.end());

  std::vector<double> gen_sorted = genuine;
  std::vector<double> imp_sorted = impostor;
  std::sort(gen_sorted.begin(), gen_sorted.end());
  std::sort(imp_sorted.begin(), imp_sorted.end());

  DetCurve curve;
  curve.points.reserve(thresholds.size());
  for (double theta : thresholds) {
    DetPoint p;
    p.theta = theta;
    p.far = static_cast<double>(imp_sorted.end() -
                                std::lower_bound(imp_sorted.begin(), imp_sorted.end(), theta)) /
            static_cast<double>(imp_sorted.size());
    p.frr = static_cast<double>(std::lower_bound(gen_sorted.begin(), gen_sorted.end(), theta) -
                                gen_sorted.begin()) /
            static_cast<double>(gen_sorted.size());
    curve.points.push_back(p);
  }
  return curve;
}

EerResult eer(const DetCurve& curve) {
  if (curve.points.empty()) throw std::invalid_argument("empty det curve");
  EerResult best{0.0, 0.0};
  double best_gap = std::numeric_limits<double>::infinity();
  for (const DetPoint& p : curve.points) {  // ascending theta: first minimum wins
    const double gap = std::abs(p.far - p.frr);
    if (gap < best_gap) {
      best_gap = gap;
      best.eer = 0.5 * (p.far + p.frr);
      best.theta = p.theta;
    }
  }
  return best;
}

double hter(const std::vector<double>& genuine, const std::vector<double>& impostor,
            double theta) {
  return 0.5 * (far_at(impostor, theta) + frr_at(genuine, theta));
}

double topk_session_accuracy(const std::vector<Eigen::MatrixXd>& session_outputs,
                             const std::vector<int>& labels, double p) {
  if (!(p > 0.0) || p > 1.0) throw std::invalid_argument("top fraction must be in (0,1]");
  if (session_outputs.empty() || session_outputs.size() != labels.size())
    throw DataError("session outputs and labels must align");

  const long C = session_outputs.front().cols();
  // Keep floor(p*C) classes, but always at least one. For a 587-class head at
  // p = 0.05 this keeps 29 classes; rounding up would keep 30 and quietly
  // loosen the criterion.
  const long keep = std::max<long>(1, static_cast<long>(std::floor(p * static_cast<double>(C))));
  long hits = 0;
  for (size_t s = 0; s < session_outputs.size(); ++s) {
    const Eigen::MatrixXd& probs = session_outputs[s];
    if (probs.cols() != C || probs.rows() < 1) throw DataError("inconsistent session outputs");
    if (labels[s] < 0 || labels[s] >= C) throw DataError("label out of range");
    Eigen::VectorXd mean = probs.colwise().mean().transpose();
    std::vector<long> order(C);
    std::iota(order.begin(), order.end(), 0);
    std::sort(order.begin(), order.end(), [&mean](long a, long b) {
      if (mean(a) != mean(b)) return mean(a) > mean(b);
      return a < b;
    });
    for (long r = 0; r < keep; ++r) {
      if (order[r] == labels[s]) {
        ++hits;
        break;
      }
    }
  }
  return static_cast<double>(hits) / static_cast<double>(session_outputs.size());
}

namespace {

// Minimal single-input cell used by the invariance probe: weights
// normal(0, 0.1), biases zero, one linear output unit.
struct ProbeCell {
  CellWeights w;
  Eigen::VectorXd v;  // output weights
};

ProbeCell make_probe(CellFamily family, const ClockworkConfig& cfg, std::uint64_t seed) {
  const int H = cfg.total_units();
  Rng rng(derive_seed(seed, "invariance", 0));
  auto fill = [&rng](Eigen::MatrixXd& m, long rows, long cols) {
    m.resize(rows, cols);
    for (long c = 0; c < cols; ++c)
      for (long r = 0; r < rows; ++r) m(r, c) = rng.normal(0.0, 0.1);
  };
  ProbeCell cell;
  if (family == CellFamily::lstm) {
    for (auto* m : {&cell.w.Wi, &cell.w.Wf, &cell.w.Wo, &cell.w.Wg}) fill(*m, H, 1);
    for (auto* m : {&cell.w.Ui, &cell.w.Uf, &cell.w.Uo, &cell.w.Ug}) fill(*m, H, H);
    for (auto* b : {&cell.w.bi, &cell.w.bf, &cell.w.bo, &cell.w.bg})
      *b = Eigen::VectorXd::Zero(H);
  } else {
    fill(cell.w.W, H, 1);
    fill(cell.w.U, H, H);
    if (family == CellFamily::cwrnn || family == CellFamily::dcwrnn)
      apply_clockwork_mask(cell.w.U, cfg);
    cell.w.b = Eigen::VectorXd::Zero(H);
  }
  cell.v.resize(H);
  for (long i = 0; i < H; ++i) cell.v(i) = rng.normal(0.0, 0.1);
  return cell;
}

Eigen::VectorXd run_probe(CellFamily family, const ProbeCell& cell, const ClockworkConfig& cfg,
                          const std::vector<double>& input) {
  const int H = cfg.total_units();
  Eigen::VectorXd out(input.size());
  Eigen::VectorXd h = Eigen::VectorXd::Zero(H);
  LstmState lstm{Eigen::VectorXd::Zero(H), Eigen::VectorXd::Zero(H)};
  HistoryBuffer hist(cfg);
  Eigen::VectorXd x(1);
  for (size_t t = 0; t < input.size(); ++t) {
    x(0) = input[t];
    switch (family) {
      case CellFamily::rnn:
        h = rnn_step(x, h, cell.w);
        break;
      case CellFamily::cwrnn:
        h = cwrnn_step(x, h, static_cast<long>(t), cell.w, cfg);
        break;
      case CellFamily::dcwrnn:
        h = dcwrnn_step(x, hist, cell.w, cfg);
        break;
      case CellFamily::lstm:
        lstm = lstm_step(x, lstm, cell.w);
        h = lstm.h;
        break;
      case CellFamily::conv_only:
        throw ConfigError("invariance probe needs a recurrent family");
    }
    out(t) = cell.v.dot(h);
  }
  return out;
}

}  // namespace

InvarianceReport invariance_trace(CellFamily family, const std::vector<double>& sequence,
                                  const ClockworkConfig& cfg, std::uint64_t seed) {
  const long runs = cfg.period(cfg.bands() - 1);  // base^(K-1)
  const long transient = runs;
  const long len = static_cast<long>(sequence.size());
  if (len <= transient)
    throw InsufficientDataError("sequence must outlast the pad and the transient prefix of " +
                                std::to_string(transient) + " steps");

  ProbeCell cell = make_probe(family, cfg, seed);
  InvarianceReport report;
  report.runs = static_cast<int>(runs);
  report.transient = transient;
  report.traces.resize(runs, len);

  for (long x = 1; x <= runs; ++x) {
    std::vector<double> padded(static_cast<size_t>(x - 1), 0.0);
    padded.insert(padded.end(), sequence.begin(), sequence.end());
    Eigen::VectorXd trace = run_probe(family, cell, cfg, padded);
    report.traces.row(x - 1) = trace.segment(x - 1, len).transpose();  // drop the pad
  }

  double dev = 0.0;
  for (long s = transient; s < len; ++s) {
    const double spread = report.traces.col(s).maxCoeff() - report.traces.col(s).minCoeff();
    dev = std::max(dev, spread);
  }
  report.max_deviation = dev;
  return report;
}

GroupEerResult per_group_eer(const std::vector<GroupScores>& groups) {
  GroupEerResult res;
  double sum = 0.0;
  for (const auto& g : groups) {
    if (g.genuine.empty() || g.impostor.empty()) {
      ++res.skipped;
      std::cerr << "warning: group '" << g.group << "' lacks "
                << (g.genuine.empty() ? "genuine" : "impostor") << " scores, skipped\n";
      continue;
    }
    sum += eer(det_sweep(g.genuine, g.impostor)).eer;
    ++res.used;
  }
  if (res.used == 0) throw std::invalid_argument("no group has both score classes");
  res.mean_eer = sum / res.used;
  return res;
}

}  // namespace kinauth
