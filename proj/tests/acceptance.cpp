// Shipping gate: one pass/fail line per requirement, with the measured
// numbers next to each verdict. Run with no arguments for the full gate, or
// pass criterion numbers (e.g. `acceptance 1 5 8`) to run a subset.
// Exit code = number of failed criteria.

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <cstring>
#include <map>
#include <set>
#include <string>
#include <vector>

#include "kinauth/errors.hpp"
#include "kinauth/experiment.hpp"
#include "kinauth/gmm.hpp"
#include "kinauth/metrics.hpp"
#include "kinauth/models.hpp"
#include "kinauth/rng.hpp"
#include "kinauth/synth.hpp"
#include "kinauth/training.hpp"

using namespace kinauth;
using Clock = std::chrono::steady_clock;

namespace {

double secs_since(Clock::time_point t0) {
  return std::chrono::duration<double>(Clock::now() - t0).count();
}

int g_failures = 0;

void report(int n, bool pass, const std::string& name, const std::string& detail) {
  std::printf("[%2d] %s  %-34s %s\n", n, pass ? "PASS" : "FAIL", name.c_str(), detail.c_str());
  std::fflush(stdout);
  if (!pass) ++g_failures;
}

std::string fmt(const char* f, ...) {
  char buf[512];
  va_list ap;
  va_start(ap, f);
  std::vsnprintf(buf, sizeof buf, f, ap);
  va_end(ap);
  return buf;
}

// ---------------------------------------------------------------- criterion 1

void criterion_gradients() {
  const auto t0 = Clock::now();
  const CellFamily families[] = {CellFamily::rnn, CellFamily::lstm, CellFamily::cwrnn,
                                 CellFamily::dcwrnn, CellFamily::conv_only};
  double worst = 0.0;
  int checked = 0, failed = 0;
  for (CellFamily family : families) {
    for (int i = 0; i < 10; ++i) {
      const GradCheckProbe probe = make_gradcheck_probe(family, 1000 + 31 * i);
      const GradCheckReport rep = gradient_check(probe.model, probe.seq, probe.label, 1e-3, 1e-4);
      worst = std::max(worst, rep.max_rel_err);
      ++checked;
      if (!rep.pass) ++failed;
    }
  }
  const double dt = secs_since(t0);
  const bool pass = failed == 0 && dt < 120.0;
  report(1, pass, "analytic vs numeric gradients",
         fmt("%d/%d instances under 1e-4 (worst %.2e, step 1e-3, wide accumulation), %.1f s",
             checked - failed, checked, worst, dt));
}

// ---------------------------------------------------------------- criterion 2

void criterion_shift_invariance() {
  const auto t0 = Clock::now();
  ClockworkConfig clock;
  clock.base = 2;
  clock.units_per_band.assign(8, 1);  // 8 bands, 8 hidden units, 128 shifts

  int good_seeds = 0;
  double worst_tied = 0.0, best_gated = 1e300;
  for (int s = 0; s < 20; ++s) {
    Rng rng(derive_seed(7100, "shift-input", static_cast<std::uint64_t>(s)));
    std::vector<double> seq(200);
    for (auto& v : seq) v = rng.normal();
    const InvarianceReport rnn = invariance_trace(CellFamily::rnn, seq, clock, 7100 + s);
    const InvarianceReport cw = invariance_trace(CellFamily::cwrnn, seq, clock, 7100 + s);
    const InvarianceReport dcw = invariance_trace(CellFamily::dcwrnn, seq, clock, 7100 + s);
    if (rnn.runs != 128 || cw.runs != 128 || dcw.runs != 128)
      throw NumericError("expected 128 shifted runs");
    worst_tied = std::max({worst_tied, rnn.max_deviation, dcw.max_deviation});
    best_gated = std::min(best_gated, cw.max_deviation);
    if (rnn.max_deviation < 1e-9 && dcw.max_deviation < 1e-9 && cw.max_deviation > 1e-3)
      ++good_seeds;
  }
  const double dt = secs_since(t0);
  const bool pass = good_seeds >= 18 && dt < 60.0;
  report(2, pass, "shift invariance split",
         fmt("%d/20 seeds (rnn+dcwrnn worst %.1e < 1e-9, cwrnn min %.1e > 1e-3), %.1f s",
             good_seeds, worst_tied, best_gated, dt));
}

// ---------------------------------------------------------------- criterion 3

void criterion_single_band_equivalence() {
  double worst = 0.0;
  for (int trial = 0; trial < 100; ++trial) {
    Rng rng(derive_seed(7300, "k1", static_cast<std::uint64_t>(trial)));
    const int units = 1 + static_cast<int>(rng.uniform(0.0, 6.0));
    const int dim = 1 + static_cast<int>(rng.uniform(0.0, 8.0));
    ClockworkConfig clock;
    clock.base = 2;
    clock.units_per_band = {units};

    CellWeights w;
    w.W.resize(units, dim);
    w.U.resize(units, units);
    w.b.resize(units);
    for (long i = 0; i < w.W.size(); ++i) w.W.data()[i] = rng.normal(0.0, 0.5);
    for (long i = 0; i < w.U.size(); ++i) w.U.data()[i] = rng.normal(0.0, 0.5);
    for (long i = 0; i < w.b.size(); ++i) w.b.data()[i] = rng.normal(0.0, 0.5);

    HistoryBuffer hist(clock);
    Eigen::VectorXd h = Eigen::VectorXd::Zero(units);
    for (int t = 0; t < 40; ++t) {
      Eigen::VectorXd x(dim);
      for (int i = 0; i < dim; ++i) x(i) = rng.normal();
      const Eigen::VectorXd via_rnn = rnn_step(x, h, w);
      const Eigen::VectorXd via_dcw = dcwrnn_step(x, hist, w, clock);
      worst = std::max(worst, (via_rnn - via_dcw).cwiseAbs().maxCoeff());
      hist.push(via_dcw);
      h = via_rnn;
    }
  }
  report(3, worst < 1e-12, "single-band clockwork == vanilla rnn",
         fmt("100 sequences, worst step deviation %.2e < 1e-12", worst));
}

// ---------------------------------------------------------------- criterion 4

void criterion_param_parity() {
  int equal = 0;
  const int trials = 50;
  for (int trial = 0; trial < trials; ++trial) {
    Rng rng(derive_seed(7400, "parity", static_cast<std::uint64_t>(trial)));
    ClockworkConfig clock;
    clock.base = 2 + static_cast<int>(rng.uniform(0.0, 2.0));
    const int bands = 1 + static_cast<int>(rng.uniform(0.0, 4.0));
    for (int k = 0; k < bands; ++k)
      clock.units_per_band.push_back(1 + static_cast<int>(rng.uniform(0.0, 4.0)));
    const int dim = 2 + static_cast<int>(rng.uniform(0.0, 8.0));
    const int classes = 2 + static_cast<int>(rng.uniform(0.0, 4.0));
    ConvSpec conv;
    if (rng.uniform(0.0, 1.0) < 0.5) conv.layers = {{3, 3, 2}};

    ModelGraph cw = make_model(CellFamily::cwrnn, dim, classes, conv, clock, 0, 1);
    ModelGraph dcw = make_model(CellFamily::dcwrnn, dim, classes, conv, clock, 0, 1);
    if (count_params(cw) == count_params(dcw)) ++equal;
  }
  report(4, equal == trials, "cwrnn / dcwrnn parameter parity",
         fmt("%d/%d random configурations equal exactly", equal, trials));
}

// ---------------------------------------------------------------- criterion 5

void criterion_buffer_capacity() {
  int checked = 0, wrong = 0;
  double worst = 0.0;
  for (int base = 2; base <= 3; ++base) {
    for (int bands = 1; bands <= 6; ++bands) {
      Rng rng(derive_seed(7500, "buffer", static_cast<std::uint64_t>(base * 10 + bands)));
      ClockworkConfig clock;
      clock.base = base;
      long expect = 0;
      long period = 1;
      for (int k = 0; k < bands; ++k) {
        const int units = 1 + static_cast<int>(rng.uniform(0.0, 3.0));
        clock.units_per_band.push_back(units);
        expect += static_cast<long>(units) * (period - 1);
        period *= base;
      }
      ++checked;
      if (buffer_capacity(clock) != expect) ++wrong;

      // behavioral check: the ring buffer against a naive full-history model
      const int dim = 3;
      const int total = clock.total_units();
      CellWeights w;
      w.W.resize(total, dim);
      w.U.resize(total, total);
      w.b.resize(total);
      for (long i = 0; i < w.W.size(); ++i) w.W.data()[i] = rng.normal(0.0, 0.4);
      for (long i = 0; i < w.U.size(); ++i) w.U.data()[i] = rng.normal(0.0, 0.4);
      for (long i = 0; i < w.b.size(); ++i) w.b.data()[i] = rng.normal(0.0, 0.4);

      HistoryBuffer hist(clock);
      std::vector<Eigen::VectorXd> full;  // every past state, unbounded
      const Eigen::VectorXd zero = Eigen::VectorXd::Zero(total);
      for (int t = 0; t < 60; ++t) {
        Eigen::VectorXd x(dim);
        for (int i = 0; i < dim; ++i) x(i) = rng.normal();
        const Eigen::VectorXd via_buffer = dcwrnn_step(x, hist, w, clock);

        Eigen::VectorXd pre = w.W * x + w.b;
        for (int k = 0; k < bands; ++k) {
          long lag = 1;
          for (int j = 0; j < k; ++j) lag *= base;
          const Eigen::VectorXd& past =
              static_cast<long>(full.size()) >= lag ? full[full.size() - lag] : zero;
          const int off = clock.band_offset(k);
          const int nk = clock.units_per_band[k];
          pre.segment(off, nk) += w.U.middleRows(off, nk) * past;
        }
        const Eigen::VectorXd via_naive = pre.array().tanh();
        worst = std::max(worst, (via_buffer - via_naive).cwiseAbs().maxCoeff());
        hist.push(via_buffer);
        full.push_back(via_naive);
      }
    }
  }
  const bool pass = wrong == 0 && worst == 0.0;
  report(5, pass, "delay-buffer capacity and recall",
         fmt("%d configs (bands<=6, base<=3): capacity formula %s, naive-history deviation %.1e",
             checked, wrong == 0 ? "exact" : "WRONG", worst));
}

// ---------------------------------------------------------------- criterion 6

void criterion_em() {
  // (a) monotone mean log-likelihood over 100 iterations on 20 datasets
  int monotone = 0;
  for (int d = 0; d < 20; ++d) {
    Rng rng(derive_seed(7600, "em", static_cast<std::uint64_t>(d)));
    const int dim = 2 + static_cast<int>(rng.uniform(0.0, 4.0));
    const int n = 200 + static_cast<int>(rng.uniform(0.0, 200.0));
    const int M = 2 + static_cast<int>(rng.uniform(0.0, 3.0));
    Eigen::MatrixXd y(n, dim);
    for (int i = 0; i < n; ++i) {
      const double center = rng.uniform(0.0, 1.0) < 0.5 ? -2.0 : 2.0;
      for (int j = 0; j < dim; ++j) y(i, j) = center + rng.normal(0.0, 1.0);
    }
    GmmParams init = kmeans_init(y, M, 10, derive_seed(7600, "em-init", d));
    EmResult res = em_fit(y, init, 100);
    bool ok = true;
    for (std::size_t i = 1; i < res.loglik_curve.size(); ++i)
      ok = ok && res.loglik_curve[i] >= res.loglik_curve[i - 1] - 1e-10;
    if (ok) ++monotone;
  }

  // (b) single-component closed form after one iteration
  double worst_closed = 0.0;
  {
    Rng rng(7601);
    Eigen::MatrixXd y(120, 3);
    for (long i = 0; i < y.size(); ++i) y.data()[i] = rng.normal(1.0, 2.0);
    GmmParams init = kmeans_init(y, 1, 5, 1);
    EmResult res = em_fit(y, init, 1);
    const Eigen::VectorXd mean = y.colwise().mean();
    for (int j = 0; j < 3; ++j) {
      const double var =
          std::max((y.col(j).array() - mean(j)).square().sum() / y.rows(), GmmParams::kVarFloor);
      worst_closed = std::max(worst_closed, std::abs(res.gmm.means(0, j) - mean(j)));
      worst_closed = std::max(worst_closed, std::abs(res.gmm.vars(0, j) - var));
    }
  }

  // (c) log-likelihood against a direct-density oracle
  double worst_ll = 0.0;
  for (int trial = 0; trial < 20; ++trial) {
    Rng rng(derive_seed(7600, "ll", static_cast<std::uint64_t>(trial)));
    const int M = 1 + static_cast<int>(rng.uniform(0.0, 4.0));
    const int dim = 1 + static_cast<int>(rng.uniform(0.0, 4.0));
    GmmParams g;
    g.weights.resize(M);
    g.means.resize(M, dim);
    g.vars.resize(M, dim);
    double wsum = 0.0;
    for (int m = 0; m < M; ++m) {
      g.weights(m) = rng.uniform(0.2, 1.0);
      wsum += g.weights(m);
      for (int j = 0; j < dim; ++j) {
        g.means(m, j) = rng.normal(0.0, 2.0);
        g.vars(m, j) = rng.uniform(0.3, 2.0);
      }
    }
    g.weights /= wsum;
    for (int i = 0; i < 30; ++i) {
      Eigen::VectorXd yv(dim);
      for (int j = 0; j < dim; ++j) yv(j) = rng.normal(0.0, 2.0);
      double density = 0.0;
      for (int m = 0; m < M; ++m) {
        double comp = g.weights(m);
        for (int j = 0; j < dim; ++j)
          comp *= std::exp(-0.5 * (yv(j) - g.means(m, j)) * (yv(j) - g.means(m, j)) / g.vars(m, j)) /
                  std::sqrt(2.0 * M_PI * g.vars(m, j));
        density += comp;
      }
      worst_ll = std::max(worst_ll, std::abs(gmm_loglik(g, yv) - std::log(density)));
    }
  }

  const bool pass = monotone == 20 && worst_closed < 1e-9 && worst_ll < 1e-9;
  report(6, pass, "em: monotone, closed form, density",
         fmt("%d/20 monotone (slack 1e-10); M=1 err %.1e; oracle err %.1e", monotone,
             worst_closed, worst_ll));
}

// ---------------------------------------------------------------- criterion 7

void criterion_map() {
  // (a) adaptation coefficient: with one component every responsibility is
  // exactly 1, so alpha = Q/(Q+r) with no estimation slack
  double worst_alpha = 0.0;
  {
    Rng rng(7700);
    for (int trial = 0; trial < 20; ++trial) {
      const int Q = 1 + static_cast<int>(rng.uniform(0.0, 20.0));
      const double r = rng.uniform(0.5, 30.0);
      GmmParams ubm;
      ubm.weights = Eigen::VectorXd::Ones(1);
      ubm.means.resize(1, 2);
      ubm.means << rng.normal(0.0, 1.0), rng.normal(0.0, 1.0);
      ubm.vars = Eigen::MatrixXd::Ones(1, 2);
      Eigen::MatrixXd y(Q, 2);
      for (long i = 0; i < y.size(); ++i) y.data()[i] = rng.normal(0.0, 2.0);
      const ClientModel client = map_adapt(ubm, y, r, 1);
      const double alpha = static_cast<double>(Q) / (Q + r);
      for (int j = 0; j < 2; ++j) {
        const double expect = alpha * y.col(j).mean() + (1.0 - alpha) * ubm.means(0, j);
        worst_alpha = std::max(worst_alpha, std::abs(client.means(0, j) - expect));
      }
    }
  }

  // (b) huge relevance pins the client to the prior
  double worst_pin = 0.0;
  {
    Rng rng(7701);
    GmmParams ubm;
    ubm.weights = Eigen::VectorXd::Constant(2, 0.5);
    ubm.means.resize(2, 3);
    ubm.vars.resize(2, 3);
    for (long i = 0; i < ubm.means.size(); ++i) ubm.means.data()[i] = rng.normal(0.0, 1.0);
    for (long i = 0; i < ubm.vars.size(); ++i) ubm.vars.data()[i] = rng.uniform(0.5, 1.5);
    Eigen::MatrixXd y(50, 3);
    for (long i = 0; i < y.size(); ++i) y.data()[i] = rng.normal(0.0, 2.0);
    const ClientModel client = map_adapt(ubm, y, 1e9, 1);
    worst_pin = (client.means - ubm.means).cwiseAbs().maxCoeff();
  }

  // (c) the pinned halfway case
  double worst_half = 0.0;
  {
    GmmParams ubm;
    ubm.weights = Eigen::VectorXd::Ones(1);
    ubm.means = Eigen::MatrixXd::Constant(1, 1, 2.0);
    ubm.vars = Eigen::MatrixXd::Ones(1, 1);
    Eigen::MatrixXd y(4, 1);
    y << 1.0, 3.0, 5.0, 7.0;  // mean 4, Q=4, r=4 -> (4+2)/2 = 3
    const ClientModel client = map_adapt(ubm, y, 4.0, 1);
    worst_half = std::abs(client.means(0, 0) - 3.0);
  }

  const bool pass = worst_alpha < 1e-12 && worst_pin < 1e-6 && worst_half < 1e-12;
  report(7, pass, "map adaptation of means",
         fmt("alpha err %.1e; r=1e9 drift %.1e < 1e-6; halfway err %.1e", worst_alpha,
             worst_pin, worst_half));
}

// ---------------------------------------------------------------- criterion 8

struct BruteEer {
  double eer, theta;
};

BruteEer brute_force_eer(const std::vector<double>& genuine, const std::vector<double>& impostor) {
  std::vector<double> cand;
  for (double s : genuine) {
    cand.push_back(s);
    cand.push_back(std::nextafter(s, std::numeric_limits<double>::infinity()));
  }
  for (double s : impostor) {
    cand.push_back(s);
    cand.push_back(std::nextafter(s, std::numeric_limits<double>::infinity()));
  }
  std::sort(cand.begin(), cand.end());
  cand.erase(std::unique(cand.begin(), cand.end()), cand.end());
  double best_gap = 1e300, best_eer = 1.0, best_theta = 0.0;
  for (double theta : cand) {
    long fa = 0, fr = 0;
    for (double s : impostor)
      if (s >= theta) ++fa;
    for (double s : genuine)
      if (s < theta) ++fr;
    const double far = static_cast<double>(fa) / impostor.size();
    const double frr = static_cast<double>(fr) / genuine.size();
    const double gap = std::abs(far - frr);
    if (gap < best_gap) {  // strict: ties keep the lowest threshold
      best_gap = gap;
      best_eer = 0.5 * (far + frr);
      best_theta = theta;
    }
  }
  return {best_eer, best_theta};
}

void criterion_eer() {
  const auto t0 = Clock::now();
  int exact = 0;
  const int trials = 100;
  double worst_hter = 0.0;
  for (int trial = 0; trial < trials; ++trial) {
    Rng rng(derive_seed(7800, "eer", static_cast<std::uint64_t>(trial)));
    std::vector<double> genuine(500), impostor(500);
    for (auto& s : genuine) s = rng.normal(1.0, 1.0);
    for (auto& s : impostor) s = rng.normal(-1.0, 1.0);
    if (trial % 3 == 0) {  // force heavy ties
      for (auto& s : genuine) s = std::round(s * 4.0) / 4.0;
      for (auto& s : impostor) s = std::round(s * 4.0) / 4.0;
    }
    const EerResult got = eer(det_sweep(genuine, impostor));
    const BruteEer want = brute_force_eer(genuine, impostor);
    if (got.eer == want.eer && got.theta == want.theta) ++exact;

    const double theta = rng.normal(0.0, 1.0);
    long fa = 0, fr = 0;
    for (double s : impostor)
      if (s >= theta) ++fa;
    for (double s : genuine)
      if (s < theta) ++fr;
    const double want_hter =
        0.5 * (static_cast<double>(fa) / impostor.size() + static_cast<double>(fr) / genuine.size());
    worst_hter = std::max(worst_hter, std::abs(hter(genuine, impostor, theta) - want_hter));
  }
  const double dt = secs_since(t0);
  const bool pass = exact == trials && worst_hter == 0.0 && dt < 60.0;
  report(8, pass, "eer/hter vs brute force",
         fmt("%d/%d sets exact (eer and theta, ties included); hter err %.1e; %.1f s", exact,
             trials, worst_hter, dt));
}

// ------------------------------------------------------- criteria 9, 10, 11

// The desk-scale verification study shared by the last three criteria.
ExperimentConfig study_config(std::uint64_t seed) {
  ExperimentConfig cfg;
  cfg.seed = seed;
  cfg.train.seed = seed;
  cfg.corpus_cfg = {40, 10, 10, 6, 60.0, 50.0, -1, seed};
  cfg.family = CellFamily::dcwrnn;
  cfg.conv.layers = {{8, 7, 2}, {8, 5, 2}};
  cfg.clock.base = 2;
  cfg.clock.units_per_band = {6, 6, 6, 6};
  cfg.train.epochs = 40;
  cfg.train.lr = 0.08;
  cfg.train.lr_decay = 0.95;
  cfg.train.dropout = 0.05;
  cfg.train_augment = true;
  cfg.gmm_components = 32;
  cfg.window_s = 10.0;
  return cfg;
}

struct StudyOutcome {
  EvalSummary extractor, raw;
  std::vector<ScoredWindow> extractor_windows;
};

StudyOutcome run_study(const ExperimentConfig& cfg) {
  auto sessions = synthesize_session_data(cfg.corpus_cfg, cfg.rate_hz);
  const PipelineStats stats = fit_pipeline_stats(sessions);
  TrainArtifacts art = run_training(sessions, cfg, &stats);
  const ModelGraph extractor = strip_head(art.model);

  StudyOutcome out;
  {
    VerificationModel vm = fit_verification(sessions, &extractor, stats, cfg);
    enroll_clients(vm, sessions, &extractor, cfg);
    out.extractor_windows = score_probes(vm, sessions, &extractor, cfg);
    out.extractor = summarize_scores(out.extractor_windows);
  }
  {
    ExperimentConfig raw_cfg = cfg;
    raw_cfg.gmm_features = "raw";
    VerificationModel vm = fit_verification(sessions, nullptr, stats, raw_cfg);
    enroll_clients(vm, sessions, nullptr, raw_cfg);
    out.raw = summarize_scores(score_probes(vm, sessions, nullptr, raw_cfg));
  }
  return out;
}

std::vector<ScoredWindow> g_seed1_windows;  // saved by criterion 9 for criterion 11

void criterion_feature_ordering() {
  const auto t0 = Clock::now();
  double sum_extractor = 0.0, sum_raw = 0.0, sum_zt = 0.0;
  std::string per_seed;
  for (std::uint64_t seed = 1; seed <= 5; ++seed) {
    const StudyOutcome out = run_study(study_config(seed));
    sum_extractor += out.extractor.eer_raw.eer;
    sum_raw += out.raw.eer_raw.eer;
    sum_zt += out.extractor.eer_zt.eer;
    if (seed == 1) g_seed1_windows = out.extractor_windows;
    per_seed += fmt(" s%llu: dcw %.3f raw %.3f zt %.3f;", (unsigned long long)seed,
                    out.extractor.eer_raw.eer, out.raw.eer_raw.eer, out.extractor.eer_zt.eer);
  }
  const double mean_extractor = sum_extractor / 5.0;
  const double mean_raw = sum_raw / 5.0;
  const double mean_zt = sum_zt / 5.0;
  const double dt = secs_since(t0);

  const bool ordering = mean_extractor <= mean_raw - 0.05;
  const bool zt_ok = mean_zt <= mean_extractor + 0.02;
  const bool pass = ordering && zt_ok && dt < 1800.0;
  report(9, pass, "learned features beat raw frames",
         fmt("mean EER: dcwrnn %.3f vs raw %.3f (gap %+.1f pp, need >= 5); zt %.3f vs "
             "same-system raw %.3f (excess %+.1f pp, allowed <= 2; vs raw-frame EER %+.1f pp); "
             "%.0f s",
             mean_extractor, mean_raw, 100.0 * (mean_raw - mean_extractor), mean_zt,
             mean_extractor, 100.0 * (mean_zt - mean_extractor), 100.0 * (mean_zt - mean_raw),
             dt));
  std::printf("     %s\n", per_seed.c_str());
}

void criterion_obfuscation_recovery() {
  const auto t0 = Clock::now();
  int wins = 0;
  std::string per_seed;
  for (std::uint64_t seed = 1; seed <= 5; ++seed) {
    ExperimentConfig cfg = study_config(seed);
    cfg.corpus_cfg = {20, 6, 8, 6, 45.0, 50.0, 3, seed};  // device swap mid-test
    cfg.train.epochs = 25;

    auto sessions = synthesize_session_data(cfg.corpus_cfg, cfg.rate_hz);
    const PipelineStats stats = fit_pipeline_stats(sessions);

    auto recal_eer = [&](bool augment) {
      ExperimentConfig c = cfg;
      c.train_augment = augment;
      TrainArtifacts art = run_training(sessions, c, &stats);
      const ModelGraph extractor = strip_head(art.model);
      VerificationModel vm = fit_verification(sessions, &extractor, stats, c);
      enroll_clients(vm, sessions, &extractor, c);
      const auto windows = score_probes(vm, sessions, &extractor, c);
      std::vector<double> genuine, impostor;
      for (const auto& w : windows) {
        if (w.device_id.empty() || w.device_id.back() != 'r') continue;
        (w.genuine ? genuine : impostor).push_back(w.raw);
      }
      if (genuine.empty() || impostor.empty())
        throw InsufficientDataError("no recalibrated probe windows");
      return eer(det_sweep(genuine, impostor)).eer;
    };

    const double with_aug = recal_eer(true);
    const double without = recal_eer(false);
    if (with_aug < without) ++wins;
    per_seed += fmt(" s%llu: aug %.3f vs plain %.3f;", (unsigned long long)seed, with_aug,
                    without);
  }
  const double dt = secs_since(t0);
  const bool pass = wins >= 4;
  report(10, pass, "augmentation helps after device swap",
         fmt("with-augmentation EER lower on recalibrated sessions in %d/5 seeds, %.0f s", wins,
             dt));
  std::printf("     %s\n", per_seed.c_str());
}

void criterion_z_calibration() {
  if (g_seed1_windows.empty()) {
    report(11, false, "impostor z-score calibration", "criterion 9 must run first (no windows)");
    return;
  }
  std::map<std::string, std::vector<double>> per_client;
  for (const auto& w : g_seed1_windows)
    if (!w.genuine) per_client[w.client_id].push_back(w.z);
  double worst_mean = 0.0, lo = 1e300, hi = 0.0;
  for (const auto& [id, scores] : per_client) {
    double m = 0.0;
    for (double s : scores) m += s;
    m /= scores.size();
    double v = 0.0;
    for (double s : scores) v += (s - m) * (s - m);
    v /= scores.size();
    worst_mean = std::max(worst_mean, std::abs(m));
    lo = std::min(lo, std::sqrt(v));
    hi = std::max(hi, std::sqrt(v));
  }
  const bool pass = worst_mean <= 0.2 && lo >= 0.8 && hi <= 1.2;
  report(11, pass, "impostor z-score calibration",
         fmt("%zu clients: worst |mean| %.3f (<= 0.2), std in [%.3f, %.3f] (within [0.8, 1.2])",
             per_client.size(), worst_mean, lo, hi));
}

}  // namespace

int main(int argc, char** argv) {
  std::set<int> only;
  for (int i = 1; i < argc; ++i) only.insert(std::atoi(argv[i]));
  auto wanted = [&](int n) { return only.empty() || only.count(n) > 0; };

  struct Entry {
    int n;
    void (*fn)();
    const char* name;
  };
  const Entry entries[] = {
      {1, criterion_gradients, "analytic vs numeric gradients"},
      {2, criterion_shift_invariance, "shift invariance split"},
      {3, criterion_single_band_equivalence, "single-band clockwork == vanilla rnn"},
      {4, criterion_param_parity, "cwrnn / dcwrnn parameter parity"},
      {5, criterion_buffer_capacity, "delay-buffer capacity and recall"},
      {6, criterion_em, "em: monotone, closed form, density"},
      {7, criterion_map, "map adaptation of means"},
      {8, criterion_eer, "eer/hter vs brute force"},
      {9, criterion_feature_ordering, "learned features beat raw frames"},
      {10, criterion_obfuscation_recovery, "augmentation helps after device swap"},
      {11, criterion_z_calibration, "impostor z-score calibration"},
  };
  for (const Entry& e : entries) {
    if (!wanted(e.n)) continue;
    try {
      e.fn();
    } catch (const std::exception& ex) {
      report(e.n, false, e.name, std::string("exception: ") + ex.what());
    }
  }
  std::printf("%s: %d criterion(s) failed\n", g_failures == 0 ? "ALL PASS" : "GATE FAILED",
              g_failures);
  return g_failures;
}
