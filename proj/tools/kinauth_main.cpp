// kinauth command-line front end: config-driven experiment stages with
// persisted artifacts. Exit codes: 0 success, 2 config error, 3 data error,
// 4 numeric failure, 1 anything unexpected.

#include <cinttypes>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <string>
#include <vector>

#include <CLI11.hpp>

#include "kinauth/config.hpp"
#include "kinauth/errors.hpp"
#include "kinauth/experiment.hpp"
#include "kinauth/io_util.hpp"
#include "kinauth/metrics.hpp"
#include "kinauth/persist.hpp"
#include "kinauth/synth.hpp"

namespace fs = std::filesystem;
using namespace kinauth;

namespace {

struct GlobalOpts {
  std::string config_path;
  long long seed = -1;  // <0: keep the config's seed
  std::string out_override;
  bool force = false;
};

ExperimentConfig load_cfg(const GlobalOpts& g) {
  ExperimentConfig cfg;
  if (!g.config_path.empty()) cfg = load_experiment_config(g.config_path);
  if (g.seed >= 0) {
    cfg.seed = static_cast<std::uint64_t>(g.seed);
    cfg.corpus_cfg.seed = cfg.seed;
    cfg.train.seed = cfg.seed;
  }
  if (!g.out_override.empty()) cfg.out = g.out_override;
  return cfg;
}

// overwrite guard shared by every artifact-producing stage
void guard(const fs::path& path, bool force) {
  if (!fs::exists(path)) return;
  if (!force) throw DataError("refusing to overwrite " + path.string() + " (use --force)");
  fs::remove(path);
}

void need_file(const fs::path& path, const std::string& producer) {
  if (!fs::exists(path))
    throw DataError(path.string() + " not found; run `kinauth " + producer + "` first");
}

std::vector<SessionData> load_corpus_sessions(const ExperimentConfig& cfg) {
  need_file(cfg.corpus / "manifest.csv", "synth");
  return load_sessions(cfg.corpus, cfg.rate_hz);
}

PipelineStats need_stats(const ExperimentConfig& cfg) {
  const fs::path p = cfg.out / "stats.txt";
  need_file(p, "preprocess");
  return load_pipeline_stats(p);
}

// nullopt = raw 14-d features, no extractor involved
std::optional<ModelGraph> need_extractor(const ExperimentConfig& cfg) {
  if (cfg.gmm_features == "raw") return std::nullopt;
  const fs::path p = cfg.out / "model.kin";
  need_file(p, "train");
  return strip_head(load_model(p));
}

void write_curve_csv(const fs::path& path, const std::vector<double>& curve) {
  write_file_atomic(path, [&](std::ostream& out) {
    out << "# epoch,loss\n";
    char buf[64];
    for (std::size_t e = 0; e < curve.size(); ++e) {
      std::snprintf(buf, sizeof buf, "%zu,%.17g\n", e, curve[e]);
      out << buf;
    }
  });
}

void write_metric_csv(const fs::path& path,
                      const std::vector<std::pair<std::string, std::string>>& rows) {
  write_file_atomic(path, [&](std::ostream& out) {
    out << "# metric,value\n";
    for (const auto& [k, v] : rows) out << k << "," << v << "\n";
  });
}

std::string fmt(double v) {
  char buf[64];
  std::snprintf(buf, sizeof buf, "%.17g", v);
  return buf;
}

void write_det_csv(const fs::path& path, const DetCurve& curve) {
  write_file_atomic(path, [&](std::ostream& out) {
    out << "# theta,far,frr\n";
    out << "# FAR counts impostor scores >= theta, FRR genuine scores < theta\n";
    char buf[128];
    for (const auto& p : curve.points) {
      std::snprintf(buf, sizeof buf, "%.17g,%.17g,%.17g\n", p.theta, p.far, p.frr);
      out << buf;
    }
  });
}

int cmd_synth(const GlobalOpts& g) {
  const ExperimentConfig cfg = load_cfg(g);
  const fs::path manifest = cfg.corpus / "manifest.csv";
  if (fs::exists(manifest)) {
    if (!g.force)
      throw DataError("corpus already exists at " + cfg.corpus.string() + " (use --force)");
    fs::remove_all(cfg.corpus);
  }
  fs::create_directories(cfg.corpus);
  const CorpusManifest m = build_corpus(cfg.corpus_cfg, cfg.corpus);
  std::cout << "wrote " << m.sessions.size() << " sessions to " << cfg.corpus.string() << "\n";
  return 0;
}

int cmd_preprocess(const GlobalOpts& g) {
  const ExperimentConfig cfg = load_cfg(g);
  const fs::path p = cfg.out / "stats.txt";
  guard(p, g.force);
  const auto sessions = load_corpus_sessions(cfg);
  fs::create_directories(cfg.out);
  save_pipeline_stats(p, fit_pipeline_stats(sessions));
  std::cout << "wrote " << p.string() << "\n";
  return 0;
}

int cmd_train(const GlobalOpts& g, bool run_gradcheck) {
  const ExperimentConfig cfg = load_cfg(g);
  const fs::path model_path = cfg.out / "model.kin";
  const fs::path loss_path = cfg.out / "loss.csv";
  const fs::path val_path = cfg.out / "val_loss.csv";
  const fs::path summary_path = cfg.out / "train_summary.csv";
  guard(model_path, g.force);
  guard(loss_path, g.force);
  guard(val_path, g.force);
  guard(summary_path, g.force);

  const auto sessions = load_corpus_sessions(cfg);
  fs::create_directories(cfg.out);

  const fs::path stats_path = cfg.out / "stats.txt";
  PipelineStats stats;
  if (fs::exists(stats_path)) {
    stats = load_pipeline_stats(stats_path);
  } else {
    stats = fit_pipeline_stats(sessions);
    save_pipeline_stats(stats_path, stats);
  }

  const TrainArtifacts art = run_training(sessions, cfg, &stats);
  save_model(model_path, art.model);
  write_curve_csv(loss_path, art.result.train_curve);
  write_curve_csv(val_path, art.result.val_curve);
  write_metric_csv(summary_path,
                   {{"family", to_string(cfg.family)},
                    {"n_classes", std::to_string(art.n_classes)},
                    {"params", std::to_string(count_params(art.model))},
                    {"best_epoch", std::to_string(art.result.best_epoch)},
                    {"diverged", art.result.diverged ? "1" : "0"},
                    {"final_train_loss",
                     art.result.train_curve.empty() ? "nan" : fmt(art.result.train_curve.back())},
                    {"final_val_loss",
                     art.result.val_curve.empty() ? "nan" : fmt(art.result.val_curve.back())},
                    {"topk_session_accuracy", fmt(art.topk_accuracy)}});
  std::cout << "trained " << to_string(cfg.family) << " (" << count_params(art.model)
            << " parameters, " << art.n_classes << " classes) -> " << model_path.string() << "\n";
  if (art.result.diverged) std::cout << "warning: training diverged; kept last good state\n";
  if (art.topk_accuracy >= 0)
    std::cout << "held-out top-fraction session accuracy: " << art.topk_accuracy << "\n";

  if (run_gradcheck) {
    const GradCheckProbe probe = make_gradcheck_probe(cfg.family, cfg.seed);
    const GradCheckReport rep = gradient_check(probe.model, probe.seq, probe.label);
    std::cout << "gradient check (" << to_string(cfg.family)
              << " probe): max rel err = " << rep.max_rel_err << " -> "
              << (rep.pass ? "pass" : "FAIL") << "\n";
    if (!rep.pass)
      throw NumericError("gradient check failed: max rel err " + std::to_string(rep.max_rel_err));
  }
  return 0;
}

int cmd_ubm(const GlobalOpts& g) {
  const ExperimentConfig cfg = load_cfg(g);
  const fs::path ubm_path = cfg.out / "ubm.kin";
  const fs::path pca_path = cfg.out / "pca.kin";
  guard(ubm_path, g.force);
  guard(pca_path, g.force);

  const auto sessions = load_corpus_sessions(cfg);
  const PipelineStats stats = need_stats(cfg);
  const std::optional<ModelGraph> extractor = need_extractor(cfg);

  const BackgroundModel bg =
      fit_background(sessions, extractor ? &*extractor : nullptr, stats, cfg);
  save_gmm(ubm_path, bg.ubm);
  if (bg.pca) save_pca(pca_path, *bg.pca);
  std::cout << "fitted " << bg.ubm.components() << "-component UBM on " << bg.ubm.dim()
            << "-d features -> " << ubm_path.string() << "\n";
  return 0;
}

int cmd_enroll(const GlobalOpts& g) {
  const ExperimentConfig cfg = load_cfg(g);
  const fs::path clients_path = cfg.out / "clients.kin";
  const fs::path ztnorm_path = cfg.out / "ztnorm.kin";
  guard(clients_path, g.force);
  guard(ztnorm_path, g.force);

  const auto sessions = load_corpus_sessions(cfg);
  const PipelineStats stats = need_stats(cfg);
  const std::optional<ModelGraph> extractor = need_extractor(cfg);
  need_file(cfg.out / "ubm.kin", "ubm");

  BackgroundModel bg;
  bg.ubm = load_gmm(cfg.out / "ubm.kin");
  if (fs::exists(cfg.out / "pca.kin")) bg.pca = load_pca(cfg.out / "pca.kin");

  VerificationModel vm;
  vm.stats = stats;
  vm.ztnorm = fit_cohorts(bg, sessions, extractor ? &*extractor : nullptr, stats, cfg);
  vm.ubm = std::move(bg.ubm);
  vm.pca = std::move(bg.pca);
  enroll_clients(vm, sessions, extractor ? &*extractor : nullptr, cfg);

  save_ztnorm(ztnorm_path, vm.ztnorm);
  save_clients(clients_path, vm.clients);
  std::cout << "enrolled " << vm.clients.size() << " clients, " << vm.ztnorm.t_models.size()
            << " t-models -> " << clients_path.string() << "\n";
  return 0;
}

int cmd_score(const GlobalOpts& g, double window_override) {
  ExperimentConfig cfg = load_cfg(g);
  const fs::path scores_path = cfg.out / "scores.csv";
  guard(scores_path, g.force);

  const auto sessions = load_corpus_sessions(cfg);
  VerificationModel vm;
  vm.stats = need_stats(cfg);
  const std::optional<ModelGraph> extractor = need_extractor(cfg);
  need_file(cfg.out / "ubm.kin", "ubm");
  need_file(cfg.out / "clients.kin", "enroll");
  need_file(cfg.out / "ztnorm.kin", "enroll");
  vm.ubm = load_gmm(cfg.out / "ubm.kin");
  if (fs::exists(cfg.out / "pca.kin")) vm.pca = load_pca(cfg.out / "pca.kin");
  vm.clients = load_clients(cfg.out / "clients.kin");
  vm.ztnorm = load_ztnorm(cfg.out / "ztnorm.kin");
  if (window_override > 0) {
    cfg.window_s = window_override;
    vm.ztnorm.window_s = window_override;
  }

  const auto windows = score_probes(vm, sessions, extractor ? &*extractor : nullptr, cfg);
  write_file_atomic(scores_path, [&](std::ostream& out) {
    out << "# session_id,label,raw,z,zt\n";
    out << "# label: genuine|impostor; higher scores = more genuine\n";
    out << "# rows in (probe session x client) scoring order\n";
    char buf[256];
    for (const auto& w : windows) {
      std::snprintf(buf, sizeof buf, "%s,%s,%.17g,%.17g,%.17g\n", w.session_id.c_str(),
                    w.genuine ? "genuine" : "impostor", w.raw, w.z, w.zt);
      out << buf;
    }
  });
  std::cout << "scored " << windows.size() << " windows -> " << scores_path.string() << "\n";
  return 0;
}

std::vector<ScoredWindow> read_scores_csv(const fs::path& path,
                                          const std::map<std::string, std::string>& device_of) {
  std::ifstream in(path);
  if (!in) throw DataError("cannot open " + path.string());
  std::vector<ScoredWindow> windows;
  std::string line;
  long line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line.empty() || line[0] == '#') continue;
    const auto fields = split_csv_line(line);
    if (fields.size() != 5)
      throw ParseError(path.string() + ":" + std::to_string(line_no) + ": expected 5 fields");
    ScoredWindow w;
    w.session_id = fields[0];
    if (fields[1] == "genuine")
      w.genuine = true;
    else if (fields[1] == "impostor")
      w.genuine = false;
    else
      throw ParseError(path.string() + ":" + std::to_string(line_no) + ": bad label '" +
                       fields[1] + "'");
    if (!parse_double(fields[2], w.raw) || !parse_double(fields[3], w.z) ||
        !parse_double(fields[4], w.zt))
      throw ParseError(path.string() + ":" + std::to_string(line_no) + ": bad score value");
    auto it = device_of.find(w.session_id);
    if (it != device_of.end()) w.device_id = it->second;
    windows.push_back(std::move(w));
  }
  return windows;
}

int cmd_eval(const GlobalOpts& g) {
  const ExperimentConfig cfg = load_cfg(g);
  const fs::path scores_path = cfg.out / "scores.csv";
  const fs::path summary_path = cfg.out / "summary.csv";
  const fs::path det_raw_path = cfg.out / "det_raw.csv";
  const fs::path det_zt_path = cfg.out / "det_zt.csv";
  need_file(scores_path, "score");
  guard(summary_path, g.force);
  guard(det_raw_path, g.force);
  guard(det_zt_path, g.force);

  std::map<std::string, std::string> device_of;
  const fs::path manifest_path = cfg.corpus / "manifest.csv";
  if (fs::exists(manifest_path))
    for (const auto& e : load_manifest(manifest_path).sessions) device_of[e.path] = e.device_id;

  const auto windows = read_scores_csv(scores_path, device_of);
  if (windows.empty()) throw InsufficientDataError("no score rows in " + scores_path.string());
  const EvalSummary sum = summarize_scores(windows);

  std::vector<double> genuine, impostor;
  split_scores(windows, 0, genuine, impostor);
  write_det_csv(det_raw_path, det_sweep(genuine, impostor));
  split_scores(windows, 2, genuine, impostor);
  write_det_csv(det_zt_path, det_sweep(genuine, impostor));

  write_metric_csv(summary_path, {{"eer_raw", fmt(sum.eer_raw.eer)},
                                  {"theta_raw", fmt(sum.eer_raw.theta)},
                                  {"eer_z", fmt(sum.eer_z.eer)},
                                  {"eer_zt", fmt(sum.eer_zt.eer)},
                                  {"theta_zt", fmt(sum.eer_zt.theta)},
                                  {"hter_zt", fmt(sum.hter)},
                                  {"per_device_eer_zt", fmt(sum.per_device_eer)},
                                  {"per_session_eer_zt", fmt(sum.per_session_eer)},
                                  {"genuine_windows", std::to_string(sum.genuine_windows)},
                                  {"impostor_windows", std::to_string(sum.impostor_windows)}});
  std::cout << "EER raw " << sum.eer_raw.eer << ", z " << sum.eer_z.eer << ", zt "
            << sum.eer_zt.eer << "; HTER(zt, transferred theta) " << sum.hter << "\n";
  std::cout << "wrote " << summary_path.string() << "\n";
  return 0;
}

int cmd_invariance(const GlobalOpts& g, int bands, int base, int units, int len,
                   const std::string& input_csv) {
  const ExperimentConfig cfg = load_cfg(g);
  if (bands < 1 || base < 2 || units < 1 || len < 2)
    throw ConfigError("invariance: need bands >= 1, base >= 2, units >= 1, len >= 2");

  std::vector<double> seq;
  if (!input_csv.empty()) {
    std::ifstream in(input_csv);
    if (!in) throw DataError("cannot open " + input_csv);
    std::string line;
    while (std::getline(in, line)) {
      if (!line.empty() && line.back() == '\r') line.pop_back();
      if (line.empty() || line[0] == '#') continue;
      double v = 0.0;
      if (!parse_double(split_csv_line(line)[0], v))
        throw ParseError(input_csv + ": bad value '" + line + "'");
      seq.push_back(v);
    }
    if (seq.size() < 2) throw InsufficientDataError(input_csv + ": need at least 2 values");
  } else {
    Rng rng(derive_seed(cfg.seed, "invariance-input", 0));
    seq.resize(static_cast<std::size_t>(len));
    for (auto& v : seq) v = rng.normal();
  }

  ClockworkConfig clock;
  clock.base = base;
  clock.units_per_band.assign(static_cast<std::size_t>(bands), units);

  fs::create_directories(cfg.out);
  const CellFamily families[] = {CellFamily::rnn, CellFamily::cwrnn, CellFamily::dcwrnn};
  std::vector<std::pair<std::string, std::string>> summary;
  for (const CellFamily family : families) {
    const fs::path trace_path =
        cfg.out / ("invariance_" + std::string(to_string(family)) + ".csv");
    guard(trace_path, g.force);
    const InvarianceReport rep = invariance_trace(family, seq, clock, cfg.seed);
    write_file_atomic(trace_path, [&](std::ostream& out) {
      out << "# shift,step,value\n";
      out << "# traces aligned to the unpadded sequence; transient = " << rep.transient << "\n";
      char buf[96];
      for (long r = 0; r < rep.traces.rows(); ++r)
        for (long s = 0; s < rep.traces.cols(); ++s) {
          std::snprintf(buf, sizeof buf, "%ld,%ld,%.17g\n", r + 1, s, rep.traces(r, s));
          out << buf;
        }
    });
    summary.emplace_back(std::string(to_string(family)) + "_max_deviation",
                         fmt(rep.max_deviation));
    std::cout << to_string(family) << ": " << rep.runs
              << " runs, max deviation past transient = " << rep.max_deviation << "\n";
  }
  const fs::path summary_path = cfg.out / "invariance_summary.csv";
  guard(summary_path, g.force);
  write_metric_csv(summary_path, summary);
  std::cout << "wrote " << summary_path.string() << "\n";
  return 0;
}

int cmd_gradcheck(const GlobalOpts& g) {
  const ExperimentConfig cfg = load_cfg(g);
  const fs::path path = cfg.out / "gradcheck.csv";
  guard(path, g.force);
  fs::create_directories(cfg.out);

  const CellFamily families[] = {CellFamily::rnn, CellFamily::lstm, CellFamily::cwrnn,
                                 CellFamily::dcwrnn, CellFamily::conv_only};
  bool all_pass = true;
  double worst = 0.0;
  std::vector<std::pair<std::string, double>> rows;
  for (const CellFamily family : families) {
    const GradCheckProbe probe = make_gradcheck_probe(family, cfg.seed);
    const GradCheckReport rep = gradient_check(probe.model, probe.seq, probe.label);
    for (const auto& entry : rep.groups)
      rows.emplace_back(std::string(to_string(family)) + "/" + entry.group, entry.max_rel_err);
    all_pass = all_pass && rep.pass;
    worst = std::max(worst, rep.max_rel_err);
    std::cout << to_string(family) << ": max rel err = " << rep.max_rel_err << " -> "
              << (rep.pass ? "pass" : "FAIL") << "\n";
  }
  write_file_atomic(path, [&](std::ostream& out) {
    out << "# group,max_rel_err\n";
    for (const auto& [group, err] : rows) out << group << "," << fmt(err) << "\n";
  });
  std::cout << "wrote " << path.string() << "\n";
  if (!all_pass)
    throw NumericError("gradient check failed: max rel err " + std::to_string(worst));
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"kinauth: continuous-authentication experiments on inertial streams"};
  app.require_subcommand(1);

  GlobalOpts g;
  app.add_option("--config", g.config_path, "experiment config file (key = value text)");
  app.add_option("--seed", g.seed, "override the master seed");
  app.add_option("--out", g.out_override, "override the output directory");
  app.add_flag("--force", g.force, "allow overwriting existing artifacts");

  app.add_subcommand("synth", "generate the synthetic corpus");
  app.add_subcommand("preprocess", "fit normalization and channel statistics");
  auto* train = app.add_subcommand("train", "train the temporal feature extractor");
  bool train_gradcheck = false;
  train->add_flag("--gradcheck", train_gradcheck,
                  "finite-difference check a probe model of the configured family");
  app.add_subcommand("ubm", "fit the universal background model");
  app.add_subcommand("enroll", "build zt-norm cohorts and enroll test clients");
  auto* score = app.add_subcommand("score", "score probe sessions against every client");
  double window_override = -1.0;
  score->add_option("--window", window_override, "override the scoring window (seconds)");
  app.add_subcommand("eval", "summarize scores: EER / HTER / per-group metrics");
  auto* invariance = app.add_subcommand("invariance", "shift-invariance probe traces");
  int inv_bands = 8, inv_base = 2, inv_units = 1, inv_len = 256;
  std::string inv_input;
  invariance->add_option("--bands", inv_bands, "number of clockwork bands (default 8)");
  invariance->add_option("--base", inv_base, "clock base (default 2)");
  invariance->add_option("--units", inv_units, "units per band (default 1)");
  invariance->add_option("--len", inv_len, "generated input length (default 256)");
  invariance->add_option("--input", inv_input, "read the input sequence from a CSV instead");
  app.add_subcommand("gradcheck", "finite-difference check probe models of every family");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? 0 : 2;
  }

  try {
    if (app.got_subcommand("synth")) return cmd_synth(g);
    if (app.got_subcommand("preprocess")) return cmd_preprocess(g);
    if (app.got_subcommand("train")) return cmd_train(g, train_gradcheck);
    if (app.got_subcommand("ubm")) return cmd_ubm(g);
    if (app.got_subcommand("enroll")) return cmd_enroll(g);
    if (app.got_subcommand("score")) return cmd_score(g, window_override);
    if (app.got_subcommand("eval")) return cmd_eval(g);
    if (app.got_subcommand("invariance"))
      return cmd_invariance(g, inv_bands, inv_base, inv_units, inv_len, inv_input);
    if (app.got_subcommand("gradcheck")) return cmd_gradcheck(g);
    std::cerr << "error: no subcommand\n";
    return 2;
  } catch (const ConfigError& e) {
    std::cerr << "config error: " << e.what() << "\n";
    return 2;
  } catch (const std::invalid_argument& e) {
    std::cerr << "config error: " << e.what() << "\n";
    return 2;
  } catch (const DataError& e) {
    std::cerr << "data error: " << e.what() << "\n";
    return 3;
  } catch (const NumericError& e) {
    std::cerr << "numeric failure: " << e.what() << "\n";
    return 4;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  }
}
