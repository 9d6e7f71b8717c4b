#include "kinauth/synth.hpp"

#include <cmath>
#include <cstdlib>
#include <fstream>
#include <numbers>
#include <sstream>

#include "kinauth/errors.hpp"
#include "kinauth/io_util.hpp"

namespace kinauth {

// Common gait geometry: every user's limbs swing with the same coarse
// cross-channel coordination. Identity lives in the cadence (f0) and in
// small per-user deviations from this template, not in which phase pattern
// a user happens to land on. A fixed template keeps the instantaneous joint
// distribution of the channels nearly user-independent: two users tracing
// the same closed curve at different speeds look identical to any
// frame-by-frame statistic, and only a model of the dynamics can tell them
// apart.
static const Eigen::Matrix<double, 6, 3> kPhaseTemplate = [] {
  Eigen::Matrix<double, 6, 3> t;
  Rng r(0x6a17);  // arbitrary fixed pattern, part of the generator's identity
  for (int c = 0; c < 6; ++c)
    for (int h = 0; h < 3; ++h) t(c, h) = r.uniform(0.0, 2.0 * std::numbers::pi);
  return t;
}();

UserProfile generate_user(Rng& rng, const UserRanges& ranges) {
  static const double kAmpLo = [] { const char* s = std::getenv("KINAUTH_AMP_LO"); return s ? std::atof(s) : -1.0; }();
  static const double kAmpHi = [] { const char* s = std::getenv("KINAUTH_AMP_HI"); return s ? std::atof(s) : -1.0; }();
  static const double kPhaseSigma = [] { const char* s = std::getenv("KINAUTH_PHASE_SIGMA"); return s ? std::atof(s) : -1.0; }();
  const double amp_min = kAmpLo > 0 ? kAmpLo : ranges.amp_min;
  const double amp_max = kAmpHi > 0 ? kAmpHi : ranges.amp_max;
  const double phase_jitter = kPhaseSigma >= 0 ? kPhaseSigma : ranges.phase_jitter;
  UserProfile user;
  user.f0 = rng.uniform(ranges.f0_min, ranges.f0_max);
  for (int c = 0; c < 6; ++c) {
    for (int h = 0; h < 3; ++h) {
      user.amp(c, h) = rng.uniform(amp_min, amp_max) / (h + 1);
      user.phase(c, h) = kPhaseTemplate(c, h) + rng.normal(0.0, phase_jitter);
    }
    user.bias(c) = rng.uniform(-ranges.bias_max, ranges.bias_max);
  }
  user.burst_rate = rng.uniform(ranges.burst_rate_min, ranges.burst_rate_max);
  user.burst_amp = rng.uniform(ranges.burst_amp_min, ranges.burst_amp_max);
  user.noise_level = rng.uniform(ranges.noise_min, ranges.noise_max);
  return user;
}

DeviceProfile generate_device(Rng& rng) {
  DeviceProfile device;
  for (int c = 0; c < 6; ++c) {
    device.gain(c) = rng.uniform(0.95, 1.05);
    device.offset(c) = rng.uniform(-0.1, 0.1);
  }
  return device;
}

SensorStream synthesize_session(const UserProfile& user, const DeviceProfile& device,
                                double duration_s, double rate_hz, Rng& rng) {
  if (duration_s < 1.0) throw ConfigError("session duration must be at least one second");
  if (!(rate_hz > 0.0)) throw ConfigError("sample rate must be positive");

  const long n = static_cast<long>(duration_s * rate_hz);
  const double dt = 1.0 / rate_hz;

  // Session-level variation: posture shifts between recordings and overall
  // motion energy / restlessness drift from day to day. Drawn up front so a
  // session's character is fixed before the sample loop. This keeps the
  // within-user spread of per-channel levels comparable to the between-user
  // spread, while the temporal signature (fundamental, phases, bursts) stays
  // stable for a user.
  static const double kBiasSigma = [] {
    const char* s = std::getenv("KINAUTH_BIAS_SIGMA");
    return s ? std::atof(s) : 0.1;
  }();
  static const double kEnergySigma = [] {
    const char* s = std::getenv("KINAUTH_ENERGY_SIGMA");
    return s ? std::atof(s) : 0.15;
  }();
  Vec6 session_bias = user.bias;
  for (int c = 0; c < 6; ++c) session_bias(c) += rng.normal(0.0, kBiasSigma);
  const double energy = std::exp(rng.normal(0.0, kEnergySigma));
  const double noise_level = user.noise_level * std::exp(rng.normal(0.0, 0.4));
  // Per-channel timing offsets: limb coordination re-aligns from session to
  // session. A time shift keeps each channel's waveform (so the per-channel
  // temporal signature survives) but scrambles the cross-channel phase
  // geometry that would otherwise fingerprint a user from level statistics
  // alone.
  static const double kDelaySigma = [] {
    const char* s = std::getenv("KINAUTH_DELAY_SIGMA");  // tuning hook
    return s ? std::atof(s) : 0.12;
  }();
  Vec6 channel_delay;
  for (int c = 0; c < 6; ++c) channel_delay(c) = rng.normal(0.0, kDelaySigma);

  // sparse bursts: Poisson event times, Gaussian-shaped pulses with random
  // per-channel projection
  struct Burst {
    double center, width;
    Vec6 weight;
  };
  std::vector<Burst> bursts;
  if (user.burst_rate > 0.0) {
    double t = rng.exponential(user.burst_rate);
    while (t < duration_s) {
      Burst b;
      b.center = t;
      b.width = rng.uniform(0.1, 0.3);
      for (int c = 0; c < 6; ++c)
        b.weight(c) = energy * user.burst_amp * rng.uniform(-1.0, 1.0);
      bursts.push_back(b);
      t += rng.exponential(user.burst_rate);
    }
  }

  // Ornstein-Uhlenbeck noise per channel, stationary amplitude noise_level
  constexpr double kTau = 0.3;  // seconds
  Vec6 ou = Vec6::Zero();
  const double decay = 1.0 - dt / kTau;
  const double kick = noise_level * std::sqrt(2.0 * dt / kTau);

  SensorStream stream;
  stream.rate_hz = rate_hz;
  stream.frames.reserve(n);
  const double two_pi = 2.0 * std::numbers::pi;
  for (long i = 0; i < n; ++i) {
    const double t = i * dt;
    Vec6 truth = session_bias;
    for (int c = 0; c < 6; ++c) {
      for (int h = 0; h < 3; ++h)
        truth(c) += energy * user.amp(c, h) *
                    std::sin(two_pi * user.f0 * (h + 1) * (t + channel_delay(c)) +
                             user.phase(c, h));
      ou(c) = ou(c) * decay + kick * rng.normal(0.0, 1.0);
      truth(c) += ou(c);
    }
    for (const Burst& b : bursts) {
      const double arg = (t - b.center) / b.width;
      if (std::abs(arg) < 4.0) truth += b.weight * std::exp(-0.5 * arg * arg);
    }
    RawFrame frame;
    frame.t = t;
    const Vec6 measured = device.offset + device.gain.cwiseProduct(truth);
    frame.accel = measured.head<3>();
    frame.gyro = measured.tail<3>();
    stream.frames.push_back(frame);
  }
  return stream;
}

void save_manifest(const std::filesystem::path& path, const CorpusManifest& manifest) {
  write_file_atomic(path, [&manifest](std::ostream& out) {
    out << "# session_path,user_id,device_id,split\n";
    for (const auto& s : manifest.sessions)
      out << s.path << ',' << s.user_id << ',' << s.device_id << ',' << s.split << '\n';
  });
}

CorpusManifest load_manifest(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw DataError("cannot open manifest " + path.string());
  CorpusManifest manifest;
  std::string line;
  long line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line.empty() || line[0] == '#') continue;
    auto fields = split_csv_line(line);
    if (fields.size() != 4)
      throw ParseError("manifest line " + std::to_string(line_no) + ": expected 4 fields");
    manifest.sessions.push_back({fields[0], fields[1], fields[2], fields[3]});
  }
  return manifest;
}

std::vector<GeneratedSession> synthesize_corpus(const CorpusConfig& cfg) {
  if (cfg.train_users < 1 || cfg.val_users < 1 || cfg.test_users < 1 ||
      cfg.sessions_per_user < 1)
    throw ConfigError("corpus needs at least one user per split and one session per user");

  struct SplitPlan {
    std::string name;
    int count;
  };
  const SplitPlan plan[] = {
      {"train", cfg.train_users}, {"val", cfg.val_users}, {"test", cfg.test_users}};

  std::vector<GeneratedSession> out;
  out.reserve(static_cast<std::size_t>(cfg.train_users + cfg.val_users + cfg.test_users) *
              cfg.sessions_per_user);
  int user_no = 0;
  for (const auto& split : plan) {
    for (int u = 0; u < split.count; ++u, ++user_no) {
      char user_id[16], device_id[16];
      std::snprintf(user_id, sizeof user_id, "u%03d", user_no);
      std::snprintf(device_id, sizeof device_id, "d%03d", user_no);

      Rng profile_rng(derive_seed(cfg.seed, std::string("user:") + user_id, 0));
      const UserProfile user = generate_user(profile_rng);
      const DeviceProfile device = generate_device(profile_rng);
      DeviceProfile recal_device;
      const bool recal = split.name == "test" && cfg.recal_from_session >= 0;
      if (recal) {
        Rng recal_rng(derive_seed(cfg.seed, std::string("recal:") + user_id, 0));
        recal_device = generate_device(recal_rng);
      }

      for (int s = 0; s < cfg.sessions_per_user; ++s) {
        const bool on_recal = recal && s >= cfg.recal_from_session;
        Rng session_rng(
            derive_seed(cfg.seed, std::string("session:") + user_id, static_cast<std::uint64_t>(s)));
        SensorStream stream = synthesize_session(
            user, on_recal ? recal_device : device, cfg.session_seconds, cfg.rate_hz,
            session_rng);
        stream.user_id = user_id;
        stream.device_id = on_recal ? std::string(device_id) + "r" : device_id;
        char name[48];
        std::snprintf(name, sizeof name, "%s_s%02d.csv", user_id, s);
        stream.session_id = name;
        out.push_back({std::move(stream), split.name});
      }
    }
  }
  return out;
}

CorpusManifest build_corpus(const CorpusConfig& cfg, const std::filesystem::path& out_dir) {
  const auto manifest_path = out_dir / "manifest.csv";
  if (std::filesystem::exists(manifest_path))
    throw DataError("refusing to overwrite " + manifest_path.string());

  const auto sessions = synthesize_corpus(cfg);
  CorpusManifest manifest;
  for (const auto& gs : sessions) {
    const auto session_path = out_dir / gs.stream.session_id;
    if (std::filesystem::exists(session_path))
      throw DataError("refusing to overwrite " + session_path.string());
    write_stream_csv(session_path, gs.stream);
    manifest.sessions.push_back({gs.stream.session_id, gs.stream.user_id, gs.stream.device_id,
                                 gs.split});
  }
  save_manifest(manifest_path, manifest);
  return manifest;
}

}  // namespace kinauth
