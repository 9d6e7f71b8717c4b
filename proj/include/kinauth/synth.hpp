#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include "kinauth/rng.hpp"
#include "kinauth/signal.hpp"

namespace kinauth {

// A user's kinematic signature: a gait-like fundamental with three
// harmonics per channel, a posture bias, band-limited noise, and sparse
// motion bursts.
struct UserProfile {
  double f0 = 2.0;                       // Hz
  Eigen::Matrix<double, 6, 3> amp;       // channel x harmonic
  Eigen::Matrix<double, 6, 3> phase;
  Vec6 bias = Vec6::Zero();
  double burst_rate = 0.1;               // events per second
  double burst_amp = 0.5;
  double noise_level = 0.1;              // stationary OU amplitude
};

// Ranges are deliberately narrow for the between-user *marginal* statistics
// (amplitudes, bias, noise) so that identity lives in the *dynamics*: the
// cadence f0 and small per-user deviations from a shared cross-channel
// phase template. Distinguishing users should require modelling the
// waveform over time, not just per-channel levels.
struct UserRanges {
  double f0_min = 1.0, f0_max = 3.0;
  double amp_min = 0.22, amp_max = 0.28;  // scaled down 1/h for harmonic h
  double phase_jitter = 0.25;             // radians around the shared template
  double bias_max = 0.1;
  double burst_rate_min = 0.05, burst_rate_max = 0.3;
  double burst_amp_min = 0.3, burst_amp_max = 0.7;
  double noise_min = 0.08, noise_max = 0.15;
};

UserProfile generate_user(Rng& rng, const UserRanges& ranges = {});

// Sensor calibration signature: measured = offset + gain * true, per
// channel. Gains stay within [0.95, 1.05] and offsets within 0.1 of the
// nominal channel scale (the generator's channels are built to unit scale).
struct DeviceProfile {
  Vec6 gain = Vec6::Ones();
  Vec6 offset = Vec6::Zero();

  bool is_identity() const { return gain == Vec6::Ones() && offset == Vec6::Zero(); }
};

DeviceProfile generate_device(Rng& rng);

SensorStream synthesize_session(const UserProfile& user, const DeviceProfile& device,
                                double duration_s, double rate_hz, Rng& rng);

struct SessionEntry {
  std::string path;  // relative to the manifest's directory
  std::string user_id;
  std::string device_id;
  std::string split;  // train / val / test
};

struct CorpusManifest {
  std::vector<SessionEntry> sessions;
};

void save_manifest(const std::filesystem::path& path, const CorpusManifest& manifest);
CorpusManifest load_manifest(const std::filesystem::path& path);

struct CorpusConfig {
  int train_users = 40;
  int val_users = 10;
  int test_users = 10;
  int sessions_per_user = 6;
  double session_seconds = 60.0;
  double rate_hz = 50.0;
  // Test-split sessions with index >= recal_from_session are recorded on a
  // freshly calibrated second device of the same user; < 0 disables.
  int recal_from_session = -1;
  std::uint64_t seed = 1;
};

struct GeneratedSession {
  SensorStream stream;  // ids filled in
  std::string split;    // train / val / test
};

// Generates the full corpus in memory. Per-session randomness is derived
// from the master seed by stable hashing, so the corpus is reproducible and
// independent of generation order.
std::vector<GeneratedSession> synthesize_corpus(const CorpusConfig& cfg);

// Writes one CSV per session plus manifest.csv under out_dir. Refuses to
// overwrite existing files.
CorpusManifest build_corpus(const CorpusConfig& cfg, const std::filesystem::path& out_dir);

}  // namespace kinauth
