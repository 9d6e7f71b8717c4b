#pragma once

#include <cstdint>
#include <filesystem>
#include <map>
#include <string>
#include <vector>

#include "kinauth/models.hpp"
#include "kinauth/synth.hpp"
#include "kinauth/training.hpp"

namespace kinauth {

// Line-oriented `key = value` text with [section] headers and # comments.
// Every key must be known; unknown keys are a config error.
class KeyValueConfig {
 public:
  static KeyValueConfig parse_file(const std::filesystem::path& path);
  static KeyValueConfig parse_string(const std::string& text);

  // typed getters consume the key; leftovers are reported by finish()
  std::string get_string(const std::string& key, const std::string& fallback);
  long get_long(const std::string& key, long fallback);
  double get_double(const std::string& key, double fallback);
  bool get_bool(const std::string& key, bool fallback);
  std::vector<long> get_long_list(const std::string& key, const std::vector<long>& fallback);

  bool has(const std::string& key) const { return values_.count(key) > 0; }
  void finish() const;  // throws ConfigError naming any unconsumed key

 private:
  std::map<std::string, std::string> values_;  // "section.key" -> value
  std::map<std::string, bool> consumed_;
};

// Everything one experiment needs; defaults give a desk-scale run.
struct ExperimentConfig {
  std::filesystem::path out = "runs/exp";
  std::filesystem::path corpus = "data/corpus";

  CorpusConfig corpus_cfg;

  // pipeline
  double rate_hz = 50.0;
  int block_len = 50;
  int block_count = 20;
  double overlap = 0.5;

  // model
  CellFamily family = CellFamily::dcwrnn;
  ConvSpec conv;
  ClockworkConfig clock;
  int hidden = 24;  // rnn/lstm

  TrainConfig train;
  bool train_augment = true;
  int holdout_sessions = 1;    // per train user, held out for validation
  int chunks_per_session = 0;  // training examples cut per session; 0 = as many as fit

  // gmm stage
  int gmm_components = 32;
  int pca_dim = 0;  // 0 = off
  double relevance = 4.0;
  int kmeans_iters = 20;
  int em_iters = 50;
  int map_iters = 5;
  int t_subset_count = 20;
  int z_sequence_count = 20;
  long ubm_max_vectors = 60000;
  std::string gmm_features = "extractor";  // or "raw"

  // evaluation
  double window_s = 10.0;
  double top_fraction = 0.05;
  int enroll_sessions = 2;  // per test user

  std::uint64_t seed = 1;
};

ExperimentConfig load_experiment_config(const std::filesystem::path& path);
ExperimentConfig experiment_config_from(KeyValueConfig& kv);

}  // namespace kinauth
