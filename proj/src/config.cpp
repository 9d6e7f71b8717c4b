#include "kinauth/config.hpp"

#include <fstream>
#include <sstream>

#include "kinauth/errors.hpp"
#include "kinauth/io_util.hpp"

namespace kinauth {

namespace {

std::string trim(const std::string& s) {
  const auto begin = s.find_first_not_of(" \t\r");
  if (begin == std::string::npos) return "";
  const auto end = s.find_last_not_of(" \t\r");
  return s.substr(begin, end - begin + 1);
}

}  // namespace

KeyValueConfig KeyValueConfig::parse_file(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("cannot open config file " + path.string());
  std::stringstream buffer;
  buffer << in.rdbuf();
  return parse_string(buffer.str());
}

KeyValueConfig KeyValueConfig::parse_string(const std::string& text) {
  KeyValueConfig cfg;
  std::stringstream in(text);
  std::string line, section;
  long line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    line = trim(line);
    if (line.empty() || line[0] == '#') continue;
    if (line.front() == '[') {
      if (line.back() != ']')
        throw ConfigError("config line " + std::to_string(line_no) + ": unterminated section");
      section = trim(line.substr(1, line.size() - 2));
      if (section.empty())
        throw ConfigError("config line " + std::to_string(line_no) + ": empty section name");
      continue;
    }
    const auto eq = line.find('=');
    if (eq == std::string::npos)
      throw ConfigError("config line " + std::to_string(line_no) + ": expected key = value");
    const std::string key = trim(line.substr(0, eq));
    const std::string value = trim(line.substr(eq + 1));
    if (key.empty())
      throw ConfigError("config line " + std::to_string(line_no) + ": empty key");
    const std::string full = section.empty() ? key : section + "." + key;
    if (cfg.values_.count(full))
      throw ConfigError("config line " + std::to_string(line_no) + ": duplicate key '" + full +
                        "'");
    cfg.values_[full] = value;
    cfg.consumed_[full] = false;
  }
  return cfg;
}

std::string KeyValueConfig::get_string(const std::string& key, const std::string& fallback) {
  auto it = values_.find(key);
  if (it == values_.end()) return fallback;
  consumed_[key] = true;
  return it->second;
}

long KeyValueConfig::get_long(const std::string& key, long fallback) {
  auto it = values_.find(key);
  if (it == values_.end()) return fallback;
  consumed_[key] = true;
  try {
    size_t pos = 0;
    long v = std::stol(it->second, &pos);
    if (pos != it->second.size()) throw std::invalid_argument("trailing");
    return v;
  } catch (const std::exception&) {
    throw ConfigError("config key '" + key + "': bad integer '" + it->second + "'");
  }
}

double KeyValueConfig::get_double(const std::string& key, double fallback) {
  auto it = values_.find(key);
  if (it == values_.end()) return fallback;
  consumed_[key] = true;
  double v = 0.0;
  if (!parse_double(it->second, v))
    throw ConfigError("config key '" + key + "': bad number '" + it->second + "'");
  return v;
}

bool KeyValueConfig::get_bool(const std::string& key, bool fallback) {
  auto it = values_.find(key);
  if (it == values_.end()) return fallback;
  consumed_[key] = true;
  if (it->second == "true" || it->second == "on" || it->second == "1") return true;
  if (it->second == "false" || it->second == "off" || it->second == "0") return false;
  throw ConfigError("config key '" + key + "': bad boolean '" + it->second + "'");
}

std::vector<long> KeyValueConfig::get_long_list(const std::string& key,
                                                const std::vector<long>& fallback) {
  auto it = values_.find(key);
  if (it == values_.end()) return fallback;
  consumed_[key] = true;
  std::vector<long> out;
  if (trim(it->second).empty()) return out;
  std::stringstream ss(it->second);
  std::string item;
  while (std::getline(ss, item, ',')) {
    try {
      out.push_back(std::stol(trim(item)));
    } catch (const std::exception&) {
      throw ConfigError("config key '" + key + "': bad list entry '" + item + "'");
    }
  }
  return out;
}

void KeyValueConfig::finish() const {
  std::string unknown;
  for (const auto& [key, used] : consumed_) {
    if (!used) {
      if (!unknown.empty()) unknown += ", ";
      unknown += key;
    }
  }
  if (!unknown.empty()) throw ConfigError("unknown config keys: " + unknown);
}

ExperimentConfig experiment_config_from(KeyValueConfig& kv) {
  ExperimentConfig cfg;
  cfg.out = kv.get_string("paths.out", cfg.out.string());
  cfg.corpus = kv.get_string("paths.corpus", cfg.corpus.string());

  cfg.seed = static_cast<std::uint64_t>(kv.get_long("seed", static_cast<long>(cfg.seed)));

  cfg.corpus_cfg.train_users =
      static_cast<int>(kv.get_long("corpus.train_users", cfg.corpus_cfg.train_users));
  cfg.corpus_cfg.val_users =
      static_cast<int>(kv.get_long("corpus.val_users", cfg.corpus_cfg.val_users));
  cfg.corpus_cfg.test_users =
      static_cast<int>(kv.get_long("corpus.test_users", cfg.corpus_cfg.test_users));
  cfg.corpus_cfg.sessions_per_user =
      static_cast<int>(kv.get_long("corpus.sessions_per_user", cfg.corpus_cfg.sessions_per_user));
  cfg.corpus_cfg.session_seconds =
      kv.get_double("corpus.session_seconds", cfg.corpus_cfg.session_seconds);
  cfg.corpus_cfg.rate_hz = kv.get_double("corpus.rate_hz", cfg.corpus_cfg.rate_hz);
  cfg.corpus_cfg.recal_from_session =
      static_cast<int>(kv.get_long("corpus.recal_from_session", cfg.corpus_cfg.recal_from_session));
  cfg.corpus_cfg.seed = cfg.seed;

  cfg.rate_hz = kv.get_double("pipeline.rate_hz", cfg.rate_hz);
  cfg.block_len = static_cast<int>(kv.get_long("pipeline.block_len", cfg.block_len));
  cfg.block_count = static_cast<int>(kv.get_long("pipeline.block_count", cfg.block_count));
  cfg.overlap = kv.get_double("pipeline.overlap", cfg.overlap);

  cfg.family = cell_family_from_string(kv.get_string("model.family", to_string(cfg.family)));
  const std::string conv_layers = kv.get_string("model.conv_layers", "8:7:2,8:5:2");
  cfg.conv.layers.clear();
  if (!conv_layers.empty()) {
    std::stringstream ss(conv_layers);
    std::string part;
    while (std::getline(ss, part, ',')) {
      int filters = 0, width = 0, pool = 0;
      if (std::sscanf(part.c_str(), "%d:%d:%d", &filters, &width, &pool) != 3)
        throw ConfigError("model.conv_layers: bad layer '" + part + "' (want filters:width:pool)");
      cfg.conv.layers.push_back({filters, width, pool});
    }
  }
  for (long v : kv.get_long_list("model.fc_sizes", {}))
    cfg.conv.fc_sizes.push_back(static_cast<int>(v));
  cfg.clock.base = static_cast<int>(kv.get_long("model.clock_base", 2));
  cfg.clock.units_per_band.clear();
  for (long v : kv.get_long_list("model.clock_units", {6, 6, 6, 6}))
    cfg.clock.units_per_band.push_back(static_cast<int>(v));
  cfg.hidden = static_cast<int>(kv.get_long("model.hidden", cfg.hidden));

  cfg.train.lr = kv.get_double("train.lr", cfg.train.lr);
  cfg.train.lr_decay = kv.get_double("train.lr_decay", cfg.train.lr_decay);
  cfg.train.epochs = static_cast<int>(kv.get_long("train.epochs", cfg.train.epochs));
  cfg.train.batch_size = static_cast<int>(kv.get_long("train.batch_size", cfg.train.batch_size));
  cfg.train.dropout = kv.get_double("train.dropout", cfg.train.dropout);
  cfg.train_augment = kv.get_bool("train.augment", cfg.train_augment);
  cfg.holdout_sessions =
      static_cast<int>(kv.get_long("train.holdout_sessions", cfg.holdout_sessions));
  cfg.chunks_per_session =
      static_cast<int>(kv.get_long("train.chunks_per_session", cfg.chunks_per_session));
  cfg.train.seed = cfg.seed;

  cfg.gmm_components = static_cast<int>(kv.get_long("gmm.components", cfg.gmm_components));
  cfg.pca_dim = static_cast<int>(kv.get_long("gmm.pca_dim", cfg.pca_dim));
  cfg.relevance = kv.get_double("gmm.relevance", cfg.relevance);
  cfg.kmeans_iters = static_cast<int>(kv.get_long("gmm.kmeans_iters", cfg.kmeans_iters));
  cfg.em_iters = static_cast<int>(kv.get_long("gmm.em_iters", cfg.em_iters));
  cfg.map_iters = static_cast<int>(kv.get_long("gmm.map_iters", cfg.map_iters));
  cfg.t_subset_count = static_cast<int>(kv.get_long("gmm.t_models", cfg.t_subset_count));
  cfg.z_sequence_count = static_cast<int>(kv.get_long("gmm.z_sequences", cfg.z_sequence_count));
  cfg.ubm_max_vectors = kv.get_long("gmm.max_vectors", cfg.ubm_max_vectors);
  cfg.gmm_features = kv.get_string("gmm.features", cfg.gmm_features);
  if (cfg.gmm_features != "extractor" && cfg.gmm_features != "raw")
    throw ConfigError("gmm.features must be 'extractor' or 'raw'");

  cfg.window_s = kv.get_double("eval.window_s", cfg.window_s);
  cfg.top_fraction = kv.get_double("eval.top_fraction", cfg.top_fraction);
  cfg.enroll_sessions = static_cast<int>(kv.get_long("eval.enroll_sessions", cfg.enroll_sessions));

  kv.finish();
  return cfg;
}

ExperimentConfig load_experiment_config(const std::filesystem::path& path) {
  KeyValueConfig kv = KeyValueConfig::parse_file(path);
  return experiment_config_from(kv);
}

}  // namespace kinauth
