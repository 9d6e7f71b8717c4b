#pragma once

#include <Eigen/Dense>
#include <array>
#include <filesystem>
#include <optional>
#include <string>
#include <vector>

#include "kinauth/rng.hpp"

namespace kinauth {

using Vec3 = Eigen::Vector3d;
using Vec6 = Eigen::Matrix<double, 6, 1>;
using Vec12 = Eigen::Matrix<double, 12, 1>;
using Vec14 = Eigen::Matrix<double, 14, 1>;

// One synchronized accelerometer+gyroscope reading in device axes.
struct RawFrame {
  double t = 0.0;  // seconds, strictly increasing within a stream
  Vec3 accel = Vec3::Zero();
  Vec3 gyro = Vec3::Zero();
};

struct SensorStream {
  std::vector<RawFrame> frames;
  double rate_hz = 0.0;  // set after resampling
  std::string session_id;
  std::string user_id;
  std::string device_id;

  std::size_t size() const { return frames.size(); }
};

// Per-example sensor noise draw: multiplicative gains as sampled, additive
// offsets derived from the same 12-d uniform draw (components minus one,
// scaled by the per-channel training standard deviation). An all-ones draw
// is the identity transform.
struct ObfuscationVector {
  Vec3 gain_accel = Vec3::Ones();
  Vec3 gain_gyro = Vec3::Ones();
  Vec3 offset_accel = Vec3::Zero();
  Vec3 offset_gyro = Vec3::Zero();
  Vec12 raw_mu = Vec12::Ones();

  bool is_identity() const;
};

// 14-d preprocessed frame: 6 normalized coordinates, 6 orientation angles,
// 2 magnitudes, in that order.
struct FeatureFrame {
  Vec14 v = Vec14::Zero();

  static constexpr int kCoords = 0;  // a_x a_y a_z w_x w_y w_z
  static constexpr int kAngles = 6;  // alpha_x..z phi_x..z, radians
  static constexpr int kMags = 12;   // |a| |w|
  static constexpr int kDim = 14;
};

struct NormalizationStats {
  Vec14 mean = Vec14::Zero();
  Vec14 stdev = Vec14::Ones();  // floored at kStdFloor
  static constexpr double kStdFloor = 1e-6;
};

// Mean/std of the 6 raw channels over the training corpus; scales the
// additive half of the obfuscation draw.
struct ChannelStats {
  Vec6 mean = Vec6::Zero();
  Vec6 stdev = Vec6::Ones();
};

// B blocks of block_len 14-d frames; consecutive blocks share
// floor(block_len*overlap) frames. Each block is (block_len x 14), rows
// indexed by time.
struct SequenceBatch {
  int block_len = 0;
  std::vector<Eigen::MatrixXd> blocks;
  std::optional<int> label;

  int n_blocks() const { return static_cast<int>(blocks.size()); }
};

struct CsvSchema {
  std::array<std::string, 7> columns = {"t", "ax", "ay", "az", "gx", "gy", "gz"};
};

// Reads one stream from CSV (header row required). Rows must be sorted by
// time; rows duplicating the previous timestamp are dropped (first kept),
// a backwards time step is a data error.
SensorStream ingest_csv(const std::filesystem::path& path, const CsvSchema& schema = {});

void write_stream_csv(const std::filesystem::path& path, const SensorStream& stream,
                      const CsvSchema& schema = {});

// Uniform grid from the first to the last timestamp, linear interpolation
// per channel. Needs at least two frames.
SensorStream resample(const SensorStream& stream, double target_hz);

ObfuscationVector draw_obfuscation(Rng& rng, const Vec6& channel_std);

SensorStream apply_obfuscation(const SensorStream& stream, const ObfuscationVector& ov);

std::pair<SensorStream, ObfuscationVector> obfuscate(const SensorStream& stream, Rng& rng,
                                                     const Vec6& channel_std);

// The 14-d vector before normalization. Zero-magnitude frames take
// arccos(0) = pi/2 for all three angles of that sensor.
Vec14 raw_feature_vector(const RawFrame& frame);

std::vector<FeatureFrame> extract_features(const SensorStream& stream,
                                           const NormalizationStats& stats);

// Per-dimension mean/std of the pre-normalization vectors over the whole
// corpus (population std, floored).
NormalizationStats fit_normalization(const std::vector<SensorStream>& corpus);

ChannelStats fit_channel_stats(const std::vector<SensorStream>& corpus);

SequenceBatch assemble_blocks(const std::vector<FeatureFrame>& frames, int block_len,
                              int n_blocks, double overlap);

inline int block_stride(int block_len, double overlap) {
  return static_cast<int>(block_len * (1.0 - overlap));
}

// Flat binary sequence format: three little-endian u32 counts (B, L, 14)
// followed by B*L*14 little-endian f32 values in block-major order.
void save_batch(const std::filesystem::path& path, const SequenceBatch& batch);
SequenceBatch load_batch(const std::filesystem::path& path);

}  // namespace kinauth
