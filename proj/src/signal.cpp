#include "kinauth/signal.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <sstream>

#include "kinauth/errors.hpp"
#include "kinauth/io_util.hpp"

namespace kinauth {

bool ObfuscationVector::is_identity() const {
  return gain_accel == Vec3::Ones() && gain_gyro == Vec3::Ones() &&
         offset_accel == Vec3::Zero() && offset_gyro == Vec3::Zero();
}

SensorStream ingest_csv(const std::filesystem::path& path, const CsvSchema& schema) {
  std::ifstream is(path);
  if (!is) throw DataError("cannot open " + path.string());

  std::string line;
  if (!std::getline(is, line)) throw ParseError(path.string() + ": empty file");
  std::vector<std::string> header = split_csv_line(line);

  std::array<int, 7> col{};
  for (int i = 0; i < 7; ++i) {
    auto it = std::find(header.begin(), header.end(), schema.columns[i]);
    if (it == header.end())
      throw ParseError(path.string() + ": missing column '" + schema.columns[i] + "'");
    col[i] = static_cast<int>(it - header.begin());
  }

  SensorStream stream;
  stream.session_id = path.stem().string();
  int line_no = 1;
  while (std::getline(is, line)) {
    ++line_no;
    if (line.empty()) continue;
    std::vector<std::string> cells = split_csv_line(line);
    RawFrame frame;
    double vals[7];
    for (int i = 0; i < 7; ++i) {
      if (col[i] >= static_cast<int>(cells.size()) || !parse_double(cells[col[i]], vals[i]))
        throw ParseError(path.string() + ": line " + std::to_string(line_no) +
                         ": bad value in column '" + schema.columns[i] + "'");
    }
    frame.t = vals[0];
    frame.accel = Vec3(vals[1], vals[2], vals[3]);
    frame.gyro = Vec3(vals[4], vals[5], vals[6]);

    if (!stream.frames.empty()) {
      double prev = stream.frames.back().t;
      if (frame.t == prev) continue;  // duplicate timestamp, keep first
      if (frame.t < prev)
        throw DataError(path.string() + ": line " + std::to_string(line_no) +
                        ": non-monotone timestamp");
    }
    stream.frames.push_back(frame);
  }
  return stream;
}

void write_stream_csv(const std::filesystem::path& path, const SensorStream& stream,
                      const CsvSchema& schema) {
  write_file_atomic(path, [&](std::ostream& os) {
    for (int i = 0; i < 7; ++i) os << (i ? "," : "") << schema.columns[i];
    os << "\n";
    os.precision(10);
    for (const RawFrame& f : stream.frames) {
      os << f.t << "," << f.accel.x() << "," << f.accel.y() << "," << f.accel.z() << ","
         << f.gyro.x() << "," << f.gyro.y() << "," << f.gyro.z() << "\n";
    }
  });
}

SensorStream resample(const SensorStream& stream, double target_hz) {
  if (target_hz <= 0.0) throw std::invalid_argument("resample: target_hz must be positive");
  if (stream.frames.size() < 2)
    throw InsufficientDataError("resample: need at least 2 frames, have " +
                                std::to_string(stream.frames.size()));

  const double t0 = stream.frames.front().t;
  const double t1 = stream.frames.back().t;
  const long n = static_cast<long>(std::floor((t1 - t0) * target_hz + 1e-9)) + 1;

  SensorStream out;
  out.rate_hz = target_hz;
  out.session_id = stream.session_id;
  out.user_id = stream.user_id;
  out.device_id = stream.device_id;
  out.frames.reserve(static_cast<std::size_t>(n));

  std::size_t seg = 0;  // frames[seg].t <= t < frames[seg+1].t
  for (long i = 0; i < n; ++i) {
    const double t = t0 + static_cast<double>(i) / target_hz;
    while (seg + 2 < stream.frames.size() && stream.frames[seg + 1].t <= t) ++seg;
    const RawFrame& a = stream.frames[seg];
    const RawFrame& b = stream.frames[seg + 1];
    const double span = b.t - a.t;
    double w = span > 0.0 ? (t - a.t) / span : 0.0;
    w = std::clamp(w, 0.0, 1.0);
    RawFrame f;
    f.t = t;
    f.accel = (1.0 - w) * a.accel + w * b.accel;
    f.gyro = (1.0 - w) * a.gyro + w * b.gyro;
    out.frames.push_back(f);
  }
  return out;
}

ObfuscationVector draw_obfuscation(Rng& rng, const Vec6& channel_std) {
  ObfuscationVector ov;
  for (int i = 0; i < 12; ++i) ov.raw_mu[i] = rng.uniform(0.98, 1.02);
  for (int i = 0; i < 3; ++i) {
    ov.gain_accel[i] = ov.raw_mu[i];
    ov.gain_gyro[i] = ov.raw_mu[3 + i];
    ov.offset_accel[i] = (ov.raw_mu[6 + i] - 1.0) * channel_std[i];
    ov.offset_gyro[i] = (ov.raw_mu[9 + i] - 1.0) * channel_std[3 + i];
  }
  return ov;
}

SensorStream apply_obfuscation(const SensorStream& stream, const ObfuscationVector& ov) {
  if (ov.is_identity()) return stream;
  SensorStream out = stream;
  for (RawFrame& f : out.frames) {
    f.accel = ov.gain_accel.cwiseProduct(f.accel) + ov.offset_accel;
    f.gyro = ov.gain_gyro.cwiseProduct(f.gyro) + ov.offset_gyro;
  }
  return out;
}

std::pair<SensorStream, ObfuscationVector> obfuscate(const SensorStream& stream, Rng& rng,
                                                     const Vec6& channel_std) {
  if (stream.frames.empty()) throw InsufficientDataError("obfuscate: empty stream");
  ObfuscationVector ov = draw_obfuscation(rng, channel_std);
  return {apply_obfuscation(stream, ov), ov};
}

namespace {

// arccos(component/magnitude), pi/2 when the vector vanishes
inline void axis_angles(const Vec3& v, double mag, double* out) {
  for (int i = 0; i < 3; ++i) {
    if (mag > 0.0) {
      out[i] = std::acos(std::clamp(v[i] / mag, -1.0, 1.0));
    } else {
      out[i] = M_PI / 2.0;
    }
  }
}

}  // namespace

Vec14 raw_feature_vector(const RawFrame& frame) {
  Vec14 v;
  const double mag_a = frame.accel.norm();
  const double mag_w = frame.gyro.norm();
  v.segment<3>(0) = frame.accel;
  v.segment<3>(3) = frame.gyro;
  double angles[3];
  axis_angles(frame.accel, mag_a, angles);
  v[6] = angles[0];
  v[7] = angles[1];
  v[8] = angles[2];
  axis_angles(frame.gyro, mag_w, angles);
  v[9] = angles[0];
  v[10] = angles[1];
  v[11] = angles[2];
  v[12] = mag_a;
  v[13] = mag_w;
  return v;
}

std::vector<FeatureFrame> extract_features(const SensorStream& stream,
                                           const NormalizationStats& stats) {
  std::vector<FeatureFrame> out;
  out.reserve(stream.frames.size());
  for (const RawFrame& f : stream.frames) {
    FeatureFrame ff;
    ff.v = (raw_feature_vector(f) - stats.mean).cwiseQuotient(stats.stdev);
    out.push_back(ff);
  }
  return out;
}

NormalizationStats fit_normalization(const std::vector<SensorStream>& corpus) {
  Vec14 sum = Vec14::Zero();
  Vec14 sumsq = Vec14::Zero();
  long count = 0;
  for (const SensorStream& s : corpus) {
    for (const RawFrame& f : s.frames) {
      Vec14 v = raw_feature_vector(f);
      sum += v;
      sumsq += v.cwiseProduct(v);
      ++count;
    }
  }
  if (count < 2)
    throw InsufficientDataError("fit_normalization: need at least 2 frames, have " +
                                std::to_string(count));
  NormalizationStats stats;
  stats.mean = sum / static_cast<double>(count);
  Vec14 var = sumsq / static_cast<double>(count) - stats.mean.cwiseProduct(stats.mean);
  stats.stdev = var.cwiseMax(0.0).cwiseSqrt().cwiseMax(NormalizationStats::kStdFloor);
  return stats;
}

ChannelStats fit_channel_stats(const std::vector<SensorStream>& corpus) {
  Vec6 sum = Vec6::Zero();
  Vec6 sumsq = Vec6::Zero();
  long count = 0;
  for (const SensorStream& s : corpus) {
    for (const RawFrame& f : s.frames) {
      Vec6 v;
      v.segment<3>(0) = f.accel;
      v.segment<3>(3) = f.gyro;
      sum += v;
      sumsq += v.cwiseProduct(v);
      ++count;
    }
  }
  if (count < 2)
    throw InsufficientDataError("fit_channel_stats: need at least 2 frames");
  ChannelStats stats;
  stats.mean = sum / static_cast<double>(count);
  Vec6 var = sumsq / static_cast<double>(count) - stats.mean.cwiseProduct(stats.mean);
  stats.stdev = var.cwiseMax(0.0).cwiseSqrt().cwiseMax(NormalizationStats::kStdFloor);
  return stats;
}

SequenceBatch assemble_blocks(const std::vector<FeatureFrame>& frames, int block_len,
                              int n_blocks, double overlap) {
  if (block_len <= 0 || n_blocks <= 0)
    throw std::invalid_argument("assemble_blocks: block_len and n_blocks must be positive");
  if (overlap < 0.0 || overlap >= 1.0)
    throw std::invalid_argument("assemble_blocks: overlap must be in [0,1)");

  const int stride = block_stride(block_len, overlap);
  const long required = block_len + static_cast<long>(n_blocks - 1) * stride;
  if (static_cast<long>(frames.size()) < required)
    throw InsufficientDataError("assemble_blocks: need " + std::to_string(required) +
                                " frames, have " + std::to_string(frames.size()));

  SequenceBatch batch;
  batch.block_len = block_len;
  batch.blocks.reserve(static_cast<std::size_t>(n_blocks));
  for (int b = 0; b < n_blocks; ++b) {
    Eigen::MatrixXd block(block_len, FeatureFrame::kDim);
    const long start = static_cast<long>(b) * stride;
    for (int j = 0; j < block_len; ++j)
      block.row(j) = frames[static_cast<std::size_t>(start + j)].v.transpose();
    batch.blocks.push_back(std::move(block));
  }
  return batch;
}

void save_batch(const std::filesystem::path& path, const SequenceBatch& batch) {
  write_file_atomic(path, [&](std::ostream& os) {
    put_u32(os, static_cast<std::uint32_t>(batch.n_blocks()));
    put_u32(os, static_cast<std::uint32_t>(batch.block_len));
    put_u32(os, FeatureFrame::kDim);
    for (const Eigen::MatrixXd& block : batch.blocks)
      for (int i = 0; i < block.rows(); ++i)
        for (int j = 0; j < block.cols(); ++j)
          put_f32(os, static_cast<float>(block(i, j)));
  });
}

SequenceBatch load_batch(const std::filesystem::path& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw DataError("cannot open " + path.string());
  const std::uint32_t b = get_u32(is);
  const std::uint32_t l = get_u32(is);
  const std::uint32_t d = get_u32(is);
  if (d != FeatureFrame::kDim)
    throw DataError(path.string() + ": expected 14-d frames, header says " + std::to_string(d));
  SequenceBatch batch;
  batch.block_len = static_cast<int>(l);
  batch.blocks.reserve(b);
  for (std::uint32_t k = 0; k < b; ++k) {
    Eigen::MatrixXd block(l, d);
    for (std::uint32_t i = 0; i < l; ++i)
      for (std::uint32_t j = 0; j < d; ++j) block(i, j) = get_f32(is);
    batch.blocks.push_back(std::move(block));
  }
  return batch;
}

}  // namespace kinauth
