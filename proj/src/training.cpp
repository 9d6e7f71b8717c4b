#include "kinauth/training.hpp"

#include <algorithm>
#include <cmath>
#include <iostream>
#include <numeric>
#include <stdexcept>

#include "kinauth/errors.hpp"
#include "kinauth/rng.hpp"

namespace kinauth {

namespace {

constexpr double kProbFloor = 1e-12;

// Backpropagates through the convolutional stack of one block; dout is the
// gradient at the stack output. The gradient w.r.t. the raw input is dropped.
void conv_backward(const ModelGraph& model, const BlockTrace& bt, Eigen::MatrixXd dout,
                   ModelGraph& g) {
  for (int l = static_cast<int>(model.conv.size()) - 1; l >= 0; --l) {
    const ConvLayerTrace& ct = bt.conv[l];
    const ConvLayerSpec& spec = model.conv_spec.layers[l];
    Eigen::MatrixXd dact = Eigen::MatrixXd::Zero(ct.act.rows(), ct.act.cols());
    for (long t = 0; t < dout.rows(); ++t)
      for (long f = 0; f < dout.cols(); ++f) dact(ct.pool_arg(t, f), f) += dout(t, f);
    Eigen::MatrixXd dpre = (dact.array() * (1.0 - ct.act.array().square())).matrix();
    Eigen::MatrixXd dinput = Eigen::MatrixXd::Zero(ct.input.rows(), ct.input.cols());
    const long c_in = ct.input.cols();
    for (long t = 0; t < dpre.rows(); ++t) {
      for (long f = 0; f < dpre.cols(); ++f) {
        const double d = dpre(t, f);
        if (d == 0.0) continue;
        g.conv[l].bias(f) += d;
        for (long c = 0; c < c_in; ++c) {
          for (int tau = 0; tau < spec.width; ++tau) {
            g.conv[l].kernel(f, c * spec.width + tau) += d * ct.input(t + tau, c);
            dinput(t + tau, c) += model.conv[l].kernel(f, c * spec.width + tau) * d;
          }
        }
      }
    }
    dout = std::move(dinput);
  }
}

}  // namespace

double sequence_loss(const Eigen::MatrixXd& probs, int label) {
  if (probs.rows() < 1) throw DataError("sequence loss needs at least one block");
  if (label < 0 || label >= probs.cols()) throw DataError("label out of range");
  double loss = 0.0;
  for (long b = 0; b < probs.rows(); ++b) {
    double p = probs(b, label);
    if (p < kProbFloor) {
      std::cerr << "warning: clamping zero class probability in loss\n";
      p = kProbFloor;
    }
    loss -= std::log(p);
  }
  return loss / static_cast<double>(probs.rows());
}

double sequence_loss(const ModelGraph& model, const SequenceBatch& seq, int label) {
  return sequence_loss(forward_sequence(model, seq).probs, label);
}

BackpropResult backprop_sequence(const ModelGraph& model, const SequenceBatch& seq, int label,
                                 const DropoutMasks* dropout) {
  if (!model.has_head()) throw ConfigError("backpropagation needs a classification head");
  const int C = model.n_classes();
  if (label < 0 || label >= C) throw DataError("label out of range");

  ForwardTrace tr = forward_trace(model, seq, dropout);
  const int B = static_cast<int>(tr.blocks.size());
  const int T = tr.steps_per_block;
  const int H = model.hidden;

  BackpropResult res;
  res.grads = zero_like(model);
  ModelGraph& g = res.grads;

  double loss = 0.0;
  std::vector<Eigen::VectorXd> dpooled(B);
  for (int b = 0; b < B; ++b) {
    const BlockTrace& bt = tr.blocks[b];
    const double p = bt.probs(label);
    loss -= std::log(std::max(p, kProbFloor));
    Eigen::VectorXd dlogits = Eigen::VectorXd::Zero(C);
    if (p >= kProbFloor) {  // clamped loss is locally constant
      dlogits = bt.probs / B;
      dlogits(label) -= 1.0 / B;
    }
    g.head_W += dlogits * bt.dropped.transpose();
    g.head_b += dlogits;
    Eigen::VectorXd dd = model.head_W.transpose() * dlogits;
    if (dropout && !dropout->feature.empty()) dd = dd.cwiseProduct(dropout->feature[b]);
    dpooled[b] = std::move(dd);
  }
  res.loss = loss / B;

  if (model.family == CellFamily::conv_only) {
    for (int b = 0; b < B; ++b) {
      const BlockTrace& bt = tr.blocks[b];
      Eigen::VectorXd d = dpooled[b];
      for (int l = static_cast<int>(model.fc.size()) - 1; l >= 0; --l) {
        if (dropout && !dropout->fc.empty()) d = d.cwiseProduct(dropout->fc[b][l]);
        Eigen::ArrayXd th = bt.fc_pre[l].array().tanh();
        Eigen::VectorXd dz = (d.array() * (1.0 - th.square())).matrix();
        Eigen::VectorXd prev = l == 0
                                   ? Eigen::VectorXd(bt.recur_in.colwise().mean().transpose())
                                   : bt.fc_act[l - 1];
        g.fc[l].W += dz * prev.transpose();
        g.fc[l].b += dz;
        d = model.fc[l].W.transpose() * dz;
      }
      const double inv_t = 1.0 / static_cast<double>(bt.recur_in.rows());
      Eigen::MatrixXd dconv(bt.recur_in.rows(), bt.recur_in.cols());
      for (long t = 0; t < dconv.rows(); ++t) dconv.row(t) = d.transpose() * inv_t;
      conv_backward(model, bt, std::move(dconv), g);
    }
    return res;
  }

  const long total = static_cast<long>(B) * T;
  std::vector<Eigen::VectorXd> dh(total, Eigen::VectorXd::Zero(H));
  for (int b = 0; b < B; ++b)
    for (int s = 0; s < T; ++s) dh[static_cast<long>(b) * T + s] += dpooled[b] / T;

  std::vector<Eigen::MatrixXd> drecur(B);
  for (int b = 0; b < B; ++b) drecur[b] = Eigen::MatrixXd::Zero(T, model.recur_input_dim());

  Eigen::VectorXd dc_carry = Eigen::VectorXd::Zero(H);
  for (long t = total - 1; t >= 0; --t) {
    const int b = static_cast<int>(t / T);
    const int s = static_cast<int>(t % T);
    const Eigen::VectorXd x = tr.blocks[b].recur_in.row(s).transpose();
    const Eigen::VectorXd h_prev = t > 0 ? tr.h[t - 1] : Eigen::VectorXd::Zero(H);
    Eigen::VectorXd dx = Eigen::VectorXd::Zero(model.recur_input_dim());

    switch (model.family) {
      case CellFamily::rnn: {
        Eigen::VectorXd dpre = (dh[t].array() * (1.0 - tr.h[t].array().square())).matrix();
        g.cell.W += dpre * x.transpose();
        g.cell.U += dpre * h_prev.transpose();
        g.cell.b += dpre;
        dx = model.cell.W.transpose() * dpre;
        if (t > 0) dh[t - 1] += model.cell.U.transpose() * dpre;
        break;
      }
      case CellFamily::cwrnn: {
        const auto& cfg = model.clock;
        for (int k = 0; k < cfg.bands(); ++k) {
          const int off = cfg.band_offset(k), sz = cfg.units_per_band[k];
          if (t % cfg.period(k) != 0) {
            // inactive band copied its value: gradient flows straight back
            dh[t - 1].segment(off, sz) += dh[t].segment(off, sz);
            continue;
          }
          Eigen::VectorXd dpre = (dh[t].segment(off, sz).array() *
                                  (1.0 - tr.h[t].segment(off, sz).array().square()))
                                     .matrix();
          g.cell.W.middleRows(off, sz) += dpre * x.transpose();
          g.cell.b.segment(off, sz) += dpre;
          dx += model.cell.W.middleRows(off, sz).transpose() * dpre;
          for (int j = k; j < cfg.bands(); ++j) {
            const int joff = cfg.band_offset(j), jsz = cfg.units_per_band[j];
            g.cell.U.block(off, joff, sz, jsz) += dpre * h_prev.segment(joff, jsz).transpose();
            if (t > 0)
              dh[t - 1].segment(joff, jsz) +=
                  model.cell.U.block(off, joff, sz, jsz).transpose() * dpre;
          }
        }
        break;
      }
      case CellFamily::dcwrnn: {
        const auto& cfg = model.clock;
        for (int k = 0; k < cfg.bands(); ++k) {
          const int off = cfg.band_offset(k), sz = cfg.units_per_band[k];
          const long src = t - cfg.period(k);
          Eigen::VectorXd dpre = (dh[t].segment(off, sz).array() *
                                  (1.0 - tr.h[t].segment(off, sz).array().square()))
                                     .matrix();
          g.cell.W.middleRows(off, sz) += dpre * x.transpose();
          g.cell.b.segment(off, sz) += dpre;
          dx += model.cell.W.middleRows(off, sz).transpose() * dpre;
          if (src >= 0) {
            for (int j = k; j < cfg.bands(); ++j) {
              const int joff = cfg.band_offset(j), jsz = cfg.units_per_band[j];
              g.cell.U.block(off, joff, sz, jsz) +=
                  dpre * tr.h[src].segment(joff, jsz).transpose();
              dh[src].segment(joff, jsz) +=
                  model.cell.U.block(off, joff, sz, jsz).transpose() * dpre;
            }
          }
        }
        break;
      }
      case CellFamily::lstm: {
        const CellWeights& w = model.cell;
        const Eigen::VectorXd c_prev = t > 0 ? tr.c[t - 1] : Eigen::VectorXd::Zero(H);
        const Eigen::ArrayXd tc = tr.c[t].array().tanh();
        const Eigen::ArrayXd dht = dh[t].array();
        const Eigen::ArrayXd d_o = dht * tc;
        const Eigen::ArrayXd d_c = dc_carry.array() + dht * tr.go[t].array() * (1.0 - tc.square());
        const Eigen::ArrayXd d_i = d_c * tr.gu[t].array();
        const Eigen::ArrayXd d_f = d_c * c_prev.array();
        const Eigen::ArrayXd d_u = d_c * tr.gi[t].array();
        dc_carry = (d_c * tr.gf[t].array()).matrix();
        const Eigen::VectorXd dpi =
            (d_i * tr.gi[t].array() * (1.0 - tr.gi[t].array())).matrix();
        const Eigen::VectorXd dpf =
            (d_f * tr.gf[t].array() * (1.0 - tr.gf[t].array())).matrix();
        const Eigen::VectorXd dpo =
            (d_o * tr.go[t].array() * (1.0 - tr.go[t].array())).matrix();
        const Eigen::VectorXd dpu = (d_u * (1.0 - tr.gu[t].array().square())).matrix();
        g.cell.Wi += dpi * x.transpose();
        g.cell.Ui += dpi * h_prev.transpose();
        g.cell.bi += dpi;
        g.cell.Wf += dpf * x.transpose();
        g.cell.Uf += dpf * h_prev.transpose();
        g.cell.bf += dpf;
        g.cell.Wo += dpo * x.transpose();
        g.cell.Uo += dpo * h_prev.transpose();
        g.cell.bo += dpo;
        g.cell.Wg += dpu * x.transpose();
        g.cell.Ug += dpu * h_prev.transpose();
        g.cell.bg += dpu;
        dx = w.Wi.transpose() * dpi + w.Wf.transpose() * dpf + w.Wo.transpose() * dpo +
             w.Wg.transpose() * dpu;
        if (t > 0)
          dh[t - 1] += w.Ui.transpose() * dpi + w.Uf.transpose() * dpf +
                       w.Uo.transpose() * dpo + w.Ug.transpose() * dpu;
        break;
      }
      case CellFamily::conv_only:
        break;  // unreachable
    }
    drecur[b].row(s) = dx.transpose();
  }

  for (int b = 0; b < B; ++b) conv_backward(model, tr.blocks[b], std::move(drecur[b]), g);
  return res;
}

GradCheckReport gradient_check(const ModelGraph& model, const SequenceBatch& seq, int label,
                               double step, double threshold) {
  if (!(step > 0.0)) throw std::invalid_argument("gradient check step must be positive");
  BackpropResult bp = backprop_sequence(model, seq, label, nullptr);
  ModelGraph work = model;
  ModelGraph grads = bp.grads;
  auto wrefs = param_refs(work);
  auto grefs = param_refs(grads);

  GradCheckReport rep;
  rep.step = step;
  rep.threshold = threshold;
  for (size_t r = 0; r < wrefs.size(); ++r) {
    // relative error accumulated over the whole group vector, so a tiny
    // coordinate's finite-difference truncation noise cannot dominate
    double diff_sq = 0.0, a_sq = 0.0, n_sq = 0.0;
    for (long i = 0; i < wrefs[r].size(); ++i) {
      const double orig = wrefs[r].at(i);
      wrefs[r].at(i) = orig + step;
      const double lp = sequence_loss(work, seq, label);
      wrefs[r].at(i) = orig - step;
      const double lm = sequence_loss(work, seq, label);
      wrefs[r].at(i) = orig;
      const double numeric = (lp - lm) / (2.0 * step);
      const double analytic = grefs[r].at(i);
      diff_sq += (analytic - numeric) * (analytic - numeric);
      a_sq += analytic * analytic;
      n_sq += numeric * numeric;
    }
    GradCheckEntry entry{wrefs[r].name,
                         std::sqrt(diff_sq) /
                             std::max({std::sqrt(a_sq), std::sqrt(n_sq), 1e-8})};
    rep.max_rel_err = std::max(rep.max_rel_err, entry.max_rel_err);
    rep.groups.push_back(std::move(entry));
  }
  rep.pass = rep.max_rel_err < threshold;
  return rep;
}

namespace {

DropoutMasks make_masks(const ModelGraph& model, int n_blocks, double p, Rng& rng) {
  DropoutMasks masks;
  if (p <= 0.0) return masks;
  const double scale = 1.0 / (1.0 - p);
  auto draw = [&](long n) {
    Eigen::VectorXd m(n);
    for (long i = 0; i < n; ++i) m(i) = rng.uniform01() < p ? 0.0 : scale;
    return m;
  };
  if (model.family == CellFamily::conv_only && !model.fc.empty()) {
    masks.fc.resize(n_blocks);
    for (int b = 0; b < n_blocks; ++b) {
      masks.fc[b].reserve(model.fc.size());
      for (const auto& fc : model.fc) masks.fc[b].push_back(draw(fc.W.rows()));
    }
  } else {
    masks.feature.reserve(n_blocks);
    for (int b = 0; b < n_blocks; ++b) masks.feature.push_back(draw(model.feature_dim()));
  }
  return masks;
}

SequenceBatch augmented_blocks(const TrainExample& ex, const AugmentContext& ctx, Rng& rng) {
  if (!ex.raw) throw ConfigError("augmented training needs raw streams in the corpus");
  auto [stream, ov] = obfuscate(*ex.raw, rng, ctx.channels.stdev);
  auto frames = extract_features(stream, ctx.norm);
  return assemble_blocks(frames, ctx.block_len, ctx.block_count, ctx.overlap);
}

// y += a * x over every trainable parameter
void axpy(double a, ModelGraph& x, ModelGraph& y) {
  auto xr = param_refs(x);
  auto yr = param_refs(y);
  for (size_t r = 0; r < xr.size(); ++r)
    for (long i = 0; i < xr[r].size(); ++i) yr[r].at(i) += a * xr[r].at(i);
}

}  // namespace

TrainResult train_extractor(const std::vector<TrainExample>& train,
                            const std::vector<TrainExample>& val, ModelGraph model,
                            const TrainConfig& cfg) {
  if (!model.has_head() || model.n_classes() < 2)
    throw ConfigError("training needs a head over at least two classes");
  if (cfg.lr < 0.0) throw ConfigError("learning rate must be non-negative");
  if (cfg.dropout < 0.0 || cfg.dropout >= 1.0) throw ConfigError("dropout must be in [0,1)");
  if (cfg.epochs < 0) throw ConfigError("negative epoch count");
  if (cfg.batch_size < 1) throw ConfigError("batch size must be positive");
  if (train.empty()) throw DataError("empty training corpus");

  std::vector<char> seen(model.n_classes(), 0);
  for (const auto& ex : train) {
    if (ex.label < 0 || ex.label >= model.n_classes())
      throw DataError("training label " + std::to_string(ex.label) + " out of range");
    seen[ex.label] = 1;
  }
  for (int c = 0; c < model.n_classes(); ++c)
    if (!seen[c]) throw DataError("class " + std::to_string(c) + " missing from training corpus");

  const size_t n = train.size();
  TrainResult out;
  ModelGraph last_good = model;
  ModelGraph best = model;
  double best_val = std::numeric_limits<double>::infinity();

  for (int epoch = 0; epoch < cfg.epochs; ++epoch) {
    const double lr = cfg.lr * std::pow(cfg.lr_decay, epoch);
    std::vector<size_t> order(n);
    std::iota(order.begin(), order.end(), 0);
    Rng shuffle_rng(derive_seed(cfg.seed, "shuffle", static_cast<std::uint64_t>(epoch)));
    shuffle_rng.shuffle(order);

    double epoch_loss = 0.0;
    bool finite = true;
    for (size_t pos = 0; pos < n && finite; pos += cfg.batch_size) {
      ModelGraph acc = zero_like(model);
      const size_t end = std::min(n, pos + cfg.batch_size);
      for (size_t slot = pos; slot < end; ++slot) {
        const TrainExample& ex = train[order[slot]];
        const std::uint64_t stream_idx = static_cast<std::uint64_t>(epoch) * n + slot;
        SequenceBatch seq = ex.seq;
        if (cfg.augment) {
          Rng aug_rng(derive_seed(cfg.seed, "obfuscation", stream_idx));
          seq = augmented_blocks(ex, *cfg.augment, aug_rng);
        }
        Rng mask_rng(derive_seed(cfg.seed, "dropout", stream_idx));
        DropoutMasks masks = make_masks(model, seq.n_blocks(), cfg.dropout, mask_rng);
        BackpropResult bp =
            backprop_sequence(model, seq, ex.label, cfg.dropout > 0.0 ? &masks : nullptr);
        if (!std::isfinite(bp.loss)) {
          finite = false;
          break;
        }
        epoch_loss += bp.loss;
        axpy(1.0, bp.grads, acc);
      }
      if (finite && lr != 0.0) axpy(-lr, acc, model);
    }
    epoch_loss /= static_cast<double>(n);

    if (!finite || !std::isfinite(epoch_loss)) {
      out.diverged = true;
      out.model = out.best_epoch >= 0 ? best : last_good;
      return out;
    }
    out.train_curve.push_back(epoch_loss);

    if (!val.empty()) {
      double vloss = 0.0;
      for (const auto& ex : val) vloss += sequence_loss(model, ex.seq, ex.label);
      vloss /= static_cast<double>(val.size());
      out.val_curve.push_back(vloss);
      if (vloss < best_val) {
        best_val = vloss;
        best = model;
        out.best_epoch = epoch;
      }
    }
    last_good = model;
  }

  out.model = val.empty() ? model : best;
  if (val.empty()) out.best_epoch = cfg.epochs - 1;
  return out;
}

ModelGraph strip_head(const ModelGraph& model) {
  ModelGraph stripped = model;
  stripped.head_W.resize(0, 0);
  stripped.head_b.resize(0);
  return stripped;
}

}  // namespace kinauth
