#include "kinauth/models.hpp"

#include <cmath>
#include <cstdint>
#include <stdexcept>

#include "kinauth/errors.hpp"

namespace kinauth {

namespace {

void check_clock(const ClockworkConfig& cfg) {
  if (cfg.bands() < 1) throw ConfigError("clockwork config needs at least one band");
  if (cfg.base < 2) throw ConfigError("clockwork base must be >= 2");
  for (int k = 0; k < cfg.bands(); ++k) {
    if (cfg.units_per_band[k] < 1)
      throw ConfigError("clockwork band " + std::to_string(k) + " has no units");
  }
}

}  // namespace

CellFamily cell_family_from_string(const std::string& s) {
  if (s == "rnn") return CellFamily::rnn;
  if (s == "lstm") return CellFamily::lstm;
  if (s == "cwrnn") return CellFamily::cwrnn;
  if (s == "dcwrnn") return CellFamily::dcwrnn;
  if (s == "conv_only") return CellFamily::conv_only;
  throw ConfigError("unknown cell family '" + s + "'");
}

std::string to_string(CellFamily family) {
  switch (family) {
    case CellFamily::rnn: return "rnn";
    case CellFamily::lstm: return "lstm";
    case CellFamily::cwrnn: return "cwrnn";
    case CellFamily::dcwrnn: return "dcwrnn";
    case CellFamily::conv_only: return "conv_only";
  }
  throw ConfigError("bad cell family value");
}

int ClockworkConfig::total_units() const {
  int n = 0;
  for (int u : units_per_band) n += u;
  return n;
}

long ClockworkConfig::period(int k) const {
  long p = 1;
  for (int i = 0; i < k; ++i) p *= base;
  return p;
}

int ClockworkConfig::band_offset(int k) const {
  int off = 0;
  for (int i = 0; i < k; ++i) off += units_per_band[i];
  return off;
}

std::vector<int> active_bands(long t, const ClockworkConfig& cfg) {
  std::vector<int> out;
  for (int k = 0; k < cfg.bands(); ++k)
    if (t % cfg.period(k) == 0) out.push_back(k);
  return out;
}

long buffer_capacity(const ClockworkConfig& cfg) {
  long m = 0;
  for (int k = 0; k < cfg.bands(); ++k)
    m += static_cast<long>(cfg.units_per_band[k]) * (cfg.period(k) - 1);
  return m;
}

void apply_clockwork_mask(Eigen::MatrixXd& U, const ClockworkConfig& cfg) {
  for (int k = 0; k < cfg.bands(); ++k)
    for (int j = 0; j < k; ++j)
      U.block(cfg.band_offset(k), cfg.band_offset(j), cfg.units_per_band[k],
              cfg.units_per_band[j]).setZero();
}

Eigen::VectorXd rnn_step(const Eigen::VectorXd& x, const Eigen::VectorXd& h_prev,
                         const CellWeights& w) {
  return (w.W * x + w.U * h_prev + w.b).array().tanh();
}

LstmState lstm_step(const Eigen::VectorXd& x, const LstmState& prev, const CellWeights& w) {
  auto sigmoid = [](const Eigen::VectorXd& v) {
    return (1.0 / (1.0 + (-v.array()).exp())).matrix();
  };
  Eigen::VectorXd i = sigmoid(w.Wi * x + w.Ui * prev.h + w.bi);
  Eigen::VectorXd f = sigmoid(w.Wf * x + w.Uf * prev.h + w.bf);
  Eigen::VectorXd o = sigmoid(w.Wo * x + w.Uo * prev.h + w.bo);
  Eigen::VectorXd u = (w.Wg * x + w.Ug * prev.h + w.bg).array().tanh();
  LstmState next;
  next.c = f.cwiseProduct(prev.c) + i.cwiseProduct(u);
  next.h = o.cwiseProduct(next.c.array().tanh().matrix());
  return next;
}

Eigen::VectorXd cwrnn_step(const Eigen::VectorXd& x, const Eigen::VectorXd& h_prev, long t,
                           const CellWeights& w, const ClockworkConfig& cfg) {
  Eigen::VectorXd h = h_prev;  // inactive bands keep their value bit for bit
  for (int k = 0; k < cfg.bands(); ++k) {
    if (t % cfg.period(k) != 0) continue;
    int off = cfg.band_offset(k);
    int sz = cfg.units_per_band[k];
    Eigen::VectorXd pre = w.W.middleRows(off, sz) * x + w.b.segment(off, sz);
    for (int j = k; j < cfg.bands(); ++j) {
      pre += w.U.block(off, cfg.band_offset(j), sz, cfg.units_per_band[j]) *
             h_prev.segment(cfg.band_offset(j), cfg.units_per_band[j]);
    }
    h.segment(off, sz) = pre.array().tanh();
  }
  return h;
}

HistoryBuffer::HistoryBuffer(const ClockworkConfig& cfg) : cfg_(cfg) {
  check_clock(cfg_);
  rings_.resize(cfg_.bands());
  head_.assign(cfg_.bands(), 0);
  for (int j = 0; j < cfg_.bands(); ++j)
    rings_[j] = Eigen::MatrixXd::Zero(cfg_.period(j), cfg_.units_per_band[j]);
}

void HistoryBuffer::reset() {
  for (auto& r : rings_) r.setZero();
  head_.assign(cfg_.bands(), 0);
  steps_ = 0;
}

Eigen::VectorXd HistoryBuffer::band_at_lag(int j, long lag) const {
  long cap = cfg_.period(j);
  if (lag < 1 || lag > cap)
    throw std::out_of_range("history lag " + std::to_string(lag) + " outside band window");
  if (lag > steps_) return Eigen::VectorXd::Zero(cfg_.units_per_band[j]);
  long slot = ((head_[j] - lag) % cap + cap) % cap;
  return rings_[j].row(slot).transpose();
}

void HistoryBuffer::push(const Eigen::VectorXd& h) {
  for (int j = 0; j < cfg_.bands(); ++j) {
    rings_[j].row(head_[j]) = h.segment(cfg_.band_offset(j), cfg_.units_per_band[j]).transpose();
    head_[j] = (head_[j] + 1) % cfg_.period(j);
  }
  ++steps_;
}

Eigen::VectorXd dcwrnn_step(const Eigen::VectorXd& x, HistoryBuffer& hist,
                            const CellWeights& w, const ClockworkConfig& cfg) {
  Eigen::VectorXd h(cfg.total_units());
  for (int k = 0; k < cfg.bands(); ++k) {
    int off = cfg.band_offset(k);
    int sz = cfg.units_per_band[k];
    long lag = cfg.period(k);
    Eigen::VectorXd pre = w.W.middleRows(off, sz) * x + w.b.segment(off, sz);
    for (int j = k; j < cfg.bands(); ++j) {
      pre += w.U.block(off, cfg.band_offset(j), sz, cfg.units_per_band[j]) *
             hist.band_at_lag(j, lag);
    }
    h.segment(off, sz) = pre.array().tanh();
  }
  hist.push(h);
  return h;
}

int ConvSpec::output_length(int input_len) const {
  int len = input_len;
  for (size_t l = 0; l < layers.size(); ++l) {
    int conv = len - layers[l].width + 1;
    int pooled = conv >= 1 ? conv / layers[l].pool : 0;
    if (pooled < 1)
      throw ConfigError("conv layer " + std::to_string(l) + " leaves no output for input length " +
                        std::to_string(len));
    len = pooled;
  }
  return len;
}

int ConvSpec::output_channels(int input_channels) const {
  return layers.empty() ? input_channels : layers.back().filters;
}

namespace {

Eigen::MatrixXd conv_layer_forward(const Eigen::MatrixXd& input, const ConvLayerSpec& spec,
                                   const ConvLayerWeights& w, Activation act,
                                   ConvLayerTrace* trace) {
  const int t_in = static_cast<int>(input.rows());
  const int c_in = static_cast<int>(input.cols());
  const int t_conv = t_in - spec.width + 1;
  const int t_out = t_conv >= 1 ? t_conv / spec.pool : 0;
  if (t_out < 1) throw ConfigError("conv layer input too short");

  Eigen::MatrixXd pre(t_conv, spec.filters);
  for (int t = 0; t < t_conv; ++t) {
    for (int f = 0; f < spec.filters; ++f) {
      double acc = w.bias(f);
      for (int c = 0; c < c_in; ++c)
        for (int tau = 0; tau < spec.width; ++tau)
          acc += w.kernel(f, c * spec.width + tau) * input(t + tau, c);
      pre(t, f) = acc;
    }
  }
  Eigen::MatrixXd a = act == Activation::Tanh ? pre.array().tanh().matrix() : pre;

  Eigen::MatrixXd out(t_out, spec.filters);
  Eigen::MatrixXi arg(t_out, spec.filters);
  for (int t = 0; t < t_out; ++t) {
    for (int f = 0; f < spec.filters; ++f) {
      int best = t * spec.pool;
      for (int r = best + 1; r < (t + 1) * spec.pool; ++r)
        if (a(r, f) > a(best, f)) best = r;
      arg(t, f) = best;
      out(t, f) = a(best, f);
    }
  }
  if (trace) {
    trace->input = input;
    trace->preact = std::move(pre);
    trace->act = std::move(a);
    trace->pool_arg = std::move(arg);
    trace->output = out;
  }
  return out;
}

Eigen::VectorXd softmax(const Eigen::VectorXd& z) {
  Eigen::ArrayXd e = (z.array() - z.maxCoeff()).exp();
  return (e / e.sum()).matrix();
}

}  // namespace

Eigen::MatrixXd conv1d_forward(const Eigen::MatrixXd& block, const ConvSpec& spec,
                               const std::vector<ConvLayerWeights>& weights, Activation act) {
  if (weights.size() != spec.layers.size())
    throw ConfigError("conv weight count does not match layer count");
  Eigen::MatrixXd cur = block;
  for (size_t l = 0; l < spec.layers.size(); ++l)
    cur = conv_layer_forward(cur, spec.layers[l], weights[l], act, nullptr);
  return cur;
}

int ModelGraph::feature_dim() const {
  if (family == CellFamily::conv_only)
    return conv_spec.fc_sizes.empty() ? recur_input_dim() : conv_spec.fc_sizes.back();
  return hidden;
}

int ModelGraph::recur_input_dim() const {
  return conv_spec.output_channels(input_dim);
}

ModelGraph make_model(CellFamily family, int input_dim, int n_classes, const ConvSpec& conv,
                      const ClockworkConfig& clock, int hidden, std::uint64_t seed) {
  ModelGraph m;
  m.family = family;
  m.input_dim = input_dim;
  m.conv_spec = conv;
  m.init_seed = seed;

  if (family == CellFamily::cwrnn || family == CellFamily::dcwrnn) {
    check_clock(clock);
    m.clock = clock;
    m.hidden = clock.total_units();
  } else if (family != CellFamily::conv_only) {
    if (hidden < 1) throw ConfigError("recurrent model needs hidden units");
    m.hidden = hidden;
  }

  Rng rng(derive_seed(seed, "model-init", 0));
  auto fill = [&rng](Eigen::MatrixXd& mat, int fan_in) {
    double r = 1.0 / std::sqrt(static_cast<double>(fan_in));
    for (long c = 0; c < mat.cols(); ++c)
      for (long rI = 0; rI < mat.rows(); ++rI) mat(rI, c) = rng.uniform(-r, r);
  };

  int chans = input_dim;
  for (const auto& layer : conv.layers) {
    ConvLayerWeights w;
    w.kernel.resize(layer.filters, chans * layer.width);
    fill(w.kernel, chans * layer.width);
    w.bias = Eigen::VectorXd::Zero(layer.filters);
    m.conv.push_back(std::move(w));
    chans = layer.filters;
  }

  if (family == CellFamily::conv_only) {
    int in = chans;
    for (int out : conv.fc_sizes) {
      if (out < 1) throw ConfigError("fully-connected layer needs positive width");
      FcWeights w;
      w.W.resize(out, in);
      fill(w.W, in);
      w.b = Eigen::VectorXd::Zero(out);
      m.fc.push_back(std::move(w));
      in = out;
    }
  } else if (family == CellFamily::lstm) {
    const int H = m.hidden, F = chans;
    for (auto* mat : {&m.cell.Wi, &m.cell.Wf, &m.cell.Wo, &m.cell.Wg}) {
      mat->resize(H, F);
      fill(*mat, F);
    }
    for (auto* mat : {&m.cell.Ui, &m.cell.Uf, &m.cell.Uo, &m.cell.Ug}) {
      mat->resize(H, H);
      fill(*mat, H);
    }
    for (auto* v : {&m.cell.bi, &m.cell.bf, &m.cell.bo, &m.cell.bg})
      *v = Eigen::VectorXd::Zero(H);
  } else {
    const int H = m.hidden, F = chans;
    m.cell.W.resize(H, F);
    fill(m.cell.W, F);
    m.cell.U.resize(H, H);
    fill(m.cell.U, H);
    if (family == CellFamily::cwrnn || family == CellFamily::dcwrnn)
      apply_clockwork_mask(m.cell.U, m.clock);
    m.cell.b = Eigen::VectorXd::Zero(H);
  }

  if (n_classes > 0) {
    m.head_W.resize(n_classes, m.feature_dim());
    fill(m.head_W, m.feature_dim());
    m.head_b = Eigen::VectorXd::Zero(n_classes);
  }
  return m;
}

ModelGraph zero_like(const ModelGraph& model) {
  ModelGraph z = model;
  for (auto& ref : param_refs(z))
    for (long i = 0; i < ref.size(); ++i) ref.at(i) = 0.0;
  return z;
}

double& ParamRef::at(long i) {
  long c = i / view_rows;
  long r = i % view_rows;
  return data[(col0 + c) * rows + (row0 + r)];
}

namespace {

ParamRef whole(const std::string& name, Eigen::MatrixXd& m) {
  return {name, m.data(), m.rows(), m.cols(), 0, 0, m.rows(), m.cols()};
}

ParamRef whole(const std::string& name, Eigen::VectorXd& v) {
  return {name, v.data(), v.rows(), 1, 0, 0, v.rows(), 1};
}

}  // namespace

std::vector<ParamRef> param_refs(ModelGraph& model) {
  std::vector<ParamRef> refs;
  for (size_t l = 0; l < model.conv.size(); ++l) {
    refs.push_back(whole("conv" + std::to_string(l) + ".kernel", model.conv[l].kernel));
    refs.push_back(whole("conv" + std::to_string(l) + ".bias", model.conv[l].bias));
  }
  for (size_t l = 0; l < model.fc.size(); ++l) {
    refs.push_back(whole("fc" + std::to_string(l) + ".W", model.fc[l].W));
    refs.push_back(whole("fc" + std::to_string(l) + ".b", model.fc[l].b));
  }
  switch (model.family) {
    case CellFamily::conv_only:
      break;
    case CellFamily::lstm:
      refs.push_back(whole("cell.Wi", model.cell.Wi));
      refs.push_back(whole("cell.Wf", model.cell.Wf));
      refs.push_back(whole("cell.Wo", model.cell.Wo));
      refs.push_back(whole("cell.Wg", model.cell.Wg));
      refs.push_back(whole("cell.Ui", model.cell.Ui));
      refs.push_back(whole("cell.Uf", model.cell.Uf));
      refs.push_back(whole("cell.Uo", model.cell.Uo));
      refs.push_back(whole("cell.Ug", model.cell.Ug));
      refs.push_back(whole("cell.bi", model.cell.bi));
      refs.push_back(whole("cell.bf", model.cell.bf));
      refs.push_back(whole("cell.bo", model.cell.bo));
      refs.push_back(whole("cell.bg", model.cell.bg));
      break;
    case CellFamily::rnn:
      refs.push_back(whole("cell.W", model.cell.W));
      refs.push_back(whole("cell.U", model.cell.U));
      refs.push_back(whole("cell.b", model.cell.b));
      break;
    case CellFamily::cwrnn:
    case CellFamily::dcwrnn: {
      refs.push_back(whole("cell.W", model.cell.W));
      const auto& cfg = model.clock;
      for (int k = 0; k < cfg.bands(); ++k) {
        for (int j = k; j < cfg.bands(); ++j) {
          ParamRef ref = whole(
              "cell.U[" + std::to_string(k) + "][" + std::to_string(j) + "]", model.cell.U);
          ref.row0 = cfg.band_offset(k);
          ref.col0 = cfg.band_offset(j);
          ref.view_rows = cfg.units_per_band[k];
          ref.view_cols = cfg.units_per_band[j];
          refs.push_back(ref);
        }
      }
      refs.push_back(whole("cell.b", model.cell.b));
      break;
    }
  }
  if (model.has_head()) {
    refs.push_back(whole("head.W", model.head_W));
    refs.push_back(whole("head.b", model.head_b));
  }
  return refs;
}

long count_params(const ModelGraph& model) {
  ModelGraph copy = model;
  long n = 0;
  for (const auto& ref : param_refs(copy)) n += ref.size();
  return n;
}

ForwardTrace forward_trace(const ModelGraph& model, const SequenceBatch& seq,
                           const DropoutMasks* dropout) {
  if (seq.blocks.empty()) throw DataError("sequence batch is empty");
  const int B = static_cast<int>(seq.blocks.size());
  for (const auto& block : seq.blocks) {
    if (block.rows() != seq.block_len || block.cols() != model.input_dim)
      throw DataError("block shape does not match model input");
  }

  ForwardTrace tr;
  tr.blocks.resize(B);
  const int steps = model.conv_spec.output_length(seq.block_len);
  tr.steps_per_block = steps;
  const int F = model.recur_input_dim();
  const int H = model.hidden;

  for (int b = 0; b < B; ++b) {
    BlockTrace& bt = tr.blocks[b];
    bt.conv.resize(model.conv.size());
    Eigen::MatrixXd cur = seq.blocks[b];
    for (size_t l = 0; l < model.conv.size(); ++l)
      cur = conv_layer_forward(cur, model.conv_spec.layers[l], model.conv[l], Activation::Tanh,
                               &bt.conv[l]);
    bt.recur_in = std::move(cur);
  }

  if (model.family == CellFamily::conv_only) {
    for (int b = 0; b < B; ++b) {
      BlockTrace& bt = tr.blocks[b];
      Eigen::VectorXd a = bt.recur_in.colwise().mean().transpose();
      bt.fc_pre.resize(model.fc.size());
      bt.fc_act.resize(model.fc.size());
      for (size_t l = 0; l < model.fc.size(); ++l) {
        bt.fc_pre[l] = model.fc[l].W * a + model.fc[l].b;
        a = bt.fc_pre[l].array().tanh();
        if (dropout && !dropout->fc.empty()) a = a.cwiseProduct(dropout->fc[b][l]);
        bt.fc_act[l] = a;
      }
      bt.pooled = a;
    }
  } else {
    const long total = static_cast<long>(B) * steps;
    tr.h.assign(total, Eigen::VectorXd());
    if (model.family == CellFamily::lstm) {
      tr.c.assign(total, Eigen::VectorXd());
      tr.gi.assign(total, Eigen::VectorXd());
      tr.gf.assign(total, Eigen::VectorXd());
      tr.go.assign(total, Eigen::VectorXd());
      tr.gu.assign(total, Eigen::VectorXd());
    }
    Eigen::VectorXd h_prev = Eigen::VectorXd::Zero(H);
    Eigen::VectorXd c_prev = Eigen::VectorXd::Zero(H);
    for (long t = 0; t < total; ++t) {
      const BlockTrace& bt = tr.blocks[t / steps];
      Eigen::VectorXd x = bt.recur_in.row(t % steps).transpose();
      switch (model.family) {
        case CellFamily::rnn:
          tr.h[t] = rnn_step(x, h_prev, model.cell);
          break;
        case CellFamily::cwrnn:
          tr.h[t] = cwrnn_step(x, h_prev, t, model.cell, model.clock);
          break;
        case CellFamily::dcwrnn: {
          Eigen::VectorXd h(H);
          for (int k = 0; k < model.clock.bands(); ++k) {
            int off = model.clock.band_offset(k);
            int sz = model.clock.units_per_band[k];
            long src = t - model.clock.period(k);
            Eigen::VectorXd pre =
                model.cell.W.middleRows(off, sz) * x + model.cell.b.segment(off, sz);
            if (src >= 0) {
              for (int j = k; j < model.clock.bands(); ++j) {
                pre += model.cell.U.block(off, model.clock.band_offset(j), sz,
                                          model.clock.units_per_band[j]) *
                       tr.h[src].segment(model.clock.band_offset(j),
                                         model.clock.units_per_band[j]);
              }
            }
            h.segment(off, sz) = pre.array().tanh();
          }
          tr.h[t] = std::move(h);
          break;
        }
        case CellFamily::lstm: {
          LstmState prev{h_prev, c_prev};
          auto sigmoid = [](const Eigen::VectorXd& v) {
            return (1.0 / (1.0 + (-v.array()).exp())).matrix();
          };
          const CellWeights& w = model.cell;
          tr.gi[t] = sigmoid(w.Wi * x + w.Ui * prev.h + w.bi);
          tr.gf[t] = sigmoid(w.Wf * x + w.Uf * prev.h + w.bf);
          tr.go[t] = sigmoid(w.Wo * x + w.Uo * prev.h + w.bo);
          tr.gu[t] = (w.Wg * x + w.Ug * prev.h + w.bg).array().tanh();
          tr.c[t] = tr.gf[t].cwiseProduct(prev.c) + tr.gi[t].cwiseProduct(tr.gu[t]);
          tr.h[t] = tr.go[t].cwiseProduct(tr.c[t].array().tanh().matrix());
          c_prev = tr.c[t];
          break;
        }
        case CellFamily::conv_only:
          break;  // unreachable
      }
      h_prev = tr.h[t];
    }
    for (int b = 0; b < B; ++b) {
      Eigen::VectorXd pooled = Eigen::VectorXd::Zero(H);
      for (int s = 0; s < steps; ++s) pooled += tr.h[static_cast<long>(b) * steps + s];
      tr.blocks[b].pooled = pooled / steps;
    }
  }

  for (int b = 0; b < B; ++b) {
    BlockTrace& bt = tr.blocks[b];
    bt.dropped = (dropout && !dropout->feature.empty())
                     ? bt.pooled.cwiseProduct(dropout->feature[b]).eval()
                     : bt.pooled;
    if (model.has_head()) {
      bt.logits = model.head_W * bt.dropped + model.head_b;
      bt.probs = softmax(bt.logits);
    }
  }
  return tr;
}

ForwardResult forward_sequence(const ModelGraph& model, const SequenceBatch& seq) {
  ForwardTrace tr = forward_trace(model, seq, nullptr);
  const int B = static_cast<int>(tr.blocks.size());
  ForwardResult out;
  out.feats.resize(B, model.feature_dim());
  if (model.has_head()) out.probs.resize(B, model.n_classes());
  for (int b = 0; b < B; ++b) {
    out.feats.row(b) = tr.blocks[b].pooled.transpose();
    if (model.has_head()) out.probs.row(b) = tr.blocks[b].probs.transpose();
  }
  return out;
}

}  // namespace kinauth
