#pragma once

#include <Eigen/Dense>
#include <string>
#include <vector>

#include "kinauth/rng.hpp"
#include "kinauth/signal.hpp"

namespace kinauth {

enum class CellFamily { rnn, lstm, cwrnn, dcwrnn, conv_only };

CellFamily cell_family_from_string(const std::string& s);
std::string to_string(CellFamily family);

// Clockwork band layout. Band k = 0 is the fastest (period 1); band k
// updates (CWRNN) or reads history (DCWRNN) with period/lag base^k.
struct ClockworkConfig {
  int base = 2;
  std::vector<int> units_per_band;

  int bands() const { return static_cast<int>(units_per_band.size()); }
  int total_units() const;
  long period(int k) const;      // base^k
  int band_offset(int k) const;  // first unit index of band k
};

// Bands active at step t under the exponential update rule: {k : t mod base^k == 0}.
std::vector<int> active_bands(long t, const ClockworkConfig& cfg);

// Extra memory slots a dense clockwork layer needs on top of the previous
// state: sum_k |h_k| * (base^k - 1).
long buffer_capacity(const ClockworkConfig& cfg);

// Weights for one recurrent cell. The rnn/cwrnn/dcwrnn families use W, U, b;
// the clockwork families constrain U to band-block upper triangular form
// (fast-to-slow blocks are identically zero and are never touched by the
// forward or backward pass). LSTM uses the per-gate matrices instead.
struct CellWeights {
  Eigen::MatrixXd W, U;
  Eigen::VectorXd b;

  Eigen::MatrixXd Wi, Wf, Wo, Wg;
  Eigen::MatrixXd Ui, Uf, Uo, Ug;
  Eigen::VectorXd bi, bf, bo, bg;
};

// Zeroes the forbidden (fast-to-slow) blocks of a clockwork recurrent matrix.
void apply_clockwork_mask(Eigen::MatrixXd& U, const ClockworkConfig& cfg);

Eigen::VectorXd rnn_step(const Eigen::VectorXd& x, const Eigen::VectorXd& h_prev,
                         const CellWeights& w);

struct LstmState {
  Eigen::VectorXd h, c;
};

LstmState lstm_step(const Eigen::VectorXd& x, const LstmState& prev, const CellWeights& w);

Eigen::VectorXd cwrnn_step(const Eigen::VectorXd& x, const Eigen::VectorXd& h_prev, long t,
                           const CellWeights& w, const ClockworkConfig& cfg);

// Per-band ring buffers of past hidden states. Band j retains its last
// base^j values, which is exactly buffer_capacity() slots beyond the
// previous state. All history starts at zero.
class HistoryBuffer {
 public:
  explicit HistoryBuffer(const ClockworkConfig& cfg);

  void reset();
  // Values of band j at the given lag (1 = previous step). lag must not
  // exceed band j's retention window base^j.
  Eigen::VectorXd band_at_lag(int j, long lag) const;
  void push(const Eigen::VectorXd& h);
  const ClockworkConfig& config() const { return cfg_; }

 private:
  ClockworkConfig cfg_;
  std::vector<Eigen::MatrixXd> rings_;  // per band: (base^j) x |h_j|, row = slot
  std::vector<long> head_;              // next write slot per band
  long steps_ = 0;
};

// Dense clockwork update: every band fires every step, band k reading the
// full hidden state at lag base^k through its row block of U. Advances the
// buffer by one slot.
Eigen::VectorXd dcwrnn_step(const Eigen::VectorXd& x, HistoryBuffer& hist,
                            const CellWeights& w, const ClockworkConfig& cfg);

struct ConvLayerSpec {
  int filters = 0;
  int width = 1;
  int pool = 1;
};

struct ConvSpec {
  std::vector<ConvLayerSpec> layers;
  std::vector<int> fc_sizes;  // fully-connected stack, conv_only family

  // Valid convolution then non-overlapping max pooling per layer. Throws
  // ConfigError naming the first layer whose output would be empty.
  int output_length(int input_len) const;
  int output_channels(int input_channels) const;
};

struct ConvLayerWeights {
  // kernel(f, c*width + tau): filter f, input channel c, temporal offset tau
  Eigen::MatrixXd kernel;
  Eigen::VectorXd bias;
};

struct FcWeights {
  Eigen::MatrixXd W;
  Eigen::VectorXd b;
};

enum class Activation { Tanh, Identity };

// One block (rows = time) through the convolutional stack.
Eigen::MatrixXd conv1d_forward(const Eigen::MatrixXd& block, const ConvSpec& spec,
                               const std::vector<ConvLayerWeights>& weights,
                               Activation act = Activation::Tanh);

// A configured feature extractor: conv front-end, one recurrent cell family
// (or none for the conv-only baseline), and a mean-pool + softmax head.
// Also serves as the gradient container: a zero_like() clone holds the
// gradient of every parameter in the same place.
struct ModelGraph {
  CellFamily family = CellFamily::rnn;
  int input_dim = FeatureFrame::kDim;
  ConvSpec conv_spec;
  ClockworkConfig clock;  // cwrnn/dcwrnn band layout
  int hidden = 0;         // total recurrent units
  std::uint64_t init_seed = 0;

  std::vector<ConvLayerWeights> conv;
  std::vector<FcWeights> fc;
  CellWeights cell;
  Eigen::MatrixXd head_W;  // n_classes x feature_dim
  Eigen::VectorXd head_b;

  bool has_head() const { return head_W.size() > 0; }
  int n_classes() const { return static_cast<int>(head_W.rows()); }
  int feature_dim() const;     // penultimate width fed to the head / GMM
  int recur_input_dim() const; // conv output channels (input_dim if no conv)
};

// Weight matrices uniform in [-r, r] with r = 1/sqrt(fan-in), biases zero,
// clockwork mask applied. n_classes = 0 builds a headless extractor.
ModelGraph make_model(CellFamily family, int input_dim, int n_classes, const ConvSpec& conv,
                      const ClockworkConfig& clock, int hidden, std::uint64_t seed);

ModelGraph zero_like(const ModelGraph& model);

// Named views over every trainable scalar, in declaration order. The
// clockwork-constrained blocks of U are excluded.
struct ParamRef {
  std::string name;
  double* data = nullptr;
  long rows = 0, cols = 0;      // of the underlying matrix
  long row0 = 0, col0 = 0;      // view origin within it
  long view_rows = 0, view_cols = 0;

  long size() const { return view_rows * view_cols; }
  double& at(long i);  // i in [0, size)
};

std::vector<ParamRef> param_refs(ModelGraph& model);

long count_params(const ModelGraph& model);

struct ForwardResult {
  Eigen::MatrixXd probs;  // B x C, rows sum to 1 (empty when headless)
  Eigen::MatrixXd feats;  // B x feature_dim, per-block penultimate features
};

ForwardResult forward_sequence(const ModelGraph& model, const SequenceBatch& seq);

// --- forward trace (shared by inference and backpropagation) ---

struct ConvLayerTrace {
  Eigen::MatrixXd input;    // T_in x C_in
  Eigen::MatrixXd preact;   // T_conv x F
  Eigen::MatrixXd act;      // T_conv x F
  Eigen::MatrixXi pool_arg; // T_out x F, row index into act
  Eigen::MatrixXd output;   // T_out x F
};

struct BlockTrace {
  std::vector<ConvLayerTrace> conv;
  Eigen::MatrixXd recur_in;   // T x F inputs to the cell (or pooled for conv_only)
  std::vector<Eigen::VectorXd> fc_pre;  // conv_only fully-connected preactivations
  std::vector<Eigen::VectorXd> fc_act;  // activations after tanh and dropout
  Eigen::VectorXd pooled;     // penultimate feature before dropout
  Eigen::VectorXd dropped;    // feature after dropout mask (equals pooled if none)
  Eigen::VectorXd logits;
  Eigen::VectorXd probs;
};

struct DropoutMasks {
  // Pre-scaled masks (0 or 1/(1-p)). Empty = no dropout.
  std::vector<Eigen::VectorXd> feature;             // per block, on the pooled feature
  std::vector<std::vector<Eigen::VectorXd>> fc;     // per block, per fc layer
};

struct ForwardTrace {
  std::vector<BlockTrace> blocks;
  // recurrent states indexed by global step; lstm also keeps gates and cells
  std::vector<Eigen::VectorXd> h;
  std::vector<Eigen::VectorXd> c, gi, gf, go, gu;
  int steps_per_block = 0;
};

ForwardTrace forward_trace(const ModelGraph& model, const SequenceBatch& seq,
                           const DropoutMasks* dropout = nullptr);

}  // namespace kinauth
