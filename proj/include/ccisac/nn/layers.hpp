#pragma once

#include <functional>
#include <string>
#include <vector>

#include "ccisac/nn/tape.hpp"
#include "ccisac/rng.hpp"

namespace ccisac::nn {

// Weights uniform in +-sqrt(6 / fan_in); biases uniform in +-1/sqrt(fan_in).
void kaiming_uniform(Tensor& t, int fan_in, Rng& rng);
void bias_uniform(Tensor& t, int fan_in, Rng& rng);

struct Linear {
  Tensor* W = nullptr;  // in x out
  Tensor* b = nullptr;  // 1 x out, may be null
  int in = 0, out = 0;
};
Linear make_linear(ParamStore& ps, const std::string& name, int in, int out, Rng& rng,
                   bool bias = true);
Var linear(const Var& x, const Var& W, const Var& b);
Var linear(Tape& tp, const Var& x, const Linear& l);

// relu between layers, identity on the last
struct Mlp {
  std::vector<Linear> layers;
};
Mlp make_mlp(ParamStore& ps, const std::string& name, const std::vector<int>& widths, Rng& rng);
Var mlp(Tape& tp, const Var& x, const Mlp& m);

// x <- x + relu(W x + b) per block
struct ResMlp {
  std::vector<Linear> blocks;
};
ResMlp make_res_mlp(ParamStore& ps, const std::string& name, int width, int blocks, Rng& rng);
Var res_mlp(Tape& tp, const Var& x, const ResMlp& m);

struct Conv {
  Tensor* kernel = nullptr;
  Tensor* bias = nullptr;
  ConvShape shape;
};

// (conv 3x3, relu, maxpool 2x2) per block, flatten, linear head
struct Cnn {
  std::vector<Conv> blocks;
  Linear head;
  int in_c = 1, in_h = 0, in_w = 0;
};
Cnn make_cnn(ParamStore& ps, const std::string& name, int in_c, int h, int w,
             const std::vector<int>& channels, int out, Rng& rng);
Var cnn(Tape& tp, const Var& x, const Cnn& m);

// Q = q_src W_Q, K = k_src W_K, V = v_src W_V, each B x l, split into `tokens`
// tokens of width l / tokens, then softmax(Q K^T / sqrt(l)) V flattened back to
// B x l.
Var cross_attention(const Var& q_src, const Var& k_src, const Var& v_src, const Var& WQ,
                    const Var& WK, const Var& WV, int tokens);

struct EncoderLayer {
  Tensor *ln1_g, *ln1_b, *ln2_g, *ln2_b;
  Linear q, k, v, o, ff1, ff2;
};

struct TransEnc {
  Linear embed;
  std::vector<EncoderLayer> layers;
  Tensor *lnf_g, *lnf_b;
  int dim = 16, heads = 2;
};
TransEnc make_transformer(ParamStore& ps, const std::string& name, int in_dim, int dim, int layers,
                          int heads, int ff, Rng& rng);
Matrix sinusoidal_encoding(int T, int dim);
// seq is (B T) x in_dim, time-major inside each block; returns B x dim
Var transformer_encoder(Tape& tp, const Var& seq, int T, const TransEnc& m);

struct Grif {
  Tensor* w = nullptr;  // 2 x 1
  Tensor* c = nullptr;  // 1 x 1
};
Grif make_grif(ParamStore& ps, const std::string& name, Rng& rng);
// a, b are B x 1
Var grif_fuse(Tape& tp, const Var& a, const Var& b, const Grif& g);

struct GradCheckResult {
  double max_rel_error = 0.0;
  std::string worst;
  std::size_t checked = 0;
};

// Central differences over every trainable scalar.
GradCheckResult gradient_check(ParamStore& ps, const std::function<Var(Tape&)>& loss,
                               double h = 1e-4, double floor = 1e-6);

}  // namespace ccisac::nn
