#include "ccisac/nn/layers.hpp"

#include <cmath>

#include "ccisac/errors.hpp"

namespace ccisac::nn {

void kaiming_uniform(Tensor& t, int fan_in, Rng& rng) {
  const double bound = std::sqrt(6.0 / fan_in);
  for (Eigen::Index i = 0; i < t.value.size(); ++i) t.value.data()[i] = rng.uniform(-bound, bound);
}

void bias_uniform(Tensor& t, int fan_in, Rng& rng) {
  const double bound = 1.0 / std::sqrt(double(fan_in));
  for (Eigen::Index i = 0; i < t.value.size(); ++i) t.value.data()[i] = rng.uniform(-bound, bound);
}

Linear make_linear(ParamStore& ps, const std::string& name, int in, int out, Rng& rng, bool bias) {
  Linear l;
  l.in = in;
  l.out = out;
  l.W = &ps.add(name + ".W", in, out);
  kaiming_uniform(*l.W, in, rng);
  if (bias) {
    l.b = &ps.add(name + ".b", 1, out);
    bias_uniform(*l.b, in, rng);
  }
  return l;
}

Var linear(const Var& x, const Var& W, const Var& b) { return add_row(matmul(x, W), b); }

Var linear(Tape& tp, const Var& x, const Linear& l) {
  const Var y = matmul(x, tp.param(*l.W));
  return l.b ? add_row(y, tp.param(*l.b)) : y;
}

Mlp make_mlp(ParamStore& ps, const std::string& name, const std::vector<int>& widths, Rng& rng) {
  if (widths.size() < 2) throw PreconditionViolation("mlp needs at least input and output width");
  Mlp m;
  for (std::size_t i = 0; i + 1 < widths.size(); ++i)
    m.layers.push_back(make_linear(ps, name + "." + std::to_string(i), widths[i], widths[i + 1], rng));
  return m;
}

Var mlp(Tape& tp, const Var& x, const Mlp& m) {
  Var h = x;
  for (std::size_t i = 0; i < m.layers.size(); ++i) {
    h = linear(tp, h, m.layers[i]);
    if (i + 1 < m.layers.size()) h = relu(h);
  }
  return h;
}

ResMlp make_res_mlp(ParamStore& ps, const std::string& name, int width, int blocks, Rng& rng) {
  ResMlp m;
  for (int i = 0; i < blocks; ++i)
    m.blocks.push_back(make_linear(ps, name + "." + std::to_string(i), width, width, rng));
  return m;
}

Var res_mlp(Tape& tp, const Var& x, const ResMlp& m) {
  Var h = x;
  for (const auto& b : m.blocks) {
    if (h.cols() != b.in) throw ShapeMismatch("res_mlp: width mismatch");
    h = add(h, relu(linear(tp, h, b)));
  }
  return h;
}

Cnn make_cnn(ParamStore& ps, const std::string& name, int in_c, int h, int w,
             const std::vector<int>& channels, int out, Rng& rng) {
  Cnn m;
  m.in_c = in_c;
  m.in_h = h;
  m.in_w = w;
  int c = in_c;
  for (std::size_t i = 0; i < channels.size(); ++i) {
    Conv cv;
    cv.shape = ConvShape{c, h, w, channels[i]};
    const int fan_in = c * cv.shape.k * cv.shape.k;
    const std::string n = name + ".conv" + std::to_string(i);
    cv.kernel = &ps.add(n + ".K", fan_in, channels[i], {channels[i], c, cv.shape.k, cv.shape.k});
    kaiming_uniform(*cv.kernel, fan_in, rng);
    cv.bias = &ps.add(n + ".b", 1, channels[i]);
    bias_uniform(*cv.bias, fan_in, rng);
    m.blocks.push_back(cv);
    c = channels[i];
    h /= 2;
    w /= 2;
  }
  m.head = make_linear(ps, name + ".head", c * h * w, out, rng);
  return m;
}

Var cnn(Tape& tp, const Var& x, const Cnn& m) {
  if (x.cols() != m.in_c * m.in_h * m.in_w) throw ShapeMismatch("cnn: input size");
  Var h = x;
  for (const auto& b : m.blocks) {
    h = relu(conv2d(h, tp.param(*b.kernel), tp.param(*b.bias), b.shape));
    h = maxpool2(h, b.shape.c_out, b.shape.h, b.shape.w);
  }
  return linear(tp, h, m.head);
}

Var cross_attention(const Var& q_src, const Var& k_src, const Var& v_src, const Var& WQ,
                    const Var& WK, const Var& WV, int tokens) {
  const int l = int(WQ.cols());
  if (l <= 0 || tokens <= 0 || l % tokens != 0) throw ShapeMismatch("cross_attention: bad token split");
  if (WK.cols() != l || WV.cols() != l) throw ShapeMismatch("cross_attention: projection widths differ");
  const Var Q = matmul(q_src, WQ), K = matmul(k_src, WK), V = matmul(v_src, WV);
  if (Q.rows() != K.rows() || Q.rows() != V.rows()) throw ShapeMismatch("cross_attention: batch sizes differ");
  const int B = int(Q.rows()), width = l / tokens;
  const Var o = attention(reshape(Q, B * tokens, width), reshape(K, B * tokens, width),
                          reshape(V, B * tokens, width), tokens, tokens, 1.0 / std::sqrt(double(l)));
  return reshape(o, B, l);
}

namespace {
Tensor& ones(ParamStore& ps, const std::string& name, int n) {
  Tensor& t = ps.add(name, 1, n);
  t.value.setOnes();
  return t;
}
}  // namespace

TransEnc make_transformer(ParamStore& ps, const std::string& name, int in_dim, int dim, int layers,
                          int heads, int ff, Rng& rng) {
  if (heads <= 0 || dim % heads != 0) throw PreconditionViolation("model dim must split across heads");
  TransEnc m;
  m.dim = dim;
  m.heads = heads;
  m.embed = make_linear(ps, name + ".embed", in_dim, dim, rng);
  for (int i = 0; i < layers; ++i) {
    const std::string n = name + ".layer" + std::to_string(i);
    EncoderLayer L;
    L.ln1_g = &ones(ps, n + ".ln1.g", dim);
    L.ln1_b = &ps.add(n + ".ln1.b", 1, dim);
    L.q = make_linear(ps, n + ".q", dim, dim, rng);
    L.k = make_linear(ps, n + ".k", dim, dim, rng);
    L.v = make_linear(ps, n + ".v", dim, dim, rng);
    L.o = make_linear(ps, n + ".o", dim, dim, rng);
    L.ln2_g = &ones(ps, n + ".ln2.g", dim);
    L.ln2_b = &ps.add(n + ".ln2.b", 1, dim);
    L.ff1 = make_linear(ps, n + ".ff1", dim, ff, rng);
    L.ff2 = make_linear(ps, n + ".ff2", ff, dim, rng);
    m.layers.push_back(L);
  }
  m.lnf_g = &ones(ps, name + ".lnf.g", dim);
  m.lnf_b = &ps.add(name + ".lnf.b", 1, dim);
  return m;
}

Matrix sinusoidal_encoding(int T, int dim) {
  Matrix pe(T, dim);
  for (int t = 0; t < T; ++t)
    for (int i = 0; i < dim; ++i) {
      const double freq = std::pow(10000.0, -double(2 * (i / 2)) / dim);
      pe(t, i) = (i % 2 == 0) ? std::sin(t * freq) : std::cos(t * freq);
    }
  return pe;
}

Var transformer_encoder(Tape& tp, const Var& seq, int T, const TransEnc& m) {
  if (T <= 0 || seq.rows() % T != 0) throw ShapeMismatch("transformer_encoder: rows not a multiple of T");
  if (seq.cols() != m.embed.in) throw ShapeMismatch("transformer_encoder: input width");
  const int B = int(seq.rows()) / T;
  const Matrix pe = sinusoidal_encoding(T, m.dim);
  Matrix tiled(B * T, m.dim);
  for (int b = 0; b < B; ++b) tiled.middleRows(b * T, T) = pe;
  Var x = add(linear(tp, seq, m.embed), tp.constant(std::move(tiled)));
  const int dh = m.dim / m.heads;
  for (const auto& L : m.layers) {
    Var h = layer_norm_rows(x, tp.param(*L.ln1_g), tp.param(*L.ln1_b));
    const Var Q = linear(tp, h, L.q), K = linear(tp, h, L.k), V = linear(tp, h, L.v);
    std::vector<Var> parts;
    for (int i = 0; i < m.heads; ++i)
      parts.push_back(attention(slice_cols(Q, i * dh, dh), slice_cols(K, i * dh, dh),
                                slice_cols(V, i * dh, dh), T, T, 1.0 / std::sqrt(double(dh))));
    x = add(x, linear(tp, parts.size() == 1 ? parts[0] : concat_cols(parts), L.o));
    h = layer_norm_rows(x, tp.param(*L.ln2_g), tp.param(*L.ln2_b));
    x = add(x, linear(tp, relu(linear(tp, h, L.ff1)), L.ff2));
  }
  x = layer_norm_rows(x, tp.param(*m.lnf_g), tp.param(*m.lnf_b));
  return mean_pool_rows(x, T);
}

Grif make_grif(ParamStore& ps, const std::string& name, Rng& rng) {
  Grif g;
  g.w = &ps.add(name + ".w", 2, 1);
  kaiming_uniform(*g.w, 2, rng);
  g.c = &ps.add(name + ".c", 1, 1);
  return g;
}

Var grif_fuse(Tape& tp, const Var& a, const Var& b, const Grif& g) {
  if (a.cols() != 1 || b.cols() != 1 || a.rows() != b.rows()) throw ShapeMismatch("grif_fuse: inputs must be B x 1");
  const Var gate = sigmoid(add_row(matmul(concat_cols({a, b}), tp.param(*g.w)), tp.param(*g.c)));
  const Var rest = sub(tp.constant(Matrix::Ones(a.rows(), 1)), gate);
  return add(mul(gate, a), mul(rest, b));
}

GradCheckResult gradient_check(ParamStore& ps, const std::function<Var(Tape&)>& loss, double h,
                               double floor) {
  ps.zero_grad();
  {
    Tape tp;
    tp.backward(loss(tp));
  }
  auto eval = [&] {
    Tape tp;
    return loss(tp).value()(0, 0);
  };
  GradCheckResult r;
  for (Tensor* t : ps.tensors()) {
    if (!t->trainable) continue;
    for (Eigen::Index i = 0; i < t->value.size(); ++i) {
      double& w = t->value.data()[i];
      const double w0 = w;
      w = w0 + h;
      const double fp = eval();
      w = w0 - h;
      const double fm = eval();
      w = w0;
      const double num = (fp - fm) / (2 * h);
      const double ana = t->grad.data()[i];
      const double rel = std::abs(num - ana) / std::max({std::abs(num), std::abs(ana), floor});
      ++r.checked;
      if (rel > r.max_rel_error) {
        r.max_rel_error = rel;
        r.worst = t->name + "[" + std::to_string(i) + "]";
      }
    }
  }
  return r;
}

}  // namespace ccisac::nn
