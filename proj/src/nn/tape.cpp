#include "ccisac/nn/tape.hpp"

#include <cmath>

#include "ccisac/errors.hpp"

namespace ccisac::nn {

// ---- ParamStore

Tensor& ParamStore::add(const std::string& name, int rows, int cols, std::vector<int> shape) {
  if (has(name)) throw PreconditionViolation("duplicate parameter " + name);
  auto t = std::make_unique<Tensor>();
  t->name = name;
  t->shape = shape.empty() ? std::vector<int>{rows, cols} : std::move(shape);
  t->value = Matrix::Zero(rows, cols);
  t->grad = Matrix::Zero(rows, cols);
  t->adam_m = Matrix::Zero(rows, cols);
  t->adam_v = Matrix::Zero(rows, cols);
  items_.push_back(std::move(t));
  return *items_.back();
}

Tensor& ParamStore::get(const std::string& name) {
  for (auto& t : items_)
    if (t->name == name) return *t;
  throw PreconditionViolation("unknown parameter " + name);
}

const Tensor& ParamStore::get(const std::string& name) const {
  for (auto& t : items_)
    if (t->name == name) return *t;
  throw PreconditionViolation("unknown parameter " + name);
}

bool ParamStore::has(const std::string& name) const {
  for (auto& t : items_)
    if (t->name == name) return true;
  return false;
}

std::vector<Tensor*> ParamStore::tensors() {
  std::vector<Tensor*> v;
  for (auto& t : items_) v.push_back(t.get());
  return v;
}

std::vector<const Tensor*> ParamStore::tensors() const {
  std::vector<const Tensor*> v;
  for (auto& t : items_) v.push_back(t.get());
  return v;
}

std::size_t ParamStore::scalar_count() const {
  std::size_t n = 0;
  for (auto& t : items_) n += std::size_t(t->size());
  return n;
}

void ParamStore::zero_grad() {
  for (auto& t : items_) t->grad.setZero();
}

// ---- Tape

const Matrix& Var::value() const {
  if (!tape_) throw NoGraph("variable is not bound to a tape");
  return tape_->value(id_);
}

Var Tape::record(Matrix value, bool needs_grad, Backward back) {
  Node n;
  n.value = std::move(value);
  n.needs_grad = needs_grad;
  if (needs_grad) n.back = std::move(back);
  nodes_.push_back(std::move(n));
  return Var(this, int(nodes_.size()) - 1);
}

Var Tape::constant(Matrix value) { return record(std::move(value), false, nullptr); }

Var Tape::param(Tensor& t) {
  Var v = record(t.value, t.trainable, nullptr);
  nodes_.back().param = &t;
  return v;
}

Matrix& Tape::grad(int id) {
  Node& n = nodes_[std::size_t(id)];
  if (n.grad.size() == 0) n.grad = Matrix::Zero(n.value.rows(), n.value.cols());
  return n.grad;
}

void Tape::backward(const Var& loss) {
  if (nodes_.empty()) throw NoGraph("backward called on an empty tape");
  if (loss.tape() != this || loss.id() < 0 || std::size_t(loss.id()) >= nodes_.size())
    throw NoGraph("loss does not belong to this tape");
  if (nodes_[std::size_t(loss.id())].value.size() != 1)
    throw ShapeMismatch("backward needs a scalar loss");
  for (auto& n : nodes_) n.grad.resize(0, 0);
  grad(loss.id())(0, 0) = 1.0;
  for (int i = loss.id(); i >= 0; --i) {
    Node& n = nodes_[std::size_t(i)];
    if (!n.needs_grad || n.grad.size() == 0) continue;
    if (n.back) {
      const Matrix g = n.grad;  // callbacks may touch other nodes' grads
      n.back(*this, g);
    }
    if (n.param) n.param->grad += n.grad;
  }
}

// ---- ops

namespace {

Tape* same_tape(const Var& a, const Var& b) {
  if (!a.tape() || a.tape() != b.tape()) throw NoGraph("operands live on different tapes");
  return a.tape();
}

void need_same_shape(const Matrix& a, const Matrix& b, const char* op) {
  if (a.rows() != b.rows() || a.cols() != b.cols())
    throw ShapeMismatch(std::string(op) + ": shape mismatch");
}

}  // namespace

Var matmul(const Var& a, const Var& b) {
  Tape* t = same_tape(a, b);
  if (a.cols() != b.rows()) throw ShapeMismatch("matmul: inner dimensions differ");
  Matrix out = a.value() * b.value();
  const int ia = a.id(), ib = b.id();
  return t->record(std::move(out), t->needs_grad(ia) || t->needs_grad(ib),
                   [ia, ib](Tape& tp, const Matrix& g) {
                     if (tp.needs_grad(ia)) tp.grad(ia).noalias() += g * tp.value(ib).transpose();
                     if (tp.needs_grad(ib)) tp.grad(ib).noalias() += tp.value(ia).transpose() * g;
                   });
}

Var add(const Var& a, const Var& b) {
  Tape* t = same_tape(a, b);
  need_same_shape(a.value(), b.value(), "add");
  Matrix out = a.value() + b.value();
  const int ia = a.id(), ib = b.id();
  return t->record(std::move(out), t->needs_grad(ia) || t->needs_grad(ib),
                   [ia, ib](Tape& tp, const Matrix& g) {
                     if (tp.needs_grad(ia)) tp.grad(ia) += g;
                     if (tp.needs_grad(ib)) tp.grad(ib) += g;
                   });
}

Var sub(const Var& a, const Var& b) {
  Tape* t = same_tape(a, b);
  need_same_shape(a.value(), b.value(), "sub");
  Matrix out = a.value() - b.value();
  const int ia = a.id(), ib = b.id();
  return t->record(std::move(out), t->needs_grad(ia) || t->needs_grad(ib),
                   [ia, ib](Tape& tp, const Matrix& g) {
                     if (tp.needs_grad(ia)) tp.grad(ia) += g;
                     if (tp.needs_grad(ib)) tp.grad(ib) -= g;
                   });
}

Var add_row(const Var& a, const Var& row) {
  Tape* t = same_tape(a, row);
  if (row.rows() != 1 || row.cols() != a.cols()) throw ShapeMismatch("add_row: bias shape");
  Matrix out = a.value().rowwise() + row.value().row(0);
  const int ia = a.id(), ib = row.id();
  return t->record(std::move(out), t->needs_grad(ia) || t->needs_grad(ib),
                   [ia, ib](Tape& tp, const Matrix& g) {
                     if (tp.needs_grad(ia)) tp.grad(ia) += g;
                     if (tp.needs_grad(ib)) tp.grad(ib) += g.colwise().sum();
                   });
}

Var mul(const Var& a, const Var& b) {
  Tape* t = same_tape(a, b);
  need_same_shape(a.value(), b.value(), "mul");
  Matrix out = a.value().cwiseProduct(b.value());
  const int ia = a.id(), ib = b.id();
  return t->record(std::move(out), t->needs_grad(ia) || t->needs_grad(ib),
                   [ia, ib](Tape& tp, const Matrix& g) {
                     if (tp.needs_grad(ia)) tp.grad(ia) += g.cwiseProduct(tp.value(ib));
                     if (tp.needs_grad(ib)) tp.grad(ib) += g.cwiseProduct(tp.value(ia));
                   });
}

Var scale(const Var& a, double c) {
  Tape* t = a.tape();
  Matrix out = a.value() * c;
  const int ia = a.id();
  return t->record(std::move(out), t->needs_grad(ia),
                   [ia, c](Tape& tp, const Matrix& g) { tp.grad(ia) += c * g; });
}

Var relu(const Var& a) {
  Tape* t = a.tape();
  Matrix out = a.value().cwiseMax(0.0);
  const int ia = a.id();
  return t->record(std::move(out), t->needs_grad(ia), [ia](Tape& tp, const Matrix& g) {
    tp.grad(ia) += (tp.value(ia).array() > 0.0).select(g, 0.0).matrix();
  });
}

Var sigmoid(const Var& a) {
  Tape* t = a.tape();
  Matrix out = (1.0 / (1.0 + (-a.value().array()).exp())).matrix();
  const int ia = a.id();
  const int self = int(t->size());
  return t->record(std::move(out), t->needs_grad(ia), [ia, self](Tape& tp, const Matrix& g) {
    const auto y = tp.value(self).array();
    tp.grad(ia) += (g.array() * y * (1.0 - y)).matrix();
  });
}

Var softmax_rows(const Var& a) {
  Tape* t = a.tape();
  Matrix out = a.value();
  for (Eigen::Index r = 0; r < out.rows(); ++r) {
    out.row(r).array() -= out.row(r).maxCoeff();
    out.row(r) = out.row(r).array().exp().matrix();
    out.row(r) /= out.row(r).sum();
  }
  const int ia = a.id();
  const int self = int(t->size());
  return t->record(std::move(out), t->needs_grad(ia), [ia, self](Tape& tp, const Matrix& g) {
    const Matrix& y = tp.value(self);
    Matrix& ga = tp.grad(ia);
    for (Eigen::Index r = 0; r < y.rows(); ++r) {
      const double dot = g.row(r).dot(y.row(r));
      ga.row(r).array() += y.row(r).array() * (g.row(r).array() - dot);
    }
  });
}

Var layer_norm_rows(const Var& x, const Var& gamma, const Var& beta, double eps) {
  Tape* t = same_tape(x, gamma);
  same_tape(x, beta);
  const Eigen::Index n = x.cols();
  if (gamma.rows() != 1 || gamma.cols() != n || beta.rows() != 1 || beta.cols() != n)
    throw ShapeMismatch("layer_norm: gain/bias shape");
  const Matrix& xv = x.value();
  Matrix xhat(xv.rows(), n);
  Eigen::VectorXd inv(xv.rows());
  for (Eigen::Index r = 0; r < xv.rows(); ++r) {
    const double mu = xv.row(r).mean();
    const double var = (xv.row(r).array() - mu).square().mean();
    inv(r) = 1.0 / std::sqrt(var + eps);
    xhat.row(r) = (xv.row(r).array() - mu) * inv(r);
  }
  Matrix out = (xhat.array().rowwise() * gamma.value().row(0).array()).matrix();
  out.rowwise() += beta.value().row(0);
  const int ix = x.id(), ig = gamma.id(), ib = beta.id();
  const bool ng = t->needs_grad(ix) || t->needs_grad(ig) || t->needs_grad(ib);
  return t->record(std::move(out), ng,
                   [ix, ig, ib, xhat, inv](Tape& tp, const Matrix& g) {
                     const Eigen::Index n = xhat.cols();
                     if (tp.needs_grad(ig)) tp.grad(ig) += g.cwiseProduct(xhat).colwise().sum();
                     if (tp.needs_grad(ib)) tp.grad(ib) += g.colwise().sum();
                     if (!tp.needs_grad(ix)) return;
                     const Matrix dxhat = (g.array().rowwise() * tp.value(ig).row(0).array()).matrix();
                     Matrix& gx = tp.grad(ix);
                     for (Eigen::Index r = 0; r < g.rows(); ++r) {
                       const double s1 = dxhat.row(r).sum();
                       const double s2 = dxhat.row(r).dot(xhat.row(r));
                       gx.row(r).array() += inv(r) / double(n) *
                                            (double(n) * dxhat.row(r).array() - s1 -
                                             xhat.row(r).array() * s2);
                     }
                   });
}

Var concat_cols(const std::vector<Var>& parts) {
  if (parts.empty()) throw PreconditionViolation("concat of nothing");
  Tape* t = parts[0].tape();
  const Eigen::Index rows = parts[0].rows();
  Eigen::Index cols = 0;
  bool ng = false;
  std::vector<int> ids;
  std::vector<Eigen::Index> widths;
  for (const auto& p : parts) {
    same_tape(parts[0], p);
    if (p.rows() != rows) throw ShapeMismatch("concat_cols: row counts differ");
    cols += p.cols();
    ng = ng || t->needs_grad(p.id());
    ids.push_back(p.id());
    widths.push_back(p.cols());
  }
  Matrix out(rows, cols);
  Eigen::Index c = 0;
  for (const auto& p : parts) {
    out.middleCols(c, p.cols()) = p.value();
    c += p.cols();
  }
  return t->record(std::move(out), ng, [ids, widths](Tape& tp, const Matrix& g) {
    Eigen::Index c = 0;
    for (std::size_t i = 0; i < ids.size(); ++i) {
      if (tp.needs_grad(ids[i])) tp.grad(ids[i]) += g.middleCols(c, widths[i]);
      c += widths[i];
    }
  });
}

Var slice_cols(const Var& a, int start, int count) {
  if (start < 0 || count < 0 || start + count > a.cols()) throw ShapeMismatch("slice_cols: out of range");
  Tape* t = a.tape();
  Matrix out = a.value().middleCols(start, count);
  const int ia = a.id();
  return t->record(std::move(out), t->needs_grad(ia), [ia, start, count](Tape& tp, const Matrix& g) {
    tp.grad(ia).middleCols(start, count) += g;
  });
}

Var reshape(const Var& a, int rows, int cols) {
  if (Eigen::Index(rows) * cols != a.value().size()) throw ShapeMismatch("reshape: size changes");
  Tape* t = a.tape();
  Matrix out = Eigen::Map<const Matrix>(a.value().data(), rows, cols);
  const int ia = a.id();
  const Eigen::Index r0 = a.rows(), c0 = a.cols();
  return t->record(std::move(out), t->needs_grad(ia), [ia, r0, c0](Tape& tp, const Matrix& g) {
    tp.grad(ia) += Eigen::Map<const Matrix>(g.data(), r0, c0);
  });
}

namespace {

// rows: output pixels, cols: (c, ky, kx)
Matrix im2col(const double* img, const ConvShape& s) {
  const int ho = s.h_out(), wo = s.w_out();
  Matrix cols = Matrix::Zero(ho * wo, s.c_in * s.k * s.k);
  for (int oy = 0; oy < ho; ++oy)
    for (int ox = 0; ox < wo; ++ox) {
      const int r = oy * wo + ox;
      for (int c = 0; c < s.c_in; ++c)
        for (int ky = 0; ky < s.k; ++ky) {
          const int iy = oy * s.stride + ky - s.pad;
          if (iy < 0 || iy >= s.h) continue;
          for (int kx = 0; kx < s.k; ++kx) {
            const int ix = ox * s.stride + kx - s.pad;
            if (ix < 0 || ix >= s.w) continue;
            cols(r, (c * s.k + ky) * s.k + kx) = img[(c * s.h + iy) * s.w + ix];
          }
        }
    }
  return cols;
}

void col2im_add(const Matrix& cols, const ConvShape& s, double* img) {
  const int ho = s.h_out(), wo = s.w_out();
  for (int oy = 0; oy < ho; ++oy)
    for (int ox = 0; ox < wo; ++ox) {
      const int r = oy * wo + ox;
      for (int c = 0; c < s.c_in; ++c)
        for (int ky = 0; ky < s.k; ++ky) {
          const int iy = oy * s.stride + ky - s.pad;
          if (iy < 0 || iy >= s.h) continue;
          for (int kx = 0; kx < s.k; ++kx) {
            const int ix = ox * s.stride + kx - s.pad;
            if (ix < 0 || ix >= s.w) continue;
            img[(c * s.h + iy) * s.w + ix] += cols(r, (c * s.k + ky) * s.k + kx);
          }
        }
    }
}

}  // namespace

Var conv2d(const Var& x, const Var& kernel, const Var& bias, const ConvShape& s) {
  Tape* t = same_tape(x, kernel);
  same_tape(x, bias);
  if (x.cols() != s.c_in * s.h * s.w) throw ShapeMismatch("conv2d: input size");
  if (kernel.rows() != s.c_in * s.k * s.k || kernel.cols() != s.c_out)
    throw ShapeMismatch("conv2d: kernel shape");
  if (bias.rows() != 1 || bias.cols() != s.c_out) throw ShapeMismatch("conv2d: bias shape");
  const int ho = s.h_out(), wo = s.w_out(), hw = ho * wo;
  if (ho <= 0 || wo <= 0) throw ShapeMismatch("conv2d: empty output");
  const Matrix& xv = x.value();
  const Matrix& K = kernel.value();
  const Eigen::RowVectorXd b = bias.value().row(0);
  Matrix out(xv.rows(), s.c_out * hw);
  for (Eigen::Index n = 0; n < xv.rows(); ++n) {
    Matrix y = im2col(xv.row(n).data(), s) * K;  // hw x c_out
    y.rowwise() += b;
    // (c_out, h, w) layout
    Eigen::Map<Matrix>(out.row(n).data(), s.c_out, hw) = y.transpose();
  }
  const int ix = x.id(), ik = kernel.id(), ib = bias.id();
  const bool ng = t->needs_grad(ix) || t->needs_grad(ik) || t->needs_grad(ib);
  return t->record(std::move(out), ng, [ix, ik, ib, s, hw](Tape& tp, const Matrix& g) {
    const Matrix& xv = tp.value(ix);
    const Matrix& K = tp.value(ik);
    for (Eigen::Index n = 0; n < g.rows(); ++n) {
      const Matrix gy = Eigen::Map<const Matrix>(g.row(n).data(), s.c_out, hw).transpose();
      if (tp.needs_grad(ib)) tp.grad(ib) += gy.colwise().sum();
      if (tp.needs_grad(ik)) tp.grad(ik).noalias() += im2col(xv.row(n).data(), s).transpose() * gy;
      if (tp.needs_grad(ix)) {
        const Matrix gc = gy * K.transpose();
        col2im_add(gc, s, tp.grad(ix).row(n).data());
      }
    }
  });
}

Var maxpool2(const Var& x, int c, int h, int w) {
  if (x.cols() != c * h * w) throw ShapeMismatch("maxpool2: input size");
  const int ho = h / 2, wo = w / 2;
  if (ho == 0 || wo == 0) throw ShapeMismatch("maxpool2: input too small");
  Tape* t = x.tape();
  const Matrix& xv = x.value();
  Matrix out(xv.rows(), c * ho * wo);
  std::vector<int> arg(std::size_t(out.size()));
  for (Eigen::Index n = 0; n < xv.rows(); ++n)
    for (int ch = 0; ch < c; ++ch)
      for (int oy = 0; oy < ho; ++oy)
        for (int ox = 0; ox < wo; ++ox) {
          int best = (ch * h + 2 * oy) * w + 2 * ox;
          for (int dy = 0; dy < 2; ++dy)
            for (int dx = 0; dx < 2; ++dx) {
              const int i = (ch * h + 2 * oy + dy) * w + 2 * ox + dx;
              if (xv(n, i) > xv(n, best)) best = i;
            }
          const int o = (ch * ho + oy) * wo + ox;
          out(n, o) = xv(n, best);
          arg[std::size_t(n * out.cols() + o)] = best;
        }
  const int ix = x.id();
  return t->record(std::move(out), t->needs_grad(ix), [ix, arg](Tape& tp, const Matrix& g) {
    Matrix& gx = tp.grad(ix);
    for (Eigen::Index n = 0; n < g.rows(); ++n)
      for (Eigen::Index o = 0; o < g.cols(); ++o) gx(n, arg[std::size_t(n * g.cols() + o)]) += g(n, o);
  });
}

Var mean_pool_rows(const Var& x, int T) {
  if (T <= 0 || x.rows() % T != 0) throw ShapeMismatch("mean_pool_rows: rows not a multiple of T");
  Tape* t = x.tape();
  const Eigen::Index B = x.rows() / T;
  Matrix out(B, x.cols());
  for (Eigen::Index b = 0; b < B; ++b) out.row(b) = x.value().middleRows(b * T, T).colwise().mean();
  const int ix = x.id();
  return t->record(std::move(out), t->needs_grad(ix), [ix, T](Tape& tp, const Matrix& g) {
    Matrix& gx = tp.grad(ix);
    for (Eigen::Index b = 0; b < g.rows(); ++b)
      for (int i = 0; i < T; ++i) gx.row(b * T + i) += g.row(b) / double(T);
  });
}

Var attention(const Var& Q, const Var& K, const Var& V, int Tq, int Tk, double sc) {
  Tape* t = same_tape(Q, K);
  same_tape(Q, V);
  if (Tq <= 0 || Tk <= 0 || Q.rows() % Tq != 0) throw ShapeMismatch("attention: bad sequence length");
  const Eigen::Index B = Q.rows() / Tq;
  if (K.rows() != B * Tk || V.rows() != B * Tk) throw ShapeMismatch("attention: batch mismatch");
  if (Q.cols() != K.cols()) throw ShapeMismatch("attention: key width");
  Matrix P(B * Tq, Tk);
  Matrix out(B * Tq, V.cols());
  for (Eigen::Index b = 0; b < B; ++b) {
    Matrix S = Q.value().middleRows(b * Tq, Tq) * K.value().middleRows(b * Tk, Tk).transpose() * sc;
    for (Eigen::Index r = 0; r < Tq; ++r) {
      S.row(r).array() -= S.row(r).maxCoeff();
      S.row(r) = S.row(r).array().exp().matrix();
      S.row(r) /= S.row(r).sum();
    }
    P.middleRows(b * Tq, Tq) = S;
    out.middleRows(b * Tq, Tq).noalias() = S * V.value().middleRows(b * Tk, Tk);
  }
  const int iq = Q.id(), ik = K.id(), iv = V.id();
  const bool ng = t->needs_grad(iq) || t->needs_grad(ik) || t->needs_grad(iv);
  return t->record(std::move(out), ng, [iq, ik, iv, P, Tq, Tk, sc, B](Tape& tp, const Matrix& g) {
    for (Eigen::Index b = 0; b < B; ++b) {
      const Matrix Pb = P.middleRows(b * Tq, Tq);
      const Matrix gb = g.middleRows(b * Tq, Tq);
      if (tp.needs_grad(iv)) tp.grad(iv).middleRows(b * Tk, Tk).noalias() += Pb.transpose() * gb;
      if (!tp.needs_grad(iq) && !tp.needs_grad(ik)) continue;
      const Matrix dP = gb * tp.value(iv).middleRows(b * Tk, Tk).transpose();
      Matrix dS(Tq, Tk);
      for (Eigen::Index r = 0; r < Tq; ++r) {
        const double dot = dP.row(r).dot(Pb.row(r));
        dS.row(r) = (Pb.row(r).array() * (dP.row(r).array() - dot)).matrix();
      }
      if (tp.needs_grad(iq))
        tp.grad(iq).middleRows(b * Tq, Tq).noalias() += sc * dS * tp.value(ik).middleRows(b * Tk, Tk);
      if (tp.needs_grad(ik))
        tp.grad(ik).middleRows(b * Tk, Tk).noalias() +=
            sc * dS.transpose() * tp.value(iq).middleRows(b * Tq, Tq);
    }
  });
}

Var mse(const Var& pred, const Var& target) {
  Tape* t = same_tape(pred, target);
  need_same_shape(pred.value(), target.value(), "mse");
  if (pred.value().size() == 0) throw EmptyInput("mse of an empty batch");
  const double n = double(pred.value().size());
  Matrix out(1, 1);
  out(0, 0) = (pred.value() - target.value()).squaredNorm() / n;
  const int ip = pred.id(), it = target.id();
  return t->record(std::move(out), t->needs_grad(ip) || t->needs_grad(it),
                   [ip, it, n](Tape& tp, const Matrix& g) {
                     const Matrix d = (tp.value(ip) - tp.value(it)) * (2.0 * g(0, 0) / n);
                     if (tp.needs_grad(ip)) tp.grad(ip) += d;
                     if (tp.needs_grad(it)) tp.grad(it) -= d;
                   });
}

}  // namespace ccisac::nn
