#pragma once

#include <deque>
#include <functional>
#include <vector>

#include "ccisac/nn/tensor.hpp"

namespace ccisac::nn {

class Tape;

// Handle to a value recorded on a tape.
class Var {
 public:
  Var() = default;
  Var(Tape* tape, int id) : tape_(tape), id_(id) {}
  const Matrix& value() const;
  Eigen::Index rows() const { return value().rows(); }
  Eigen::Index cols() const { return value().cols(); }
  Tape* tape() const { return tape_; }
  int id() const { return id_; }

 private:
  Tape* tape_ = nullptr;
  int id_ = -1;
};

class Tape {
 public:
  Var constant(Matrix value);
  Var param(Tensor& t);

  // Reverse sweep from a 1x1 loss; parameter leaves accumulate into
  // Tensor::grad. Throws NoGraph if nothing was recorded or the loss is not
  // on this tape.
  void backward(const Var& loss);
  void clear() { nodes_.clear(); }
  std::size_t size() const { return nodes_.size(); }

  // op plumbing
  using Backward = std::function<void(Tape&, const Matrix& grad_out)>;
  Var record(Matrix value, bool needs_grad, Backward back);
  const Matrix& value(int id) const { return nodes_[std::size_t(id)].value; }
  bool needs_grad(int id) const { return nodes_[std::size_t(id)].needs_grad; }
  // grad accumulator of an input, allocated on first use
  Matrix& grad(int id);

 private:
  struct Node {
    Matrix value;
    Matrix grad;
    Backward back;
    Tensor* param = nullptr;
    bool needs_grad = false;
  };
  std::deque<Node> nodes_;  // stable references across record()
};

Var matmul(const Var& a, const Var& b);
Var add(const Var& a, const Var& b);
Var sub(const Var& a, const Var& b);
Var add_row(const Var& a, const Var& row);  // broadcast a 1 x n row over rows
Var mul(const Var& a, const Var& b);        // element-wise
Var scale(const Var& a, double c);
Var relu(const Var& a);
Var sigmoid(const Var& a);
Var softmax_rows(const Var& a);
Var layer_norm_rows(const Var& x, const Var& gamma, const Var& beta, double eps = 1e-5);
Var concat_cols(const std::vector<Var>& parts);
Var slice_cols(const Var& a, int start, int count);
Var reshape(const Var& a, int rows, int cols);

// Batch rows hold (C, H, W) images flattened channel-major. 3x3-style square
// kernels stored as (C_in k k) x C_out; zero padding.
struct ConvShape {
  int c_in, h, w, c_out, k = 3, stride = 1, pad = 1;
  int h_out() const { return (h + 2 * pad - k) / stride + 1; }
  int w_out() const { return (w + 2 * pad - k) / stride + 1; }
};
Var conv2d(const Var& x, const Var& kernel, const Var& bias, const ConvShape& s);
Var maxpool2(const Var& x, int c, int h, int w);

// (B T) x d -> B x d, averaging each run of T rows.
Var mean_pool_rows(const Var& x, int T);

// Block-diagonal scaled dot-product attention over B independent sequences:
// Q is (B Tq) x dk, K is (B Tk) x dk, V is (B Tk) x dv.
Var attention(const Var& Q, const Var& K, const Var& V, int Tq, int Tk, double scale);

Var mse(const Var& pred, const Var& target);

}  // namespace ccisac::nn
