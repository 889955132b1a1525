#pragma once

#include <cstdint>
#include <memory>
#include <string>
#include <vector>

#include <Eigen/Dense>

namespace ccisac::nn {

using Matrix = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;

// A named parameter. Storage is always a row-major matrix; `shape` is the
// logical shape written to checkpoints (conv kernels keep four dims).
struct Tensor {
  std::string name;
  std::vector<int> shape;
  Matrix value;
  Matrix grad;
  Matrix adam_m;
  Matrix adam_v;
  bool trainable = true;

  Eigen::Index size() const { return value.size(); }
};

class ParamStore {
 public:
  Tensor& add(const std::string& name, int rows, int cols, std::vector<int> shape = {});
  Tensor& get(const std::string& name);
  const Tensor& get(const std::string& name) const;
  bool has(const std::string& name) const;

  std::vector<Tensor*> tensors();
  std::vector<const Tensor*> tensors() const;
  std::size_t scalar_count() const;
  void zero_grad();

 private:
  std::vector<std::unique_ptr<Tensor>> items_;
};

}  // namespace ccisac::nn
