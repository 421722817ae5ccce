#pragma once

#include <cstddef>
#include <functional>
#include <initializer_list>
#include <map>
#include <span>
#include <string>
#include <vector>

#include "kpgnn/common.hpp"

namespace kpgnn::tensor {

/// Dense row-major matrix of 64-bit reals.
class Matrix {
 public:
  Matrix() = default;
  Matrix(std::size_t rows, std::size_t cols, double fill = 0.0)
      : rows_(rows), cols_(cols), data_(rows * cols, fill) {}
  Matrix(std::size_t rows, std::size_t cols, std::vector<double> data);
  Matrix(std::initializer_list<std::initializer_list<double>> rows);

  static Matrix identity(std::size_t n);
  static Matrix row_vector(std::span<const double> values);
  static Matrix column_vector(std::span<const double> values);

  std::size_t rows() const { return rows_; }
  std::size_t cols() const { return cols_; }
  std::size_t size() const { return data_.size(); }
  bool empty() const { return data_.empty(); }

  double& operator()(std::size_t r, std::size_t c) { return data_[r * cols_ + c]; }
  double operator()(std::size_t r, std::size_t c) const { return data_[r * cols_ + c]; }

  std::span<double> row(std::size_t r) { return {data_.data() + r * cols_, cols_}; }
  std::span<const double> row(std::size_t r) const { return {data_.data() + r * cols_, cols_}; }

  std::vector<double>& data() { return data_; }
  const std::vector<double>& data() const { return data_; }

  bool same_shape(const Matrix& o) const { return rows_ == o.rows_ && cols_ == o.cols_; }
  bool all_finite() const;

  Matrix& operator+=(const Matrix& o);
  bool operator==(const Matrix& o) const = default;

 private:
  std::size_t rows_ = 0;
  std::size_t cols_ = 0;
  std::vector<double> data_;
};

std::string shape_string(const Matrix& m);

/// Plain (non-recording) kernels shared by the tape and by callers that only
/// need values.
Matrix matmul(const Matrix& a, const Matrix& b);
Matrix transpose(const Matrix& a);
Matrix gather_rows(const Matrix& a, std::span<const std::size_t> index);

class Tape;

/// Handle to a value recorded on a tape.
class Var {
 public:
  Var() = default;
  Var(Tape* tape, std::size_t id) : tape_(tape), id_(id) {}

  const Matrix& value() const;
  std::size_t rows() const { return value().rows(); }
  std::size_t cols() const { return value().cols(); }
  std::size_t id() const { return id_; }
  Tape* tape() const { return tape_; }

 private:
  Tape* tape_ = nullptr;
  std::size_t id_ = 0;
};

/// Records one forward computation and replays it in reverse. Confined to a
/// single thread and a single training step.
class Tape {
 public:
  /// Receives the gradient of the node's output and pushes contributions to
  /// its parents through accumulate().
  using BackwardFn = std::function<void(Tape&, const Matrix& grad_out)>;

  Tape() = default;
  Tape(const Tape&) = delete;
  Tape& operator=(const Tape&) = delete;

  /// Value that never receives a gradient (features, constants).
  Var constant(Matrix value);
  /// Value whose gradient is kept after backward (parameters).
  Var leaf(Matrix value);

  Var record(Matrix value, std::vector<std::size_t> parents, BackwardFn backward);

  const Matrix& value(std::size_t id) const { return nodes_.at(id).value; }
  bool requires_grad(std::size_t id) const { return nodes_.at(id).requires_grad; }
  std::size_t size() const { return nodes_.size(); }

  void accumulate(std::size_t id, const Matrix& grad);

  /// Runs the reverse sweep from a 1x1 loss. Each recorded node is visited
  /// once; intermediate gradients are freed as soon as they are consumed.
  void backward(Var loss);

  /// Gradient of a leaf after backward(); zeros if the leaf did not influence
  /// the loss.
  const Matrix& grad(Var leaf) const;

 private:
  struct Node {
    Matrix value;
    std::vector<std::size_t> parents;
    BackwardFn backward;
    bool requires_grad = false;
    bool is_leaf = false;
    Matrix grad;
    bool has_grad = false;
  };
  std::vector<Node> nodes_;
};

// Recorded primitives. Every one checks operand shapes and rejects
// non-finite results.
Var matmul(Var a, Var b);
Var transpose(Var a);
/// Elementwise sum; `b` may also be a 1 x cols row vector added to every row.
Var add(Var a, Var b);
Var sub(Var a, Var b);
Var scale(Var a, double factor);
Var add_scalar(Var a, double c);
Var softmax_rows(Var a);
Var leaky_relu(Var a, double slope = 0.2);
Var relu(Var a);
Var elu(Var a);
Var sigmoid(Var a);
Var log(Var a);
Var clamp(Var a, double lo, double hi);
Var hadamard(Var a, Var b);
Var concat_cols(std::span<const Var> parts);
Var concat_rows(std::span<const Var> parts);
/// Column-wise mean over all rows: rows x cols -> 1 x cols.
Var mean_rows(Var a);
Var sum(Var a);
/// Squared euclidean distance between matching rows: n x k, n x k -> n x 1.
Var sq_dist_rows(Var a, Var b);
Var gather_rows(Var a, std::span<const std::size_t> index);
/// Multiplies row i of `a` by the scalar `weights(i, 0)`.
Var scale_rows(Var a, Var weights);
/// Softmax of an E x 1 column within each segment [offsets[s], offsets[s+1]).
Var segment_softmax(Var logits, std::span<const std::size_t> offsets);
/// Sums rows within each segment: E x k -> S x k.
Var segment_sum(Var a, std::span<const std::size_t> offsets);

/// Named trainable tensor.
struct Parameter {
  std::string name;
  Matrix value;
};

using ParameterSet = std::vector<Parameter>;

const Parameter& find_parameter(const ParameterSet& params, const std::string& name);

/// Bias-corrected Adam moments for a parameter set.
struct AdamState {
  double learning_rate = 0.001;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double epsilon = 1e-8;
  std::uint64_t step = 0;
  std::map<std::string, Matrix> first_moment;
  std::map<std::string, Matrix> second_moment;
};

/// One Adam update. `grads` is aligned with `params`.
void adam_step(ParameterSet& params, std::span<const Matrix> grads, AdamState& state);

}  // namespace kpgnn::tensor
