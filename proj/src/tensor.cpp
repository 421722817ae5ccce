#include "kpgnn/tensor.hpp"

#include <algorithm>
#include <cmath>
#include <sstream>

namespace kpgnn::tensor {

Matrix::Matrix(std::size_t rows, std::size_t cols, std::vector<double> data)
    : rows_(rows), cols_(cols), data_(std::move(data)) {
  if (data_.size() != rows_ * cols_) {
    throw ShapeError("matrix data length does not match shape");
  }
}

Matrix::Matrix(std::initializer_list<std::initializer_list<double>> rows) {
  rows_ = rows.size();
  cols_ = rows_ == 0 ? 0 : rows.begin()->size();
  data_.reserve(rows_ * cols_);
  for (const auto& r : rows) {
    if (r.size() != cols_) throw ShapeError("ragged matrix literal");
    data_.insert(data_.end(), r.begin(), r.end());
  }
}

Matrix Matrix::identity(std::size_t n) {
  Matrix m(n, n);
  for (std::size_t i = 0; i < n; ++i) m(i, i) = 1.0;
  return m;
}

Matrix Matrix::row_vector(std::span<const double> values) {
  return Matrix(1, values.size(), std::vector<double>(values.begin(), values.end()));
}

Matrix Matrix::column_vector(std::span<const double> values) {
  return Matrix(values.size(), 1, std::vector<double>(values.begin(), values.end()));
}

bool Matrix::all_finite() const {
  return std::all_of(data_.begin(), data_.end(), [](double v) { return std::isfinite(v); });
}

Matrix& Matrix::operator+=(const Matrix& o) {
  if (!same_shape(o)) throw ShapeError("+= shape mismatch");
  for (std::size_t i = 0; i < data_.size(); ++i) data_[i] += o.data_[i];
  return *this;
}

std::string shape_string(const Matrix& m) {
  std::ostringstream os;
  os << m.rows() << "x" << m.cols();
  return os.str();
}

namespace {

[[noreturn]] void shape_fail(const char* op, const Matrix& a, const Matrix& b) {
  throw ShapeError(std::string(op) + ": incompatible shapes " + shape_string(a) + " and " +
                   shape_string(b));
}

void check_finite(const char* op, const Matrix& m) {
  if (!m.all_finite()) throw NumericError(std::string(op) + ": non-finite result");
}

// a^T * b without materializing the transpose.
Matrix matmul_tn(const Matrix& a, const Matrix& b) {
  Matrix c(a.cols(), b.cols());
  for (std::size_t k = 0; k < a.rows(); ++k) {
    const double* arow = a.data().data() + k * a.cols();
    const double* brow = b.data().data() + k * b.cols();
    for (std::size_t i = 0; i < a.cols(); ++i) {
      const double aik = arow[i];
      if (aik == 0.0) continue;
      double* crow = c.data().data() + i * c.cols();
      for (std::size_t j = 0; j < b.cols(); ++j) crow[j] += aik * brow[j];
    }
  }
  return c;
}

// a * b^T.
Matrix matmul_nt(const Matrix& a, const Matrix& b) {
  Matrix c(a.rows(), b.rows());
  for (std::size_t i = 0; i < a.rows(); ++i) {
    const double* arow = a.data().data() + i * a.cols();
    for (std::size_t j = 0; j < b.rows(); ++j) {
      const double* brow = b.data().data() + j * b.cols();
      double s = 0.0;
      for (std::size_t k = 0; k < a.cols(); ++k) s += arow[k] * brow[k];
      c(i, j) = s;
    }
  }
  return c;
}

template <class F>
Matrix map(const Matrix& a, F f) {
  Matrix out(a.rows(), a.cols());
  for (std::size_t i = 0; i < a.size(); ++i) out.data()[i] = f(a.data()[i]);
  return out;
}

Tape& tape_of(Var a) {
  if (a.tape() == nullptr) throw Error("variable is not attached to a tape");
  return *a.tape();
}

Tape& tape_of(Var a, Var b) {
  if (a.tape() != b.tape()) throw Error("operands recorded on different tapes");
  return tape_of(a);
}

void check_segments(const char* op, std::size_t rows, std::span<const std::size_t> offsets) {
  if (offsets.empty() || offsets.front() != 0 || offsets.back() != rows) {
    throw ShapeError(std::string(op) + ": segment offsets do not cover the rows");
  }
  for (std::size_t s = 1; s < offsets.size(); ++s) {
    if (offsets[s] < offsets[s - 1]) throw ShapeError(std::string(op) + ": offsets decrease");
  }
}

}  // namespace

Matrix matmul(const Matrix& a, const Matrix& b) {
  if (a.cols() != b.rows()) shape_fail("matmul", a, b);
  Matrix c(a.rows(), b.cols());
  for (std::size_t i = 0; i < a.rows(); ++i) {
    const double* arow = a.data().data() + i * a.cols();
    double* crow = c.data().data() + i * c.cols();
    for (std::size_t k = 0; k < a.cols(); ++k) {
      const double aik = arow[k];
      if (aik == 0.0) continue;
      const double* brow = b.data().data() + k * b.cols();
      for (std::size_t j = 0; j < b.cols(); ++j) crow[j] += aik * brow[j];
    }
  }
  return c;
}

Matrix transpose(const Matrix& a) {
  Matrix t(a.cols(), a.rows());
  for (std::size_t i = 0; i < a.rows(); ++i)
    for (std::size_t j = 0; j < a.cols(); ++j) t(j, i) = a(i, j);
  return t;
}

Matrix gather_rows(const Matrix& a, std::span<const std::size_t> index) {
  Matrix out(index.size(), a.cols());
  for (std::size_t r = 0; r < index.size(); ++r) {
    if (index[r] >= a.rows()) throw ShapeError("gather_rows: index out of range");
    std::copy_n(a.row(index[r]).data(), a.cols(), out.row(r).data());
  }
  return out;
}

// ---------------------------------------------------------------------------
// Tape

const Matrix& Var::value() const {
  if (tape_ == nullptr) throw Error("variable is not attached to a tape");
  return tape_->value(id_);
}

Var Tape::constant(Matrix value) {
  check_finite("constant", value);
  Node n;
  n.value = std::move(value);
  nodes_.push_back(std::move(n));
  return {this, nodes_.size() - 1};
}

Var Tape::leaf(Matrix value) {
  check_finite("leaf", value);
  Node n;
  n.value = std::move(value);
  n.requires_grad = true;
  n.is_leaf = true;
  nodes_.push_back(std::move(n));
  return {this, nodes_.size() - 1};
}

Var Tape::record(Matrix value, std::vector<std::size_t> parents, BackwardFn backward) {
  Node n;
  n.value = std::move(value);
  for (std::size_t p : parents) n.requires_grad = n.requires_grad || nodes_.at(p).requires_grad;
  n.parents = std::move(parents);
  if (n.requires_grad) n.backward = std::move(backward);
  nodes_.push_back(std::move(n));
  return {this, nodes_.size() - 1};
}

void Tape::accumulate(std::size_t id, const Matrix& grad) {
  Node& n = nodes_.at(id);
  if (!n.requires_grad) return;
  if (!n.has_grad) {
    if (!grad.same_shape(n.value)) shape_fail("accumulate", n.value, grad);
    n.grad = grad;
    n.has_grad = true;
  } else {
    n.grad += grad;
  }
}

void Tape::backward(Var loss) {
  if (loss.tape() != this || loss.id() >= nodes_.size()) {
    throw Error("backward: loss is not recorded on this tape");
  }
  const Matrix& lv = nodes_[loss.id()].value;
  if (lv.rows() != 1 || lv.cols() != 1) throw ShapeError("backward: loss must be 1x1");
  for (auto& n : nodes_) {
    n.has_grad = false;
    n.grad = Matrix();
  }
  accumulate(loss.id(), Matrix(1, 1, 1.0));
  for (std::size_t i = loss.id() + 1; i-- > 0;) {
    Node& n = nodes_[i];
    if (!n.has_grad || n.is_leaf || !n.backward) continue;
    Matrix g = std::move(n.grad);
    n.grad = Matrix();
    n.has_grad = false;
    n.backward(*this, g);
  }
}

const Matrix& Tape::grad(Var leaf) const {
  const Node& n = nodes_.at(leaf.id());
  if (!n.is_leaf) throw Error("grad: only leaves retain gradients");
  if (!n.has_grad) {
    auto& mut = const_cast<Node&>(n);
    mut.grad = Matrix(n.value.rows(), n.value.cols());
    mut.has_grad = true;
  }
  return n.grad;
}

// ---------------------------------------------------------------------------
// Primitives

Var matmul(Var a, Var b) {
  Tape& t = tape_of(a, b);
  Matrix out = matmul(a.value(), b.value());
  check_finite("matmul", out);
  const std::size_t ia = a.id(), ib = b.id();
  return t.record(std::move(out), {ia, ib}, [ia, ib](Tape& tp, const Matrix& g) {
    if (tp.requires_grad(ia)) tp.accumulate(ia, matmul_nt(g, tp.value(ib)));
    if (tp.requires_grad(ib)) tp.accumulate(ib, matmul_tn(tp.value(ia), g));
  });
}

Var transpose(Var a) {
  Tape& t = tape_of(a);
  const std::size_t ia = a.id();
  return t.record(transpose(a.value()), {ia},
                  [ia](Tape& tp, const Matrix& g) { tp.accumulate(ia, transpose(g)); });
}

Var add(Var a, Var b) {
  Tape& t = tape_of(a, b);
  const Matrix& av = a.value();
  const Matrix& bv = b.value();
  const bool broadcast = !av.same_shape(bv);
  if (broadcast && !(bv.rows() == 1 && bv.cols() == av.cols())) shape_fail("add", av, bv);
  Matrix out = av;
  for (std::size_t i = 0; i < av.rows(); ++i)
    for (std::size_t j = 0; j < av.cols(); ++j) out(i, j) += broadcast ? bv(0, j) : bv(i, j);
  check_finite("add", out);
  const std::size_t ia = a.id(), ib = b.id();
  return t.record(std::move(out), {ia, ib}, [ia, ib, broadcast](Tape& tp, const Matrix& g) {
    tp.accumulate(ia, g);
    if (!tp.requires_grad(ib)) return;
    if (!broadcast) {
      tp.accumulate(ib, g);
      return;
    }
    Matrix gb(1, g.cols());
    for (std::size_t i = 0; i < g.rows(); ++i)
      for (std::size_t j = 0; j < g.cols(); ++j) gb(0, j) += g(i, j);
    tp.accumulate(ib, gb);
  });
}

Var sub(Var a, Var b) { return add(a, scale(b, -1.0)); }

Var scale(Var a, double factor) {
  Tape& t = tape_of(a);
  Matrix out = map(a.value(), [factor](double v) { return v * factor; });
  check_finite("scale", out);
  const std::size_t ia = a.id();
  return t.record(std::move(out), {ia}, [ia, factor](Tape& tp, const Matrix& g) {
    tp.accumulate(ia, map(g, [factor](double v) { return v * factor; }));
  });
}

Var add_scalar(Var a, double c) {
  Tape& t = tape_of(a);
  Matrix out = map(a.value(), [c](double v) { return v + c; });
  check_finite("add_scalar", out);
  const std::size_t ia = a.id();
  return t.record(std::move(out), {ia},
                  [ia](Tape& tp, const Matrix& g) { tp.accumulate(ia, g); });
}

Var softmax_rows(Var a) {
  Tape& t = tape_of(a);
  const Matrix& av = a.value();
  Matrix out(av.rows(), av.cols());
  for (std::size_t i = 0; i < av.rows(); ++i) {
    auto in = av.row(i);
    auto o = out.row(i);
    const double mx = *std::max_element(in.begin(), in.end());
    double z = 0.0;
    for (std::size_t j = 0; j < in.size(); ++j) z += (o[j] = std::exp(in[j] - mx));
    for (double& v : o) v /= z;
  }
  check_finite("softmax_rows", out);
  const std::size_t ia = a.id(), self = t.size();
  return t.record(std::move(out), {ia}, [ia, self](Tape& tp, const Matrix& g) {
    const Matrix& y = tp.value(self);
    Matrix ga(y.rows(), y.cols());
    for (std::size_t i = 0; i < y.rows(); ++i) {
      double dot = 0.0;
      for (std::size_t j = 0; j < y.cols(); ++j) dot += g(i, j) * y(i, j);
      for (std::size_t j = 0; j < y.cols(); ++j) ga(i, j) = y(i, j) * (g(i, j) - dot);
    }
    tp.accumulate(ia, ga);
  });
}

Var leaky_relu(Var a, double slope) {
  Tape& t = tape_of(a);
  Matrix out = map(a.value(), [slope](double v) { return v > 0.0 ? v : slope * v; });
  const std::size_t ia = a.id();
  return t.record(std::move(out), {ia}, [ia, slope](Tape& tp, const Matrix& g) {
    const Matrix& x = tp.value(ia);
    Matrix ga(g.rows(), g.cols());
    for (std::size_t i = 0; i < g.size(); ++i)
      ga.data()[i] = g.data()[i] * (x.data()[i] > 0.0 ? 1.0 : slope);
    tp.accumulate(ia, ga);
  });
}

Var relu(Var a) {
  Tape& t = tape_of(a);
  Matrix out = map(a.value(), [](double v) { return v > 0.0 ? v : 0.0; });
  const std::size_t ia = a.id();
  return t.record(std::move(out), {ia}, [ia](Tape& tp, const Matrix& g) {
    const Matrix& x = tp.value(ia);
    Matrix ga(g.rows(), g.cols());
    for (std::size_t i = 0; i < g.size(); ++i)
      ga.data()[i] = x.data()[i] > 0.0 ? g.data()[i] : 0.0;
    tp.accumulate(ia, ga);
  });
}

Var elu(Var a) {
  Tape& t = tape_of(a);
  Matrix out = map(a.value(), [](double v) { return v > 0.0 ? v : std::expm1(v); });
  const std::size_t ia = a.id();
  return t.record(std::move(out), {ia}, [ia](Tape& tp, const Matrix& g) {
    const Matrix& x = tp.value(ia);
    Matrix ga(g.rows(), g.cols());
    for (std::size_t i = 0; i < g.size(); ++i) {
      const double v = x.data()[i];
      ga.data()[i] = g.data()[i] * (v > 0.0 ? 1.0 : std::exp(v));
    }
    tp.accumulate(ia, ga);
  });
}

Var sigmoid(Var a) {
  Tape& t = tape_of(a);
  Matrix out = map(a.value(), [](double v) {
    if (v >= 0.0) return 1.0 / (1.0 + std::exp(-v));
    const double e = std::exp(v);
    return e / (1.0 + e);
  });
  check_finite("sigmoid", out);
  const std::size_t ia = a.id(), self = t.size();
  return t.record(std::move(out), {ia}, [ia, self](Tape& tp, const Matrix& g) {
    const Matrix& y = tp.value(self);
    Matrix ga(g.rows(), g.cols());
    for (std::size_t i = 0; i < g.size(); ++i) {
      const double s = y.data()[i];
      ga.data()[i] = g.data()[i] * s * (1.0 - s);
    }
    tp.accumulate(ia, ga);
  });
}

Var log(Var a) {
  Tape& t = tape_of(a);
  Matrix out = map(a.value(), [](double v) { return std::log(v); });
  check_finite("log", out);
  const std::size_t ia = a.id();
  return t.record(std::move(out), {ia}, [ia](Tape& tp, const Matrix& g) {
    const Matrix& x = tp.value(ia);
    Matrix ga(g.rows(), g.cols());
    for (std::size_t i = 0; i < g.size(); ++i) ga.data()[i] = g.data()[i] / x.data()[i];
    tp.accumulate(ia, ga);
  });
}

Var clamp(Var a, double lo, double hi) {
  Tape& t = tape_of(a);
  Matrix out = map(a.value(), [lo, hi](double v) { return std::clamp(v, lo, hi); });
  const std::size_t ia = a.id();
  return t.record(std::move(out), {ia}, [ia, lo, hi](Tape& tp, const Matrix& g) {
    const Matrix& x = tp.value(ia);
    Matrix ga(g.rows(), g.cols());
    for (std::size_t i = 0; i < g.size(); ++i) {
      const double v = x.data()[i];
      ga.data()[i] = (v >= lo && v <= hi) ? g.data()[i] : 0.0;
    }
    tp.accumulate(ia, ga);
  });
}

Var hadamard(Var a, Var b) {
  Tape& t = tape_of(a, b);
  if (!a.value().same_shape(b.value())) shape_fail("hadamard", a.value(), b.value());
  Matrix out(a.rows(), a.cols());
  for (std::size_t i = 0; i < out.size(); ++i)
    out.data()[i] = a.value().data()[i] * b.value().data()[i];
  check_finite("hadamard", out);
  const std::size_t ia = a.id(), ib = b.id();
  return t.record(std::move(out), {ia, ib}, [ia, ib](Tape& tp, const Matrix& g) {
    const Matrix& av = tp.value(ia);
    const Matrix& bv = tp.value(ib);
    Matrix ga(g.rows(), g.cols()), gb(g.rows(), g.cols());
    for (std::size_t i = 0; i < g.size(); ++i) {
      ga.data()[i] = g.data()[i] * bv.data()[i];
      gb.data()[i] = g.data()[i] * av.data()[i];
    }
    tp.accumulate(ia, ga);
    tp.accumulate(ib, gb);
  });
}

Var concat_cols(std::span<const Var> parts) {
  if (parts.empty()) throw ShapeError("concat_cols: no operands");
  Tape& t = tape_of(parts.front());
  const std::size_t rows = parts.front().rows();
  std::size_t cols = 0;
  std::vector<std::size_t> ids, widths;
  for (const Var& p : parts) {
    tape_of(parts.front(), p);
    if (p.rows() != rows) shape_fail("concat_cols", parts.front().value(), p.value());
    ids.push_back(p.id());
    widths.push_back(p.cols());
    cols += p.cols();
  }
  Matrix out(rows, cols);
  std::size_t off = 0;
  for (const Var& p : parts) {
    const Matrix& v = p.value();
    for (std::size_t i = 0; i < rows; ++i)
      std::copy_n(v.row(i).data(), v.cols(), out.row(i).data() + off);
    off += v.cols();
  }
  return t.record(std::move(out), ids, [ids, widths](Tape& tp, const Matrix& g) {
    std::size_t off = 0;
    for (std::size_t k = 0; k < ids.size(); ++k) {
      if (tp.requires_grad(ids[k])) {
        Matrix gk(g.rows(), widths[k]);
        for (std::size_t i = 0; i < g.rows(); ++i)
          std::copy_n(g.row(i).data() + off, widths[k], gk.row(i).data());
        tp.accumulate(ids[k], gk);
      }
      off += widths[k];
    }
  });
}

Var concat_rows(std::span<const Var> parts) {
  if (parts.empty()) throw ShapeError("concat_rows: no operands");
  Tape& t = tape_of(parts.front());
  const std::size_t cols = parts.front().cols();
  std::vector<std::size_t> ids, heights;
  std::vector<double> data;
  for (const Var& p : parts) {
    tape_of(parts.front(), p);
    if (p.cols() != cols) shape_fail("concat_rows", parts.front().value(), p.value());
    ids.push_back(p.id());
    heights.push_back(p.rows());
    data.insert(data.end(), p.value().data().begin(), p.value().data().end());
  }
  std::size_t rows = 0;
  for (std::size_t h : heights) rows += h;
  Matrix out(rows, cols, std::move(data));
  return t.record(std::move(out), ids, [ids, heights, cols](Tape& tp, const Matrix& g) {
    std::size_t off = 0;
    for (std::size_t k = 0; k < ids.size(); ++k) {
      if (tp.requires_grad(ids[k])) {
        Matrix gk(heights[k], cols);
        std::copy_n(g.data().data() + off * cols, heights[k] * cols, gk.data().data());
        tp.accumulate(ids[k], gk);
      }
      off += heights[k];
    }
  });
}

Var mean_rows(Var a) {
  Tape& t = tape_of(a);
  const Matrix& av = a.value();
  if (av.rows() == 0) throw ShapeError("mean_rows: empty operand");
  Matrix out(1, av.cols());
  for (std::size_t i = 0; i < av.rows(); ++i)
    for (std::size_t j = 0; j < av.cols(); ++j) out(0, j) += av(i, j);
  const double inv = 1.0 / static_cast<double>(av.rows());
  for (double& v : out.data()) v *= inv;
  const std::size_t ia = a.id(), n = av.rows();
  return t.record(std::move(out), {ia}, [ia, n, inv](Tape& tp, const Matrix& g) {
    Matrix ga(n, g.cols());
    for (std::size_t i = 0; i < n; ++i)
      for (std::size_t j = 0; j < g.cols(); ++j) ga(i, j) = g(0, j) * inv;
    tp.accumulate(ia, ga);
  });
}

Var sum(Var a) {
  Tape& t = tape_of(a);
  double s = 0.0;
  for (double v : a.value().data()) s += v;
  Matrix out(1, 1, s);
  check_finite("sum", out);
  const std::size_t ia = a.id(), r = a.rows(), c = a.cols();
  return t.record(std::move(out), {ia}, [ia, r, c](Tape& tp, const Matrix& g) {
    tp.accumulate(ia, Matrix(r, c, g(0, 0)));
  });
}

Var sq_dist_rows(Var a, Var b) {
  Tape& t = tape_of(a, b);
  const Matrix& av = a.value();
  const Matrix& bv = b.value();
  if (!av.same_shape(bv)) shape_fail("sq_dist_rows", av, bv);
  Matrix out(av.rows(), 1);
  for (std::size_t i = 0; i < av.rows(); ++i) {
    double s = 0.0;
    for (std::size_t j = 0; j < av.cols(); ++j) {
      const double d = av(i, j) - bv(i, j);
      s += d * d;
    }
    out(i, 0) = s;
  }
  check_finite("sq_dist_rows", out);
  const std::size_t ia = a.id(), ib = b.id();
  return t.record(std::move(out), {ia, ib}, [ia, ib](Tape& tp, const Matrix& g) {
    const Matrix& av = tp.value(ia);
    const Matrix& bv = tp.value(ib);
    Matrix ga(av.rows(), av.cols()), gb(av.rows(), av.cols());
    for (std::size_t i = 0; i < av.rows(); ++i)
      for (std::size_t j = 0; j < av.cols(); ++j) {
        const double d = 2.0 * g(i, 0) * (av(i, j) - bv(i, j));
        ga(i, j) = d;
        gb(i, j) = -d;
      }
    tp.accumulate(ia, ga);
    tp.accumulate(ib, gb);
  });
}

Var gather_rows(Var a, std::span<const std::size_t> index) {
  Tape& t = tape_of(a);
  Matrix out = gather_rows(a.value(), index);
  const std::size_t ia = a.id(), src_rows = a.rows();
  std::vector<std::size_t> idx(index.begin(), index.end());
  return t.record(std::move(out), {ia}, [ia, src_rows, idx](Tape& tp, const Matrix& g) {
    Matrix ga(src_rows, g.cols());
    for (std::size_t r = 0; r < idx.size(); ++r) {
      double* dst = ga.row(idx[r]).data();
      const double* src = g.row(r).data();
      for (std::size_t j = 0; j < g.cols(); ++j) dst[j] += src[j];
    }
    tp.accumulate(ia, ga);
  });
}

Var scale_rows(Var a, Var weights) {
  Tape& t = tape_of(a, weights);
  const Matrix& av = a.value();
  const Matrix& wv = weights.value();
  if (wv.cols() != 1 || wv.rows() != av.rows()) shape_fail("scale_rows", av, wv);
  Matrix out(av.rows(), av.cols());
  for (std::size_t i = 0; i < av.rows(); ++i)
    for (std::size_t j = 0; j < av.cols(); ++j) out(i, j) = av(i, j) * wv(i, 0);
  check_finite("scale_rows", out);
  const std::size_t ia = a.id(), iw = weights.id();
  return t.record(std::move(out), {ia, iw}, [ia, iw](Tape& tp, const Matrix& g) {
    const Matrix& av = tp.value(ia);
    const Matrix& wv = tp.value(iw);
    if (tp.requires_grad(ia)) {
      Matrix ga(g.rows(), g.cols());
      for (std::size_t i = 0; i < g.rows(); ++i)
        for (std::size_t j = 0; j < g.cols(); ++j) ga(i, j) = g(i, j) * wv(i, 0);
      tp.accumulate(ia, ga);
    }
    if (tp.requires_grad(iw)) {
      Matrix gw(g.rows(), 1);
      for (std::size_t i = 0; i < g.rows(); ++i) {
        double s = 0.0;
        for (std::size_t j = 0; j < g.cols(); ++j) s += g(i, j) * av(i, j);
        gw(i, 0) = s;
      }
      tp.accumulate(iw, gw);
    }
  });
}

Var segment_softmax(Var logits, std::span<const std::size_t> offsets) {
  Tape& t = tape_of(logits);
  const Matrix& x = logits.value();
  if (x.cols() != 1) throw ShapeError("segment_softmax: logits must be a column");
  check_segments("segment_softmax", x.rows(), offsets);
  Matrix out(x.rows(), 1);
  for (std::size_t s = 0; s + 1 < offsets.size(); ++s) {
    const std::size_t b = offsets[s], e = offsets[s + 1];
    if (b == e) continue;
    double mx = x(b, 0);
    for (std::size_t i = b + 1; i < e; ++i) mx = std::max(mx, x(i, 0));
    double z = 0.0;
    for (std::size_t i = b; i < e; ++i) z += (out(i, 0) = std::exp(x(i, 0) - mx));
    for (std::size_t i = b; i < e; ++i) out(i, 0) /= z;
  }
  check_finite("segment_softmax", out);
  const std::size_t ix = logits.id(), self = t.size();
  std::vector<std::size_t> off(offsets.begin(), offsets.end());
  return t.record(std::move(out), {ix}, [ix, self, off](Tape& tp, const Matrix& g) {
    const Matrix& y = tp.value(self);
    Matrix gx(y.rows(), 1);
    for (std::size_t s = 0; s + 1 < off.size(); ++s) {
      double dot = 0.0;
      for (std::size_t i = off[s]; i < off[s + 1]; ++i) dot += g(i, 0) * y(i, 0);
      for (std::size_t i = off[s]; i < off[s + 1]; ++i) gx(i, 0) = y(i, 0) * (g(i, 0) - dot);
    }
    tp.accumulate(ix, gx);
  });
}

Var segment_sum(Var a, std::span<const std::size_t> offsets) {
  Tape& t = tape_of(a);
  const Matrix& av = a.value();
  check_segments("segment_sum", av.rows(), offsets);
  const std::size_t segs = offsets.size() - 1;
  Matrix out(segs, av.cols());
  for (std::size_t s = 0; s < segs; ++s) {
    double* dst = out.row(s).data();
    for (std::size_t i = offsets[s]; i < offsets[s + 1]; ++i) {
      const double* src = av.row(i).data();
      for (std::size_t j = 0; j < av.cols(); ++j) dst[j] += src[j];
    }
  }
  check_finite("segment_sum", out);
  const std::size_t ia = a.id();
  std::vector<std::size_t> off(offsets.begin(), offsets.end());
  return t.record(std::move(out), {ia}, [ia, off](Tape& tp, const Matrix& g) {
    Matrix ga(off.back(), g.cols());
    for (std::size_t s = 0; s + 1 < off.size(); ++s)
      for (std::size_t i = off[s]; i < off[s + 1]; ++i)
        std::copy_n(g.row(s).data(), g.cols(), ga.row(i).data());
    tp.accumulate(ia, ga);
  });
}

// ---------------------------------------------------------------------------
// Parameters and Adam

const Parameter& find_parameter(const ParameterSet& params, const std::string& name) {
  for (const auto& p : params)
    if (p.name == name) return p;
  throw Error("unknown parameter '" + name + "'");
}

void adam_step(ParameterSet& params, std::span<const Matrix> grads, AdamState& state) {
  if (grads.size() != params.size()) throw ShapeError("adam_step: gradient count mismatch");
  for (std::size_t k = 0; k < params.size(); ++k) {
    if (!grads[k].same_shape(params[k].value)) {
      shape_fail("adam_step", params[k].value, grads[k]);
    }
  }
  ++state.step;
  const double t = static_cast<double>(state.step);
  const double c1 = 1.0 - std::pow(state.beta1, t);
  const double c2 = 1.0 - std::pow(state.beta2, t);
  for (std::size_t k = 0; k < params.size(); ++k) {
    Matrix& p = params[k].value;
    const Matrix& g = grads[k];
    auto [mit, m_new] = state.first_moment.try_emplace(params[k].name, p.rows(), p.cols());
    auto [vit, v_new] = state.second_moment.try_emplace(params[k].name, p.rows(), p.cols());
    Matrix& m = mit->second;
    Matrix& v = vit->second;
    if (!m.same_shape(p) || !v.same_shape(p)) shape_fail("adam_step moments", p, m);
    for (std::size_t i = 0; i < p.size(); ++i) {
      const double gi = g.data()[i];
      m.data()[i] = state.beta1 * m.data()[i] + (1.0 - state.beta1) * gi;
      v.data()[i] = state.beta2 * v.data()[i] + (1.0 - state.beta2) * gi * gi;
      const double mhat = m.data()[i] / c1;
      const double vhat = v.data()[i] / c2;
      p.data()[i] -= state.learning_rate * mhat / (std::sqrt(vhat) + state.epsilon);
    }
    if (!p.all_finite()) throw NumericError("adam_step: parameter '" + params[k].name +
                                            "' became non-finite");
  }
}

}  // namespace kpgnn::tensor
