// SPDX-License-Identifier: Apache-2.0

#include "divkd/autodiff.hpp"

#include <cmath>
#include <cstring>
#include <fstream>
#include <sstream>

namespace divkd {

namespace {

std::string shape_of(const Matrix& m) {
  return "(" + std::to_string(m.rows()) + "x" + std::to_string(m.cols()) + ")";
}

[[noreturn]] void shape_fail(const char* prim, const Matrix& a,
                             const Matrix& b) {
  throw ShapeError(std::string(prim) + ": incompatible shapes " + shape_of(a) +
                   " vs " + shape_of(b));
}

[[noreturn]] void shape_fail(const char* prim, const Matrix& a,
                             const std::string& detail) {
  throw ShapeError(std::string(prim) + ": " + detail + ", got " + shape_of(a));
}

}  // namespace

// ---------------------------------------------------------------------------
// ParamStore
// ---------------------------------------------------------------------------

Parameter& ParamStore::create(const std::string& name, int rows, int cols) {
  if (rows <= 0 || cols <= 0) {
    throw ShapeError("parameter " + name + ": shape must be positive");
  }
  auto p = std::make_unique<Parameter>();
  p->name = name;
  p->value = Matrix::Zero(rows, cols);
  p->grad = Matrix::Zero(rows, cols);
  p->m = Matrix::Zero(rows, cols);
  p->v = Matrix::Zero(rows, cols);
  auto [it, inserted] = params_.emplace(name, std::move(p));
  if (!inserted) throw GraphError("duplicate parameter name: " + name);
  return *it->second;
}

Parameter& ParamStore::create_uniform(const std::string& name, int rows,
                                      int cols, double range, uint64_t seed) {
  Parameter& p = create(name, rows, cols);
  Rng rng = Rng::derive(seed, "init/" + name);
  for (int r = 0; r < rows; ++r) {
    for (int c = 0; c < cols; ++c) {
      p.value(r, c) = rng.uniform(-range, range);
    }
  }
  return p;
}

Parameter& ParamStore::get(const std::string& name) {
  auto it = params_.find(name);
  if (it == params_.end()) throw GraphError("unknown parameter: " + name);
  return *it->second;
}

const Parameter& ParamStore::get(const std::string& name) const {
  auto it = params_.find(name);
  if (it == params_.end()) throw GraphError("unknown parameter: " + name);
  return *it->second;
}

bool ParamStore::has(const std::string& name) const {
  return params_.count(name) != 0;
}

void ParamStore::zero_grads() {
  for (auto& [name, p] : params_) p->grad.setZero();
}

std::vector<Parameter*> ParamStore::all() {
  std::vector<Parameter*> out;
  out.reserve(params_.size());
  for (auto& [name, p] : params_) out.push_back(p.get());
  return out;
}

std::vector<const Parameter*> ParamStore::all() const {
  std::vector<const Parameter*> out;
  out.reserve(params_.size());
  for (const auto& [name, p] : params_) out.push_back(p.get());
  return out;
}

void adam_step(ParamStore& store, double lr, double beta1, double beta2,
               double eps) {
  store.step_ += 1;
  const double t = static_cast<double>(store.step_);
  const double bc1 = 1.0 - std::pow(beta1, t);
  const double bc2 = 1.0 - std::pow(beta2, t);
  for (auto& [name, p] : store.params_) {
    p->m = beta1 * p->m + (1.0 - beta1) * p->grad;
    p->v = beta2 * p->v.array() + (1.0 - beta2) * p->grad.array().square();
    Matrix m_hat = p->m / bc1;
    Matrix v_hat = p->v / bc2;
    p->value.array() -= lr * m_hat.array() / (v_hat.array().sqrt() + eps);
    p->grad.setZero();
  }
}

// ---------------------------------------------------------------------------
// Checkpoint container
// ---------------------------------------------------------------------------

namespace {

constexpr char kMagic[8] = {'D', 'I', 'V', 'K', 'D', 'C', 'K', '1'};

void write_u64(std::ostream& out, uint64_t v) {
  char buf[8];
  for (int i = 0; i < 8; ++i) buf[i] = static_cast<char>((v >> (8 * i)) & 0xff);
  out.write(buf, 8);
}

uint64_t read_u64(std::istream& in) {
  unsigned char buf[8];
  in.read(reinterpret_cast<char*>(buf), 8);
  uint64_t v = 0;
  for (int i = 0; i < 8; ++i) v |= static_cast<uint64_t>(buf[i]) << (8 * i);
  return v;
}

void write_string(std::ostream& out, const std::string& s) {
  write_u64(out, s.size());
  out.write(s.data(), static_cast<std::streamsize>(s.size()));
}

std::string read_string(std::istream& in) {
  uint64_t n = read_u64(in);
  if (n > (1u << 20)) throw CheckpointError("corrupt string length");
  std::string s(n, '\0');
  in.read(s.data(), static_cast<std::streamsize>(n));
  return s;
}

void write_matrix(std::ostream& out, const Matrix& m) {
  // Row-major on disk regardless of Eigen's in-memory layout.
  for (Eigen::Index r = 0; r < m.rows(); ++r) {
    for (Eigen::Index c = 0; c < m.cols(); ++c) {
      double v = m(r, c);
      out.write(reinterpret_cast<const char*>(&v), sizeof(double));
    }
  }
}

void read_matrix(std::istream& in, Matrix& m) {
  for (Eigen::Index r = 0; r < m.rows(); ++r) {
    for (Eigen::Index c = 0; c < m.cols(); ++c) {
      double v = 0;
      in.read(reinterpret_cast<char*>(&v), sizeof(double));
      m(r, c) = v;
    }
  }
}

}  // namespace

void ParamStore::save(const std::string& path) const {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw FileError("cannot write " + path);
  out.write(kMagic, sizeof(kMagic));
  write_u64(out, step_);
  write_u64(out, seed_);
  write_string(out, config_hash_);
  write_u64(out, params_.size());
  for (const auto& [name, p] : params_) {
    write_string(out, name);
    write_u64(out, static_cast<uint64_t>(p->value.rows()));
    write_u64(out, static_cast<uint64_t>(p->value.cols()));
    write_matrix(out, p->value);
    write_matrix(out, p->m);
    write_matrix(out, p->v);
  }
  if (!out) throw FileError("failed writing " + path);
}

void ParamStore::load_into(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw FileError("cannot open " + path);
  char magic[8];
  in.read(magic, sizeof(magic));
  if (!in || std::memcmp(magic, kMagic, sizeof(kMagic)) != 0) {
    throw CheckpointError(path + ": not a checkpoint file");
  }
  uint64_t step = read_u64(in);
  uint64_t seed = read_u64(in);
  std::string hash = read_string(in);
  uint64_t count = read_u64(in);
  if (count != params_.size()) {
    throw CheckpointError(path + ": expected " +
                          std::to_string(params_.size()) + " parameters, file has " +
                          std::to_string(count));
  }
  for (uint64_t i = 0; i < count; ++i) {
    std::string name = read_string(in);
    auto it = params_.find(name);
    if (it == params_.end()) {
      throw CheckpointError(path + ": unexpected parameter " + name);
    }
    Parameter& p = *it->second;
    auto rows = static_cast<Eigen::Index>(read_u64(in));
    auto cols = static_cast<Eigen::Index>(read_u64(in));
    if (rows != p.value.rows() || cols != p.value.cols()) {
      throw CheckpointError(path + ": parameter " + name + " has shape " +
                            std::to_string(rows) + "x" + std::to_string(cols) +
                            ", expected " + shape_of(p.value));
    }
    read_matrix(in, p.value);
    read_matrix(in, p.m);
    read_matrix(in, p.v);
    p.grad.setZero();
  }
  if (!in) throw CheckpointError(path + ": truncated checkpoint");
  step_ = step;
  seed_ = seed;
  config_hash_ = std::move(hash);
}

ParamStore ParamStore::load(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw FileError("cannot open " + path);
  char magic[8];
  in.read(magic, sizeof(magic));
  if (!in || std::memcmp(magic, kMagic, sizeof(kMagic)) != 0) {
    throw CheckpointError(path + ": not a checkpoint file");
  }
  ParamStore store;
  store.step_ = read_u64(in);
  store.seed_ = read_u64(in);
  store.config_hash_ = read_string(in);
  uint64_t count = read_u64(in);
  for (uint64_t i = 0; i < count; ++i) {
    std::string name = read_string(in);
    auto rows = static_cast<int>(read_u64(in));
    auto cols = static_cast<int>(read_u64(in));
    if (rows <= 0 || cols <= 0 || !in) {
      throw CheckpointError(path + ": corrupt parameter record");
    }
    Parameter& p = store.create(name, rows, cols);
    read_matrix(in, p.value);
    read_matrix(in, p.m);
    read_matrix(in, p.v);
  }
  if (!in) throw CheckpointError(path + ": truncated checkpoint");
  return store;
}

// ---------------------------------------------------------------------------
// Tape
// ---------------------------------------------------------------------------

Tape::Node& Tape::node(Val v) {
  if (v.idx < 0 || static_cast<size_t>(v.idx) >= nodes_.size()) {
    throw GraphError("value is not on this tape");
  }
  return nodes_[static_cast<size_t>(v.idx)];
}

const Tape::Node& Tape::node(Val v) const {
  if (v.idx < 0 || static_cast<size_t>(v.idx) >= nodes_.size()) {
    throw GraphError("value is not on this tape");
  }
  return nodes_[static_cast<size_t>(v.idx)];
}

Val Tape::push(Node n) {
  check_open();
  for (int in : n.inputs) {
    n.needs_grad = n.needs_grad || nodes_[static_cast<size_t>(in)].needs_grad;
  }
  nodes_.push_back(std::move(n));
  return Val{static_cast<int>(nodes_.size()) - 1};
}

void Tape::check_open() const {
  if (consumed_) throw GraphError("tape already consumed by backward");
}

const Matrix& Tape::value(Val v) const { return node(v).value; }

const Matrix& Tape::grad(Val v) const { return node(v).grad; }

Val Tape::input(Matrix value) {
  Node n;
  n.kind = OpKind::Input;
  n.value = std::move(value);
  return push(std::move(n));
}

Val Tape::constant(double value) {
  Matrix m(1, 1);
  m(0, 0) = value;
  return input(std::move(m));
}

Val Tape::param(Parameter& p) {
  Node n;
  n.kind = OpKind::Param;
  n.value = p.value;
  n.parameter = &p;
  n.needs_grad = true;
  return push(std::move(n));
}

Val Tape::matmul(Val a, Val b) {
  const Matrix& A = node(a).value;
  const Matrix& B = node(b).value;
  if (A.cols() != B.rows()) shape_fail("matmul", A, B);
  Node n;
  n.kind = OpKind::Matmul;
  n.inputs = {a.idx, b.idx};
  n.value = A * B;
  return push(std::move(n));
}

Val Tape::add(Val a, Val b) {
  const Matrix& A = node(a).value;
  const Matrix& B = node(b).value;
  Node n;
  n.inputs = {a.idx, b.idx};
  if (A.rows() == B.rows() && A.cols() == B.cols()) {
    n.kind = OpKind::Add;
    n.value = A + B;
  } else if (B.rows() == 1 && A.cols() == B.cols()) {
    n.kind = OpKind::AddBias;  // broadcast the row vector over every row
    n.value = A.rowwise() + B.row(0);
  } else {
    shape_fail("add", A, B);
  }
  return push(std::move(n));
}

Val Tape::sub(Val a, Val b) { return add(a, neg(b)); }

Val Tape::elem_mul(Val a, Val b) {
  const Matrix& A = node(a).value;
  const Matrix& B = node(b).value;
  if (A.rows() != B.rows() || A.cols() != B.cols()) {
    shape_fail("elementwise_mul", A, B);
  }
  Node n;
  n.kind = OpKind::ElemMul;
  n.inputs = {a.idx, b.idx};
  n.value = A.cwiseProduct(B);
  return push(std::move(n));
}

Val Tape::concat_rows(const std::vector<Val>& parts) {
  if (parts.empty()) throw GraphError("concat_rows: no inputs");
  Eigen::Index cols = node(parts[0]).value.cols();
  Eigen::Index rows = 0;
  for (Val p : parts) {
    if (node(p).value.cols() != cols) {
      shape_fail("concat_rows", node(p).value,
                 "all inputs need " + std::to_string(cols) + " columns");
    }
    rows += node(p).value.rows();
  }
  Node n;
  n.kind = OpKind::ConcatRows;
  n.value.resize(rows, cols);
  Eigen::Index at = 0;
  for (Val p : parts) {
    const Matrix& m = node(p).value;
    n.value.middleRows(at, m.rows()) = m;
    at += m.rows();
    n.inputs.push_back(p.idx);
  }
  return push(std::move(n));
}

Val Tape::concat_cols(const std::vector<Val>& parts) {
  if (parts.empty()) throw GraphError("concat_cols: no inputs");
  Eigen::Index rows = node(parts[0]).value.rows();
  Eigen::Index cols = 0;
  for (Val p : parts) {
    if (node(p).value.rows() != rows) {
      shape_fail("concat_cols", node(p).value,
                 "all inputs need " + std::to_string(rows) + " rows");
    }
    cols += node(p).value.cols();
  }
  Node n;
  n.kind = OpKind::ConcatCols;
  n.value.resize(rows, cols);
  Eigen::Index at = 0;
  for (Val p : parts) {
    const Matrix& m = node(p).value;
    n.value.middleCols(at, m.cols()) = m;
    at += m.cols();
    n.inputs.push_back(p.idx);
  }
  return push(std::move(n));
}

Val Tape::slice_rows(Val a, int start, int count) {
  const Matrix& A = node(a).value;
  if (start < 0 || count <= 0 || start + count > A.rows()) {
    shape_fail("slice_rows", A,
               "rows [" + std::to_string(start) + ", " +
                   std::to_string(start + count) + ") out of range");
  }
  Node n;
  n.kind = OpKind::SliceRows;
  n.inputs = {a.idx};
  n.i0 = start;
  n.i1 = count;
  n.value = A.middleRows(start, count);
  return push(std::move(n));
}

Val Tape::slice_cols(Val a, int start, int count) {
  const Matrix& A = node(a).value;
  if (start < 0 || count <= 0 || start + count > A.cols()) {
    shape_fail("slice_cols", A,
               "cols [" + std::to_string(start) + ", " +
                   std::to_string(start + count) + ") out of range");
  }
  Node n;
  n.kind = OpKind::SliceCols;
  n.inputs = {a.idx};
  n.i0 = start;
  n.i1 = count;
  n.value = A.middleCols(start, count);
  return push(std::move(n));
}

Val Tape::transpose(Val a) {
  Node n;
  n.kind = OpKind::Transpose;
  n.inputs = {a.idx};
  n.value = node(a).value.transpose();
  return push(std::move(n));
}

Val Tape::repeat_rows(Val a, int times) {
  const Matrix& A = node(a).value;
  if (A.rows() != 1) shape_fail("repeat_rows", A, "expected a single row");
  if (times <= 0) shape_fail("repeat_rows", A, "times must be positive");
  Node n;
  n.kind = OpKind::RepeatRows;
  n.inputs = {a.idx};
  n.i0 = times;
  n.value = A.replicate(times, 1);
  return push(std::move(n));
}

namespace {

template <typename F>
Matrix map_matrix(const Matrix& a, F f) {
  return a.unaryExpr(f);
}

}  // namespace

Val Tape::sigmoid(Val a) {
  Node n;
  n.kind = OpKind::Sigmoid;
  n.inputs = {a.idx};
  n.value = map_matrix(node(a).value, [](double x) {
    // Split by sign to avoid exp overflow on large |x|.
    if (x >= 0) return 1.0 / (1.0 + std::exp(-x));
    double e = std::exp(x);
    return e / (1.0 + e);
  });
  return push(std::move(n));
}

Val Tape::tanh(Val a) {
  Node n;
  n.kind = OpKind::Tanh;
  n.inputs = {a.idx};
  n.value = node(a).value.array().tanh();
  return push(std::move(n));
}

Val Tape::relu(Val a) {
  Node n;
  n.kind = OpKind::Relu;
  n.inputs = {a.idx};
  n.value = node(a).value.cwiseMax(0.0);
  return push(std::move(n));
}

Val Tape::exp(Val a) {
  Node n;
  n.kind = OpKind::Exp;
  n.inputs = {a.idx};
  n.value = node(a).value.array().exp();
  return push(std::move(n));
}

Val Tape::log(Val a) {
  Node n;
  n.kind = OpKind::Log;
  n.inputs = {a.idx};
  n.value = node(a).value.array().log();
  return push(std::move(n));
}

Val Tape::neg(Val a) {
  Node n;
  n.kind = OpKind::Neg;
  n.inputs = {a.idx};
  n.value = -node(a).value;
  return push(std::move(n));
}

Val Tape::scale(Val a, double k) {
  Node n;
  n.kind = OpKind::Scale;
  n.inputs = {a.idx};
  n.s0 = k;
  n.value = k * node(a).value;
  return push(std::move(n));
}

Val Tape::add_scalar(Val a, double k) {
  Node n;
  n.kind = OpKind::AddScalar;
  n.inputs = {a.idx};
  n.s0 = k;
  n.value = node(a).value.array() + k;
  return push(std::move(n));
}

Val Tape::clamp(Val a, double lo, double hi) {
  if (lo > hi) throw GraphError("clamp: lo > hi");
  Node n;
  n.kind = OpKind::Clamp;
  n.inputs = {a.idx};
  n.s0 = lo;
  n.s1 = hi;
  n.value = node(a).value.cwiseMax(lo).cwiseMin(hi);
  return push(std::move(n));
}

Val Tape::softmax_row(Val a) {
  const Matrix& A = node(a).value;
  if (A.cols() < 1) shape_fail("softmax_row", A, "need at least one column");
  Node n;
  n.kind = OpKind::SoftmaxRow;
  n.inputs = {a.idx};
  n.value.resize(A.rows(), A.cols());
  for (Eigen::Index r = 0; r < A.rows(); ++r) {
    double mx = A.row(r).maxCoeff();
    Eigen::ArrayXd e = (A.row(r).array() - mx).exp();
    n.value.row(r) = e / e.sum();
  }
  return push(std::move(n));
}

Val Tape::log_softmax_row(Val a) {
  const Matrix& A = node(a).value;
  if (A.cols() < 1) {
    shape_fail("log_softmax_row", A, "need at least one column");
  }
  Node n;
  n.kind = OpKind::LogSoftmaxRow;
  n.inputs = {a.idx};
  n.value.resize(A.rows(), A.cols());
  for (Eigen::Index r = 0; r < A.rows(); ++r) {
    double mx = A.row(r).maxCoeff();
    double lse = std::log((A.row(r).array() - mx).exp().sum());
    n.value.row(r) = A.row(r).array() - mx - lse;
  }
  return push(std::move(n));
}

Val Tape::pick(Val a, int row, int col) {
  const Matrix& A = node(a).value;
  if (row < 0 || row >= A.rows() || col < 0 || col >= A.cols()) {
    shape_fail("pick", A,
               "entry (" + std::to_string(row) + ", " + std::to_string(col) +
                   ") out of range");
  }
  Node n;
  n.kind = OpKind::Pick;
  n.inputs = {a.idx};
  n.i0 = row;
  n.i1 = col;
  n.value.resize(1, 1);
  n.value(0, 0) = A(row, col);
  return push(std::move(n));
}

Val Tape::sum(Val a) {
  Node n;
  n.kind = OpKind::Sum;
  n.inputs = {a.idx};
  n.value.resize(1, 1);
  n.value(0, 0) = node(a).value.sum();
  return push(std::move(n));
}

Val Tape::mean(Val a) {
  Node n;
  n.kind = OpKind::Mean;
  n.inputs = {a.idx};
  n.value.resize(1, 1);
  n.value(0, 0) = node(a).value.mean();
  return push(std::move(n));
}

Matrix& Tape::grad_buf(int idx) {
  Node& n = nodes_[static_cast<size_t>(idx)];
  if (n.grad.size() == 0) {
    n.grad = Matrix::Zero(n.value.rows(), n.value.cols());
  }
  return n.grad;
}

void Tape::backward(Val loss) {
  check_open();
  Node& root = node(loss);
  if (root.value.rows() != 1 || root.value.cols() != 1) {
    throw GraphError("backward: loss must be 1x1, got " +
                     shape_of(root.value));
  }
  consumed_ = true;
  root.grad = Matrix::Ones(1, 1);

  for (int i = loss.idx; i >= 0; --i) {
    Node& n = nodes_[static_cast<size_t>(i)];
    if (!n.needs_grad || n.grad.size() == 0) continue;
    const Matrix& g = n.grad;
    switch (n.kind) {
      case OpKind::Input:
        break;
      case OpKind::Param:
        n.parameter->grad += g;
        break;
      case OpKind::Matmul: {
        const Matrix& A = nodes_[static_cast<size_t>(n.inputs[0])].value;
        const Matrix& B = nodes_[static_cast<size_t>(n.inputs[1])].value;
        grad_buf(n.inputs[0]).noalias() += g * B.transpose();
        grad_buf(n.inputs[1]).noalias() += A.transpose() * g;
        break;
      }
      case OpKind::Add:
        grad_buf(n.inputs[0]) += g;
        grad_buf(n.inputs[1]) += g;
        break;
      case OpKind::AddBias:
        grad_buf(n.inputs[0]) += g;
        grad_buf(n.inputs[1]).row(0) += g.colwise().sum();
        break;
      case OpKind::ElemMul: {
        const Matrix& A = nodes_[static_cast<size_t>(n.inputs[0])].value;
        const Matrix& B = nodes_[static_cast<size_t>(n.inputs[1])].value;
        grad_buf(n.inputs[0]) += g.cwiseProduct(B);
        grad_buf(n.inputs[1]) += g.cwiseProduct(A);
        break;
      }
      case OpKind::ConcatRows: {
        Eigen::Index at = 0;
        for (int in : n.inputs) {
          Eigen::Index r = nodes_[static_cast<size_t>(in)].value.rows();
          grad_buf(in) += g.middleRows(at, r);
          at += r;
        }
        break;
      }
      case OpKind::ConcatCols: {
        Eigen::Index at = 0;
        for (int in : n.inputs) {
          Eigen::Index c = nodes_[static_cast<size_t>(in)].value.cols();
          grad_buf(in) += g.middleCols(at, c);
          at += c;
        }
        break;
      }
      case OpKind::SliceRows:
        grad_buf(n.inputs[0]).middleRows(n.i0, n.i1) += g;
        break;
      case OpKind::SliceCols:
        grad_buf(n.inputs[0]).middleCols(n.i0, n.i1) += g;
        break;
      case OpKind::Transpose:
        grad_buf(n.inputs[0]) += g.transpose();
        break;
      case OpKind::RepeatRows:
        grad_buf(n.inputs[0]).row(0) += g.colwise().sum();
        break;
      case OpKind::Sigmoid:
        grad_buf(n.inputs[0]).array() +=
            g.array() * n.value.array() * (1.0 - n.value.array());
        break;
      case OpKind::Tanh:
        grad_buf(n.inputs[0]).array() +=
            g.array() * (1.0 - n.value.array().square());
        break;
      case OpKind::Relu: {
        const Matrix& x = nodes_[static_cast<size_t>(n.inputs[0])].value;
        grad_buf(n.inputs[0]).array() +=
            g.array() * (x.array() > 0.0).cast<double>();
        break;
      }
      case OpKind::Exp:
        grad_buf(n.inputs[0]).array() += g.array() * n.value.array();
        break;
      case OpKind::Log: {
        const Matrix& x = nodes_[static_cast<size_t>(n.inputs[0])].value;
        grad_buf(n.inputs[0]).array() += g.array() / x.array();
        break;
      }
      case OpKind::Neg:
        grad_buf(n.inputs[0]) -= g;
        break;
      case OpKind::Scale:
        grad_buf(n.inputs[0]) += n.s0 * g;
        break;
      case OpKind::AddScalar:
        grad_buf(n.inputs[0]) += g;
        break;
      case OpKind::Clamp: {
        const Matrix& x = nodes_[static_cast<size_t>(n.inputs[0])].value;
        grad_buf(n.inputs[0]).array() +=
            g.array() *
            ((x.array() >= n.s0) && (x.array() <= n.s1)).cast<double>();
        break;
      }
      case OpKind::SoftmaxRow: {
        Matrix& gx = grad_buf(n.inputs[0]);
        for (Eigen::Index r = 0; r < g.rows(); ++r) {
          double dot = (g.row(r).array() * n.value.row(r).array()).sum();
          gx.row(r).array() +=
              n.value.row(r).array() * (g.row(r).array() - dot);
        }
        break;
      }
      case OpKind::LogSoftmaxRow: {
        Matrix& gx = grad_buf(n.inputs[0]);
        for (Eigen::Index r = 0; r < g.rows(); ++r) {
          double s = g.row(r).sum();
          gx.row(r).array() +=
              g.row(r).array() - n.value.row(r).array().exp() * s;
        }
        break;
      }
      case OpKind::Pick:
        grad_buf(n.inputs[0])(n.i0, n.i1) += g(0, 0);
        break;
      case OpKind::Sum:
        grad_buf(n.inputs[0]).array() += g(0, 0);
        break;
      case OpKind::Mean:
        grad_buf(n.inputs[0]).array() +=
            g(0, 0) / static_cast<double>(
                          nodes_[static_cast<size_t>(n.inputs[0])].value.size());
        break;
    }
  }
}

}  // namespace divkd
