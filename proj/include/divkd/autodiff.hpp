// SPDX-License-Identifier: Apache-2.0
//
// Reverse-mode automatic differentiation over dense double matrices. A Tape
// records one forward computation eagerly and replays it backward exactly
// once; ParamStore owns the named trainable parameters together with their
// Adam state and the checkpoint serialization.
#ifndef DIVKD_AUTODIFF_HPP
#define DIVKD_AUTODIFF_HPP

#include <Eigen/Dense>
#include <cstdint>
#include <map>
#include <memory>
#include <string>
#include <vector>

#include "divkd/common.hpp"

namespace divkd {

using Matrix = Eigen::MatrixXd;

struct Parameter {
  std::string name;
  Matrix value;
  Matrix grad;  // accumulated across backward passes until the next step
  Matrix m;     // Adam first moment
  Matrix v;     // Adam second moment
};

// Named parameters plus optimizer state. Iteration order is by name, which
// fixes the update order and keeps training bitwise reproducible.
class ParamStore {
 public:
  // Zero-initialized. GraphError if the name already exists.
  Parameter& create(const std::string& name, int rows, int cols);
  // Uniform(-range, range) from the stream derived as "init/<name>", so the
  // draw depends only on (seed, name), never on creation order.
  Parameter& create_uniform(const std::string& name, int rows, int cols,
                            double range, uint64_t seed);

  Parameter& get(const std::string& name);
  const Parameter& get(const std::string& name) const;
  bool has(const std::string& name) const;
  size_t size() const { return params_.size(); }

  void zero_grads();

  // Ordered by name.
  std::vector<Parameter*> all();
  std::vector<const Parameter*> all() const;

  uint64_t step() const { return step_; }
  uint64_t seed() const { return seed_; }
  void set_seed(uint64_t s) { seed_ = s; }
  const std::string& config_hash() const { return config_hash_; }
  void set_config_hash(std::string h) { config_hash_ = std::move(h); }

  // Binary container: magic/version, metadata (step, seed, config hash),
  // then per parameter (sorted by name) its shape, values and Adam moments.
  void save(const std::string& path) const;
  // Fills an existing store; the file must carry exactly the same parameter
  // names and shapes (CheckpointError otherwise). Restores Adam state and
  // step count so training can resume mid-run.
  void load_into(const std::string& path);
  // Reconstructs a store purely from a file.
  static ParamStore load(const std::string& path);

  friend void adam_step(ParamStore& store, double lr, double beta1,
                        double beta2, double eps);

 private:
  std::map<std::string, std::unique_ptr<Parameter>> params_;
  uint64_t step_ = 0;
  uint64_t seed_ = 0;
  std::string config_hash_;
};

// Standard Adam with bias correction; zeroes gradients afterwards.
void adam_step(ParamStore& store, double lr, double beta1 = 0.9,
               double beta2 = 0.999, double eps = 1e-8);

// Handle to a node on a Tape. Only meaningful for the tape that made it.
struct Val {
  int idx = -1;
};

class Tape {
 public:
  Tape() = default;
  Tape(const Tape&) = delete;
  Tape& operator=(const Tape&) = delete;

  // Leaves. input() is a constant; param() routes gradients into the store.
  Val input(Matrix value);
  Val constant(double value);  // 1x1
  Val param(Parameter& p);

  Val matmul(Val a, Val b);
  // Same-shape addition, or broadcast of a 1xC bias over every row of a.
  Val add(Val a, Val b);
  Val sub(Val a, Val b);
  Val elem_mul(Val a, Val b);
  Val concat_rows(const std::vector<Val>& parts);
  Val concat_cols(const std::vector<Val>& parts);
  Val slice_rows(Val a, int start, int count);
  Val slice_cols(Val a, int start, int count);
  Val transpose(Val a);
  Val repeat_rows(Val a, int times);  // 1xC -> times x C
  Val sigmoid(Val a);
  Val tanh(Val a);
  Val relu(Val a);
  Val exp(Val a);
  Val log(Val a);
  Val neg(Val a);
  Val scale(Val a, double k);
  Val add_scalar(Val a, double k);
  Val clamp(Val a, double lo, double hi);
  Val softmax_row(Val a);      // each row independently, max-shifted
  Val log_softmax_row(Val a);
  Val pick(Val a, int row, int col);  // 1x1 view of one entry
  Val sum(Val a);   // 1x1
  Val mean(Val a);  // 1x1

  const Matrix& value(Val v) const;
  // Gradient of the loss w.r.t. this node; zero-shaped if never reached.
  const Matrix& grad(Val v) const;

  // Seeds d(loss)/d(loss) = 1 and sweeps the tape in reverse, accumulating
  // into Parameter::grad. The loss must be 1x1 and on this tape; a tape can
  // only be consumed once (GraphError otherwise).
  void backward(Val loss);

  size_t size() const { return nodes_.size(); }

 private:
  enum class OpKind : uint8_t {
    Input, Param, Matmul, Add, AddBias, ElemMul, ConcatRows, ConcatCols,
    SliceRows, SliceCols, Transpose, RepeatRows, Sigmoid, Tanh, Relu, Exp,
    Log, Neg, Scale, AddScalar, Clamp, SoftmaxRow, LogSoftmaxRow, Pick, Sum,
    Mean,
  };

  struct Node {
    OpKind kind = OpKind::Input;
    Matrix value;
    Matrix grad;  // allocated lazily during backward
    std::vector<int> inputs;
    Parameter* parameter = nullptr;
    double s0 = 0.0, s1 = 0.0;  // scalar operands (scale factor, clamp lo/hi)
    int i0 = 0, i1 = 0;         // index operands (slice start/count, pick)
    bool needs_grad = false;
  };

  Node& node(Val v);
  const Node& node(Val v) const;
  Val push(Node n);
  void check_open() const;
  Matrix& grad_buf(int idx);

  std::vector<Node> nodes_;
  bool consumed_ = false;
};

}  // namespace divkd

#endif
