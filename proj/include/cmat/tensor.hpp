#pragma once

#include <Eigen/Dense>
#include <functional>
#include <memory>
#include <string>
#include <vector>

#include "cmat/errors.hpp"

namespace cmat {

using Shape = std::vector<int>;
using RowMat = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;

namespace detail {
struct TensorData {
  Shape shape;
  Eigen::VectorXd value;  // flat, row-major
  Eigen::VectorXd grad;   // size 0 until backward touches it
  bool requires_grad = false;
};
}  // namespace detail

std::string shape_str(const Shape& s);
int shape_size(const Shape& s);

// Dense 64-bit float tensor. A Tensor is a cheap shared handle; ops are free
// functions that record backward rules on the active Tape when any input
// participates in gradients.
class Tensor {
 public:
  Tensor() = default;

  static Tensor zeros(Shape shape);
  static Tensor full(Shape shape, double v);
  static Tensor from(Shape shape, std::vector<double> v);
  static Tensor from_eigen(Shape shape, const Eigen::VectorXd& v);
  static Tensor scalar(double v);

  bool defined() const { return d_ != nullptr; }
  const Shape& shape() const { return d_->shape; }
  int rank() const { return static_cast<int>(d_->shape.size()); }
  int size() const { return static_cast<int>(d_->value.size()); }
  int rows() const;
  int cols() const;

  double scalar_value() const;
  double operator()(int i) const { return d_->value[i]; }
  double operator()(int r, int c) const { return d_->value[r * cols() + c]; }

  Eigen::VectorXd& values() { return d_->value; }
  const Eigen::VectorXd& values() const { return d_->value; }

  bool requires_grad() const { return d_->requires_grad; }
  Tensor& set_requires_grad(bool b) {
    d_->requires_grad = b;
    return *this;
  }

  bool has_grad() const { return d_ && d_->grad.size() == d_->value.size(); }
  const Eigen::VectorXd& grad() const;
  Eigen::VectorXd& grad_buffer();  // allocates zeros on first use
  void zero_grad() { d_->grad.resize(0); }

  // 2-D row-major views over the flat buffer.
  Eigen::Map<const RowMat> mat() const;
  Eigen::Map<RowMat> mat_mut();
  Eigen::Map<RowMat> grad_mat();  // allocates zeros on first use

  detail::TensorData* node() const { return d_.get(); }

 private:
  explicit Tensor(std::shared_ptr<detail::TensorData> d) : d_(std::move(d)) {}
  std::shared_ptr<detail::TensorData> d_;
};

// Reverse-mode tape. Ops append entries in execution order (hence already
// topologically sorted); backward() replays them once in exact reverse order.
// One backward per tape; construct a fresh tape per loss evaluation.
class Tape {
 public:
  Tape();
  ~Tape();
  Tape(const Tape&) = delete;
  Tape& operator=(const Tape&) = delete;

  void backward(const Tensor& loss);
  std::size_t num_ops() const { return entries_.size(); }

  static Tape* active();
  // Backward closures own their operand handles; recording stores only the
  // closure, in execution order.
  static void record(std::function<void()> back);

 private:
  std::vector<std::function<void()>> entries_;
  Tape* prev_ = nullptr;
  bool used_ = false;
};

// --- op suite ------------------------------------------------------------

Tensor matmul(const Tensor& a, const Tensor& b);
Tensor transpose(const Tensor& a);

// add/sub/mul accept same-shape operands, a scalar (size-1) right operand, or
// a 1-D right operand broadcast across the rows of a 2-D left operand.
Tensor add(const Tensor& a, const Tensor& b);
Tensor sub(const Tensor& a, const Tensor& b);
Tensor mul(const Tensor& a, const Tensor& b);
Tensor add_scalar(const Tensor& a, double c);
Tensor mul_scalar(const Tensor& a, double c);
inline Tensor neg(const Tensor& a) { return mul_scalar(a, -1.0); }

Tensor relu(const Tensor& a);
Tensor gelu(const Tensor& a);
Tensor log(const Tensor& a);
Tensor exp(const Tensor& a);
Tensor clip(const Tensor& a, double lo, double hi);

Tensor sum(const Tensor& a);
Tensor mean(const Tensor& a);
Tensor reshape(const Tensor& a, Shape shape);
Tensor flatten(const Tensor& a);
Tensor concat(const std::vector<Tensor>& parts);      // 1-D pieces -> 1-D
Tensor stack_rows(const std::vector<Tensor>& rows);   // k 1-D [d] -> [k, d]
Tensor row(const Tensor& a, int i);                   // [n, d] -> [d]
Tensor select(const Tensor& a, int i);                // 1-D -> scalar
Tensor minimum(const Tensor& a, const Tensor& b);
Tensor sum_tensors(const std::vector<Tensor>& ts);    // elementwise sum

// softmax along an axis of a 1-D or 2-D tensor, max-subtracted for stability.
// Non-finite inputs raise NumericError.
Tensor softmax(const Tensor& a, int dim);
Tensor log_softmax(const Tensor& a);        // 1-D
Tensor log_softmax_rows(const Tensor& a);   // 2-D, per row
// Row j attends only to columns 0..j; masked weights are exactly zero and the
// max/sum run over the prefix alone, so outputs at j are bitwise independent
// of entries beyond j.
Tensor causal_softmax_rows(const Tensor& a);

// Normalizes the last axis to zero mean / unit variance (no affine part).
Tensor layer_norm(const Tensor& a, double eps = 1e-5);

// x W + b with the bias broadcast across rows; one fused tape entry.
Tensor affine(const Tensor& x, const Tensor& w, const Tensor& b);
// gain * layer_norm(x) + bias, fused.
Tensor layer_norm_affine(const Tensor& x, const Tensor& gain, const Tensor& bias, double eps = 1e-5);

// Fused multi-head scaled dot-product attention core: inputs are already
// projected q [Lq, d], k/v [Lk, d]; output is the concatenation of the head
// outputs, [Lq, d]. causal requires Lq == Lk.
Tensor mha_core(const Tensor& q, const Tensor& k, const Tensor& v, int heads, bool causal);

// --- gradient checking ----------------------------------------------------

struct GradCheckReport {
  struct Input {
    double max_rel_err = 0.0;
    int worst_index = -1;
    bool skipped = false;  // input does not require grad
  };
  std::vector<Input> inputs;
  double max_rel_err = 0.0;
  bool pass = false;
};

// Compares backward() gradients of the scalar f() against central finite
// differences over every element of every grad-requiring input. Inputs with
// requires_grad unset are skipped.
GradCheckReport grad_check(const std::function<Tensor()>& f, const std::vector<Tensor>& inputs,
                           double h = 1e-5, double tol = 1e-4);

}  // namespace cmat
