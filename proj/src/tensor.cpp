#include "cmat/tensor.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <sstream>

namespace cmat {

namespace {

thread_local Tape* g_active_tape = nullptr;

std::shared_ptr<detail::TensorData> make_data(Shape shape) {
  for (int e : shape) {
    if (e <= 0) throw DimensionError("tensor extents must be positive, got " + shape_str(shape));
  }
  auto d = std::make_shared<detail::TensorData>();
  d->value.resize(shape_size(shape));
  d->shape = std::move(shape);
  return d;
}

bool track(std::initializer_list<const Tensor*> ins) {
  if (!Tape::active()) return false;
  for (const Tensor* t : ins) {
    if (t->requires_grad()) return true;
  }
  return false;
}

void ensure_grad(detail::TensorData* d) {
  if (d->grad.size() != d->value.size()) d->grad = Eigen::VectorXd::Zero(d->value.size());
}

// Broadcast classification for binary elementwise ops.
enum class Bcast { Same, ScalarRhs, RowVecRhs };

Bcast classify(const Tensor& a, const Tensor& b, const char* op) {
  if (a.shape() == b.shape()) return Bcast::Same;
  if (b.size() == 1) return Bcast::ScalarRhs;
  if (a.rank() == 2 && b.rank() == 1 && a.shape()[1] == b.shape()[0]) return Bcast::RowVecRhs;
  throw DimensionError(std::string(op) + ": incompatible shapes " + shape_str(a.shape()) + " and " +
                       shape_str(b.shape()));
}

const double kSqrt2 = std::sqrt(2.0);
const double kInvSqrt2Pi = 0.3989422804014326779399461;

}  // namespace

std::string shape_str(const Shape& s) {
  std::ostringstream os;
  os << "[";
  for (std::size_t i = 0; i < s.size(); ++i) os << (i ? "x" : "") << s[i];
  os << "]";
  return os.str();
}

int shape_size(const Shape& s) {
  return std::accumulate(s.begin(), s.end(), 1, std::multiplies<int>());
}

// --- Tensor ----------------------------------------------------------------

Tensor Tensor::zeros(Shape shape) {
  Tensor t(make_data(std::move(shape)));
  t.d_->value.setZero();
  return t;
}

Tensor Tensor::full(Shape shape, double v) {
  Tensor t(make_data(std::move(shape)));
  t.d_->value.setConstant(v);
  return t;
}

Tensor Tensor::from(Shape shape, std::vector<double> v) {
  Tensor t(make_data(std::move(shape)));
  if (static_cast<int>(v.size()) != t.size()) {
    throw DimensionError("from: data length " + std::to_string(v.size()) + " does not match shape " +
                         shape_str(t.shape()));
  }
  std::copy(v.begin(), v.end(), t.d_->value.data());
  return t;
}

Tensor Tensor::from_eigen(Shape shape, const Eigen::VectorXd& v) {
  Tensor t(make_data(std::move(shape)));
  if (v.size() != t.size()) {
    throw DimensionError("from: data length " + std::to_string(v.size()) + " does not match shape " +
                         shape_str(t.shape()));
  }
  t.d_->value = v;
  return t;
}

Tensor Tensor::scalar(double v) { return full({1}, v); }

int Tensor::rows() const {
  if (rank() != 2) throw DimensionError("rows: tensor is not 2-D, shape " + shape_str(shape()));
  return d_->shape[0];
}

int Tensor::cols() const {
  if (rank() != 2) throw DimensionError("cols: tensor is not 2-D, shape " + shape_str(shape()));
  return d_->shape[1];
}

double Tensor::scalar_value() const {
  if (size() != 1) throw ContractError("scalar_value: tensor has " + std::to_string(size()) + " elements");
  return d_->value[0];
}

const Eigen::VectorXd& Tensor::grad() const {
  if (!has_grad()) throw ContractError("grad: no gradient populated");
  return d_->grad;
}

Eigen::VectorXd& Tensor::grad_buffer() {
  ensure_grad(d_.get());
  return d_->grad;
}

Eigen::Map<const RowMat> Tensor::mat() const {
  if (rank() == 2) return {d_->value.data(), d_->shape[0], d_->shape[1]};
  return {d_->value.data(), 1, static_cast<Eigen::Index>(d_->value.size())};
}

Eigen::Map<RowMat> Tensor::mat_mut() {
  if (rank() == 2) return {d_->value.data(), d_->shape[0], d_->shape[1]};
  return {d_->value.data(), 1, static_cast<Eigen::Index>(d_->value.size())};
}

Eigen::Map<RowMat> Tensor::grad_mat() {
  ensure_grad(d_.get());
  if (rank() == 2) return {d_->grad.data(), d_->shape[0], d_->shape[1]};
  return {d_->grad.data(), 1, static_cast<Eigen::Index>(d_->grad.size())};
}

// --- Tape -------------------------------------------------------------------

Tape::Tape() : prev_(g_active_tape) { g_active_tape = this; }

Tape::~Tape() { g_active_tape = prev_; }

Tape* Tape::active() { return g_active_tape; }

void Tape::record(std::function<void()> back) {
  Tape* t = g_active_tape;
  if (!t) return;
  if (t->entries_.empty()) t->entries_.reserve(256);
  t->entries_.push_back(std::move(back));
}

void Tape::backward(const Tensor& loss) {
  if (used_) throw ContractError("Tape::backward: already replayed; use a fresh tape per loss");
  used_ = true;
  if (loss.size() != 1) throw ContractError("Tape::backward: loss must be scalar");
  if (!loss.requires_grad()) return;  // nothing on the tape feeds this value
  Tensor seed = loss;
  seed.grad_buffer()[0] += 1.0;
  for (auto it = entries_.rbegin(); it != entries_.rend(); ++it) (*it)();
}

// --- helpers shared by op closures ------------------------------------------

namespace {

Tensor make_out(Shape shape) { return Tensor::zeros(std::move(shape)); }

// Marks the output as grad-participating and records the closure.
void record_op(Tensor& out, std::function<void()> back) {
  out.set_requires_grad(true);
  Tape::record(std::move(back));
}

bool out_grad_absent(const Tensor& out) { return !out.has_grad(); }

}  // namespace

// --- ops ---------------------------------------------------------------------

Tensor matmul(const Tensor& a, const Tensor& b) {
  if (a.rank() != 2 || b.rank() != 2 || a.shape()[1] != b.shape()[0]) {
    throw DimensionError("matmul: incompatible shapes " + shape_str(a.shape()) + " and " +
                         shape_str(b.shape()));
  }
  Tensor out = make_out({a.shape()[0], b.shape()[1]});
  out.mat_mut().noalias() = a.mat() * b.mat();
  if (track({&a, &b})) {
    record_op(out, [a = a, b = b, out]() mutable {
      if (out_grad_absent(out)) return;
      auto g = out.grad_mat();
      if (a.requires_grad()) a.grad_mat().noalias() += g * b.mat().transpose();
      if (b.requires_grad()) b.grad_mat().noalias() += a.mat().transpose() * g;
    });
  }
  return out;
}

Tensor transpose(const Tensor& a) {
  if (a.rank() != 2) throw DimensionError("transpose: tensor is not 2-D, shape " + shape_str(a.shape()));
  Tensor out = make_out({a.shape()[1], a.shape()[0]});
  out.mat_mut() = a.mat().transpose();
  if (track({&a})) {
    record_op(out, [a = a, out]() mutable {
      if (out_grad_absent(out)) return;
      if (a.requires_grad()) a.grad_mat() += out.grad_mat().transpose();
    });
  }
  return out;
}

namespace {

template <typename Fwd, typename BackA, typename BackB>
Tensor binary_op(const Tensor& a, const Tensor& b, const char* name, Fwd fwd, BackA back_a, BackB back_b) {
  Bcast mode = classify(a, b, name);
  Tensor out = make_out(a.shape());
  fwd(out, mode);
  if (track({&a, &b})) {
    record_op(out, [a = a, b = b, out, mode, back_a, back_b]() mutable {
      if (out_grad_absent(out)) return;
      if (a.requires_grad()) back_a(a, b, out, mode);
      if (b.requires_grad()) back_b(a, b, out, mode);
    });
  }
  return out;
}

// Reduces a full-shape gradient onto the (possibly broadcast) rhs operand.
void reduce_into_rhs(Tensor& b, const Tensor& like, const Eigen::VectorXd& g, Bcast mode) {
  if (mode == Bcast::Same) {
    b.grad_buffer() += g;
  } else if (mode == Bcast::ScalarRhs) {
    b.grad_buffer()[0] += g.sum();
  } else {
    Eigen::Map<const RowMat> gm(g.data(), like.shape()[0], like.shape()[1]);
    b.grad_buffer() += gm.colwise().sum().transpose();
  }
}

}  // namespace

Tensor add(const Tensor& a, const Tensor& b) {
  return binary_op(
      a, b, "add",
      [&](Tensor& out, Bcast mode) {
        if (mode == Bcast::Same) {
          out.values() = a.values() + b.values();
        } else if (mode == Bcast::ScalarRhs) {
          out.values() = (a.values().array() + b.values()[0]).matrix();
        } else {
          out.mat_mut() = a.mat().rowwise() + b.values().transpose();
        }
      },
      [](Tensor& a2, const Tensor&, Tensor& out, Bcast) { a2.grad_buffer() += out.grad_buffer(); },
      [](const Tensor& a2, Tensor& b2, Tensor& out, Bcast mode) {
        reduce_into_rhs(b2, a2, out.grad_buffer(), mode);
      });
}

Tensor sub(const Tensor& a, const Tensor& b) {
  return binary_op(
      a, b, "sub",
      [&](Tensor& out, Bcast mode) {
        if (mode == Bcast::Same) {
          out.values() = a.values() - b.values();
        } else if (mode == Bcast::ScalarRhs) {
          out.values() = (a.values().array() - b.values()[0]).matrix();
        } else {
          out.mat_mut() = a.mat().rowwise() - b.values().transpose();
        }
      },
      [](Tensor& a2, const Tensor&, Tensor& out, Bcast) { a2.grad_buffer() += out.grad_buffer(); },
      [](const Tensor& a2, Tensor& b2, Tensor& out, Bcast mode) {
        Eigen::VectorXd gneg = -out.grad_buffer();
        reduce_into_rhs(b2, a2, gneg, mode);
      });
}

Tensor mul(const Tensor& a, const Tensor& b) {
  return binary_op(
      a, b, "mul",
      [&](Tensor& out, Bcast mode) {
        if (mode == Bcast::Same) {
          out.values() = a.values().cwiseProduct(b.values());
        } else if (mode == Bcast::ScalarRhs) {
          out.values() = a.values() * b.values()[0];
        } else {
          out.mat_mut() = (a.mat().array().rowwise() * b.values().transpose().array()).matrix();
        }
      },
      [](Tensor& a2, const Tensor& b2, Tensor& out, Bcast mode) {
        if (mode == Bcast::Same) {
          a2.grad_buffer() += out.grad_buffer().cwiseProduct(b2.values());
        } else if (mode == Bcast::ScalarRhs) {
          a2.grad_buffer() += out.grad_buffer() * b2.values()[0];
        } else {
          a2.grad_mat() += (out.grad_mat().array().rowwise() * b2.values().transpose().array()).matrix();
        }
      },
      [](const Tensor& a2, Tensor& b2, Tensor& out, Bcast mode) {
        Eigen::VectorXd ga = out.grad_buffer().cwiseProduct(a2.values());
        reduce_into_rhs(b2, a2, ga, mode);
      });
}

Tensor add_scalar(const Tensor& a, double c) {
  Tensor out = make_out(a.shape());
  out.values() = (a.values().array() + c).matrix();
  if (track({&a})) {
    record_op(out, [a = a, out]() mutable {
      if (out_grad_absent(out)) return;
      if (a.requires_grad()) a.grad_buffer() += out.grad_buffer();
    });
  }
  return out;
}

Tensor mul_scalar(const Tensor& a, double c) {
  Tensor out = make_out(a.shape());
  out.values() = a.values() * c;
  if (track({&a})) {
    record_op(out, [a = a, out, c]() mutable {
      if (out_grad_absent(out)) return;
      if (a.requires_grad()) a.grad_buffer() += out.grad_buffer() * c;
    });
  }
  return out;
}

Tensor relu(const Tensor& a) {
  Tensor out = make_out(a.shape());
  out.values() = a.values().cwiseMax(0.0);
  if (track({&a})) {
    record_op(out, [a = a, out]() mutable {
      if (out_grad_absent(out)) return;
      if (!a.requires_grad()) return;
      Eigen::VectorXd mask = (a.values().array() > 0.0).cast<double>().matrix();
      a.grad_buffer() += out.grad_buffer().cwiseProduct(mask);
    });
  }
  return out;
}

Tensor gelu(const Tensor& a) {
  Tensor out = make_out(a.shape());
  out.values() = a.values().unaryExpr([](double x) { return 0.5 * x * (1.0 + std::erf(x / kSqrt2)); });
  if (track({&a})) {
    record_op(out, [a = a, out]() mutable {
      if (out_grad_absent(out)) return;
      if (!a.requires_grad()) return;
      Eigen::VectorXd dydx = a.values().unaryExpr([](double x) {
        double phi = kInvSqrt2Pi * std::exp(-0.5 * x * x);
        return 0.5 * (1.0 + std::erf(x / kSqrt2)) + x * phi;
      });
      a.grad_buffer() += out.grad_buffer().cwiseProduct(dydx);
    });
  }
  return out;
}

Tensor log(const Tensor& a) {
  Tensor out = make_out(a.shape());
  out.values() = a.values().array().log().matrix();
  if (track({&a})) {
    record_op(out, [a = a, out]() mutable {
      if (out_grad_absent(out)) return;
      if (a.requires_grad()) a.grad_buffer() += out.grad_buffer().cwiseQuotient(a.values());
    });
  }
  return out;
}

Tensor exp(const Tensor& a) {
  Tensor out = make_out(a.shape());
  out.values() = a.values().array().exp().matrix();
  if (track({&a})) {
    record_op(out, [a = a, out]() mutable {
      if (out_grad_absent(out)) return;
      if (a.requires_grad()) a.grad_buffer() += out.grad_buffer().cwiseProduct(out.values());
    });
  }
  return out;
}

Tensor clip(const Tensor& a, double lo, double hi) {
  if (!(lo <= hi)) throw ContractError("clip: lo must not exceed hi");
  Tensor out = make_out(a.shape());
  out.values() = a.values().cwiseMax(lo).cwiseMin(hi);
  if (track({&a})) {
    record_op(out, [a = a, out, lo, hi]() mutable {
      if (out_grad_absent(out)) return;
      if (!a.requires_grad()) return;
      // gradient flows only where the input sits inside the interval
      Eigen::VectorXd mask =
          ((a.values().array() >= lo) && (a.values().array() <= hi)).cast<double>().matrix();
      a.grad_buffer() += out.grad_buffer().cwiseProduct(mask);
    });
  }
  return out;
}

Tensor sum(const Tensor& a) {
  Tensor out = Tensor::scalar(a.values().sum());
  if (track({&a})) {
    record_op(out, [a = a, out]() mutable {
      if (out_grad_absent(out)) return;
      if (a.requires_grad()) a.grad_buffer().array() += out.grad_buffer()[0];
    });
  }
  return out;
}

Tensor mean(const Tensor& a) {
  Tensor out = Tensor::scalar(a.values().mean());
  if (track({&a})) {
    double inv = 1.0 / static_cast<double>(a.size());
    record_op(out, [a = a, out, inv]() mutable {
      if (out_grad_absent(out)) return;
      if (a.requires_grad()) a.grad_buffer().array() += out.grad_buffer()[0] * inv;
    });
  }
  return out;
}

Tensor reshape(const Tensor& a, Shape shape) {
  if (shape_size(shape) != a.size()) {
    throw DimensionError("reshape: cannot view " + shape_str(a.shape()) + " as " + shape_str(shape));
  }
  Tensor out = Tensor::from_eigen(std::move(shape), a.values());
  if (track({&a})) {
    record_op(out, [a = a, out]() mutable {
      if (out_grad_absent(out)) return;
      if (a.requires_grad()) a.grad_buffer() += out.grad_buffer();
    });
  }
  return out;
}

Tensor flatten(const Tensor& a) { return reshape(a, {a.size()}); }

Tensor concat(const std::vector<Tensor>& parts) {
  if (parts.empty()) throw ContractError("concat: empty input list");
  int total = 0;
  for (const Tensor& p : parts) {
    if (p.rank() != 1) throw DimensionError("concat: all parts must be 1-D, got " + shape_str(p.shape()));
    total += p.size();
  }
  Tensor out = make_out({total});
  int off = 0;
  bool any_grad = false;
  for (const Tensor& p : parts) {
    out.values().segment(off, p.size()) = p.values();
    off += p.size();
    any_grad = any_grad || p.requires_grad();
  }
  if (Tape::active() && any_grad) {
    record_op(out, [parts = parts, out]() mutable {
      if (out_grad_absent(out)) return;
      int off2 = 0;
      for (Tensor& p : parts) {
        if (p.requires_grad()) p.grad_buffer() += out.grad_buffer().segment(off2, p.size());
        off2 += p.size();
      }
    });
  }
  return out;
}

Tensor stack_rows(const std::vector<Tensor>& rows) {
  if (rows.empty()) throw ContractError("stack_rows: empty input list");
  int d = rows.front().size();
  for (const Tensor& r : rows) {
    if (r.rank() != 1 || r.size() != d) {
      throw DimensionError("stack_rows: all rows must be 1-D of equal length, got " + shape_str(r.shape()));
    }
  }
  Tensor out = make_out({static_cast<int>(rows.size()), d});
  bool any_grad = false;
  for (std::size_t i = 0; i < rows.size(); ++i) {
    out.values().segment(static_cast<int>(i) * d, d) = rows[i].values();
    any_grad = any_grad || rows[i].requires_grad();
  }
  if (Tape::active() && any_grad) {
    record_op(out, [rows = rows, out, d]() mutable {
      if (out_grad_absent(out)) return;
      for (std::size_t i = 0; i < rows.size(); ++i) {
        Tensor r = rows[i];
        if (r.requires_grad()) r.grad_buffer() += out.grad_buffer().segment(static_cast<int>(i) * d, d);
      }
    });
  }
  return out;
}

Tensor row(const Tensor& a, int i) {
  if (a.rank() != 2) throw DimensionError("row: tensor is not 2-D, shape " + shape_str(a.shape()));
  if (i < 0 || i >= a.shape()[0]) throw ContractError("row: index " + std::to_string(i) + " out of range");
  int d = a.shape()[1];
  Tensor out = make_out({d});
  out.values() = a.values().segment(i * d, d);
  if (track({&a})) {
    record_op(out, [a = a, out, i, d]() mutable {
      if (out_grad_absent(out)) return;
      if (a.requires_grad()) a.grad_buffer().segment(i * d, d) += out.grad_buffer();
    });
  }
  return out;
}

Tensor select(const Tensor& a, int i) {
  if (a.rank() != 1) throw DimensionError("select: tensor is not 1-D, shape " + shape_str(a.shape()));
  if (i < 0 || i >= a.size()) throw ContractError("select: index " + std::to_string(i) + " out of range");
  Tensor out = Tensor::scalar(a.values()[i]);
  if (track({&a})) {
    record_op(out, [a = a, out, i]() mutable {
      if (out_grad_absent(out)) return;
      if (a.requires_grad()) a.grad_buffer()[i] += out.grad_buffer()[0];
    });
  }
  return out;
}

Tensor minimum(const Tensor& a, const Tensor& b) {
  if (a.shape() != b.shape()) {
    throw DimensionError("minimum: incompatible shapes " + shape_str(a.shape()) + " and " +
                         shape_str(b.shape()));
  }
  Tensor out = make_out(a.shape());
  out.values() = a.values().cwiseMin(b.values());
  if (track({&a, &b})) {
    record_op(out, [a = a, b = b, out]() mutable {
      if (out_grad_absent(out)) return;
      // ties route to the left operand
      Eigen::VectorXd pick_a = (a.values().array() <= b.values().array()).cast<double>().matrix();
      if (a.requires_grad()) a.grad_buffer() += out.grad_buffer().cwiseProduct(pick_a);
      if (b.requires_grad()) {
        Eigen::VectorXd pick_b = (1.0 - pick_a.array()).matrix();
        b.grad_buffer() += out.grad_buffer().cwiseProduct(pick_b);
      }
    });
  }
  return out;
}

Tensor sum_tensors(const std::vector<Tensor>& ts) {
  if (ts.empty()) throw ContractError("sum_tensors: empty input list");
  for (const Tensor& t : ts) {
    if (t.shape() != ts.front().shape()) {
      throw DimensionError("sum_tensors: mismatched shapes " + shape_str(t.shape()) + " and " +
                           shape_str(ts.front().shape()));
    }
  }
  Tensor out = make_out(ts.front().shape());
  out.values().setZero();
  bool any_grad = false;
  for (const Tensor& t : ts) {
    out.values() += t.values();
    any_grad = any_grad || t.requires_grad();
  }
  if (Tape::active() && any_grad) {
    record_op(out, [ts = ts, out]() mutable {
      if (out_grad_absent(out)) return;
      for (Tensor t : ts) {
        if (t.requires_grad()) t.grad_buffer() += out.grad_buffer();
      }
    });
  }
  return out;
}

// --- softmax family ----------------------------------------------------------

namespace {

// Stable softmax of src into dst (both strided views of length n).
template <typename Src, typename Dst>
void softmax_slice(const Src& src, Dst dst) {
  double m = src.maxCoeff();
  dst = (src.array() - m).exp().matrix();
  dst /= dst.sum();
}

// dx = y .* (g - dot(g, y)) for one slice.
template <typename Y, typename G, typename DX>
void softmax_slice_back(const Y& y, const G& g, DX dx) {
  double dot = (g.array() * y.array()).sum();
  dx += (y.array() * (g.array() - dot)).matrix();
}

}  // namespace

Tensor softmax(const Tensor& a, int dim) {
  if (dim < 0 || dim >= a.rank()) {
    throw ContractError("softmax: dim " + std::to_string(dim) + " out of range for rank " +
                        std::to_string(a.rank()));
  }
  if (!a.values().allFinite()) throw NumericError("softmax: non-finite input");
  Tensor out = make_out(a.shape());
  if (a.rank() == 1) {
    softmax_slice(a.values(), Eigen::Ref<Eigen::VectorXd>(out.values()));
  } else if (a.rank() == 2 && dim == 1) {
    for (int r = 0; r < a.shape()[0]; ++r) softmax_slice(a.mat().row(r), out.mat_mut().row(r));
  } else if (a.rank() == 2 && dim == 0) {
    for (int c = 0; c < a.shape()[1]; ++c) softmax_slice(a.mat().col(c), out.mat_mut().col(c));
  } else {
    throw ContractError("softmax: only 1-D and 2-D tensors supported");
  }
  if (track({&a})) {
    record_op(out, [a = a, out, dim]() mutable {
      if (out_grad_absent(out)) return;
      if (!a.requires_grad()) return;
      Tensor ga = a;
      if (a.rank() == 1) {
        softmax_slice_back(out.values(), out.grad_buffer(), Eigen::Ref<Eigen::VectorXd>(ga.grad_buffer()));
      } else if (dim == 1) {
        for (int r = 0; r < a.shape()[0]; ++r) {
          softmax_slice_back(out.mat().row(r), out.grad_mat().row(r), ga.grad_mat().row(r));
        }
      } else {
        for (int c = 0; c < a.shape()[1]; ++c) {
          softmax_slice_back(out.mat().col(c), out.grad_mat().col(c), ga.grad_mat().col(c));
        }
      }
    });
  }
  return out;
}

namespace {

template <typename Src, typename Dst>
void log_softmax_slice(const Src& src, Dst dst) {
  double m = src.maxCoeff();
  double lse = std::log((src.array() - m).exp().sum());
  dst = (src.array() - m - lse).matrix();
}

}  // namespace

Tensor log_softmax(const Tensor& a) {
  if (a.rank() != 1) throw DimensionError("log_softmax: tensor is not 1-D, shape " + shape_str(a.shape()));
  if (!a.values().allFinite()) throw NumericError("log_softmax: non-finite input");
  Tensor out = make_out(a.shape());
  log_softmax_slice(a.values(), Eigen::Ref<Eigen::VectorXd>(out.values()));
  if (track({&a})) {
    record_op(out, [a = a, out]() mutable {
      if (out_grad_absent(out)) return;
      if (!a.requires_grad()) return;
      double gsum = out.grad_buffer().sum();
      a.grad_buffer() += out.grad_buffer() - gsum * out.values().array().exp().matrix();
    });
  }
  return out;
}

Tensor log_softmax_rows(const Tensor& a) {
  if (a.rank() != 2) throw DimensionError("log_softmax_rows: tensor is not 2-D, shape " + shape_str(a.shape()));
  if (!a.values().allFinite()) throw NumericError("log_softmax_rows: non-finite input");
  Tensor out = make_out(a.shape());
  for (int r = 0; r < a.shape()[0]; ++r) {
    log_softmax_slice(a.mat().row(r), out.mat_mut().row(r));
  }
  if (track({&a})) {
    record_op(out, [a = a, out]() mutable {
      if (out_grad_absent(out)) return;
      if (!a.requires_grad()) return;
      Tensor ga = a;
      for (int r = 0; r < a.shape()[0]; ++r) {
        double gsum = out.grad_mat().row(r).sum();
        ga.grad_mat().row(r) +=
            out.grad_mat().row(r) - gsum * out.mat().row(r).array().exp().matrix();
      }
    });
  }
  return out;
}

Tensor causal_softmax_rows(const Tensor& a) {
  if (a.rank() != 2 || a.shape()[0] != a.shape()[1]) {
    throw ContractError("causal_softmax_rows: requires a square matrix, got " + shape_str(a.shape()));
  }
  if (!a.values().allFinite()) throw NumericError("causal_softmax_rows: non-finite input");
  int n = a.shape()[0];
  Tensor out = Tensor::zeros({n, n});
  for (int r = 0; r < n; ++r) {
    // max and sum run over the prefix only; masked weights stay exactly 0
    softmax_slice(a.mat().row(r).head(r + 1), out.mat_mut().row(r).head(r + 1));
  }
  if (track({&a})) {
    record_op(out, [a, out, n]() mutable {
      if (out_grad_absent(out)) return;
      if (!a.requires_grad()) return;
      Tensor ga = a;
      for (int r = 0; r < n; ++r) {
        softmax_slice_back(out.mat().row(r).head(r + 1), out.grad_mat().row(r).head(r + 1),
                           ga.grad_mat().row(r).head(r + 1));
      }
    });
  }
  return out;
}

Tensor layer_norm(const Tensor& a, double eps) {
  Tensor out = make_out(a.shape());
  int rows_n = a.rank() == 2 ? a.shape()[0] : 1;
  int d = a.rank() == 2 ? a.shape()[1] : a.size();
  auto x = Eigen::Map<const RowMat>(a.values().data(), rows_n, d);
  auto y = Eigen::Map<RowMat>(out.values().data(), rows_n, d);
  Eigen::VectorXd inv_sd(rows_n);
  for (int r = 0; r < rows_n; ++r) {
    double mu = x.row(r).mean();
    double var = (x.row(r).array() - mu).square().mean();
    inv_sd[r] = 1.0 / std::sqrt(var + eps);
    y.row(r) = (x.row(r).array() - mu) * inv_sd[r];
  }
  if (track({&a})) {
    record_op(out, [a = a, out, rows_n, d, inv_sd]() mutable {
      if (out_grad_absent(out)) return;
      if (!a.requires_grad()) return;
      Tensor ga = a;
      auto y2 = Eigen::Map<const RowMat>(out.values().data(), rows_n, d);
      auto g = Eigen::Map<const RowMat>(out.grad_buffer().data(), rows_n, d);
      auto dx = Eigen::Map<RowMat>(ga.grad_buffer().data(), rows_n, d);
      for (int r = 0; r < rows_n; ++r) {
        double gm = g.row(r).mean();
        double gym = (g.row(r).array() * y2.row(r).array()).mean();
        dx.row(r) += ((g.row(r).array() - gm - y2.row(r).array() * gym) * inv_sd[r]).matrix();
      }
    });
  }
  return out;
}

Tensor mha_core(const Tensor& q, const Tensor& k, const Tensor& v, int heads, bool causal) {
  if (q.rank() != 2 || k.rank() != 2 || v.rank() != 2) {
    throw DimensionError("mha_core: q/k/v must be 2-D");
  }
  int d = q.shape()[1];
  if (k.shape()[1] != d || v.shape()[1] != d) {
    throw DimensionError("mha_core: width mismatch, q " + shape_str(q.shape()) + " k " +
                         shape_str(k.shape()) + " v " + shape_str(v.shape()));
  }
  if (k.shape()[0] != v.shape()[0]) throw DimensionError("mha_core: k/v length mismatch");
  if (heads <= 0 || d % heads != 0) {
    throw ContractError("mha_core: width " + std::to_string(d) + " not divisible by heads " +
                        std::to_string(heads));
  }
  int lq = q.shape()[0];
  int lk = k.shape()[0];
  if (causal && lq != lk) {
    throw ContractError("mha_core: causal self-attention requires equal q/k lengths, got " +
                        std::to_string(lq) + " and " + std::to_string(lk));
  }
  int dh = d / heads;
  double scale = 1.0 / std::sqrt(static_cast<double>(dh));
  Tensor out = make_out({lq, d});
  // attention weights are kept for the backward pass
  auto weights = std::make_shared<std::vector<RowMat>>();
  weights->reserve(static_cast<std::size_t>(heads));
  for (int h = 0; h < heads; ++h) {
    auto qh = q.mat().middleCols(h * dh, dh);
    auto kh = k.mat().middleCols(h * dh, dh);
    auto vh = v.mat().middleCols(h * dh, dh);
    RowMat s = scale * (qh * kh.transpose());
    if (!s.allFinite()) throw NumericError("mha_core: non-finite attention scores");
    RowMat w = RowMat::Zero(lq, lk);
    if (causal) {
      for (int r = 0; r < lq; ++r) softmax_slice(s.row(r).head(r + 1), w.row(r).head(r + 1));
    } else {
      for (int r = 0; r < lq; ++r) softmax_slice(s.row(r), w.row(r));
    }
    out.mat_mut().middleCols(h * dh, dh).noalias() = w * vh;
    weights->push_back(std::move(w));
  }
  if (track({&q, &k, &v})) {
    record_op(out, [q = q, k = k, v = v, out, weights, heads, dh, scale, causal]() mutable {
      if (out_grad_absent(out)) return;
      Tensor gq = q, gk = k, gv = v;
      for (int h = 0; h < heads; ++h) {
        const RowMat& w = (*weights)[static_cast<std::size_t>(h)];
        auto qh = q.mat().middleCols(h * dh, dh);
        auto kh = k.mat().middleCols(h * dh, dh);
        auto vh = v.mat().middleCols(h * dh, dh);
        RowMat go = out.grad_mat().middleCols(h * dh, dh);
        if (v.requires_grad()) gv.grad_mat().middleCols(h * dh, dh).noalias() += w.transpose() * go;
        if (!q.requires_grad() && !k.requires_grad()) continue;
        RowMat gw = go * vh.transpose();
        RowMat gs(w.rows(), w.cols());
        for (int r = 0; r < w.rows(); ++r) {
          double dot = (gw.row(r).array() * w.row(r).array()).sum();
          gs.row(r) = (w.row(r).array() * (gw.row(r).array() - dot)).matrix();
        }
        (void)causal;  // masked weights are exactly zero, so gs is already zero there
        if (q.requires_grad()) gq.grad_mat().middleCols(h * dh, dh).noalias() += scale * (gs * kh);
        if (k.requires_grad()) gk.grad_mat().middleCols(h * dh, dh).noalias() += scale * (gs.transpose() * qh);
      }
    });
  }
  return out;
}

Tensor affine(const Tensor& x, const Tensor& w, const Tensor& b) {
  if (x.rank() != 2 || w.rank() != 2 || x.shape()[1] != w.shape()[0]) {
    throw DimensionError("affine: incompatible shapes " + shape_str(x.shape()) + " and " +
                         shape_str(w.shape()));
  }
  if (b.rank() != 1 || b.shape()[0] != w.shape()[1]) {
    throw DimensionError("affine: bias shape " + shape_str(b.shape()) + " does not match " +
                         shape_str(w.shape()));
  }
  Tensor out = make_out({x.shape()[0], w.shape()[1]});
  out.mat_mut().noalias() = x.mat() * w.mat();
  out.mat_mut().rowwise() += b.values().transpose();
  if (track({&x, &w, &b})) {
    record_op(out, [x = x, w = w, b = b, out]() mutable {
      if (out_grad_absent(out)) return;
      auto g = out.grad_mat();
      if (x.requires_grad()) x.grad_mat().noalias() += g * w.mat().transpose();
      if (w.requires_grad()) w.grad_mat().noalias() += x.mat().transpose() * g;
      if (b.requires_grad()) b.grad_buffer() += g.colwise().sum().transpose();
    });
  }
  return out;
}

Tensor layer_norm_affine(const Tensor& x, const Tensor& gain, const Tensor& bias, double eps) {
  int rows_n = x.rank() == 2 ? x.shape()[0] : 1;
  int d = x.rank() == 2 ? x.shape()[1] : x.size();
  if (gain.size() != d || bias.size() != d) {
    throw DimensionError("layer_norm_affine: gain/bias width must match the last axis");
  }
  Tensor out = make_out(x.shape());
  auto xm = Eigen::Map<const RowMat>(x.values().data(), rows_n, d);
  auto ym = Eigen::Map<RowMat>(out.values().data(), rows_n, d);
  // normalized rows are kept for the backward pass
  auto normed = std::make_shared<RowMat>(rows_n, d);
  Eigen::VectorXd inv_sd(rows_n);
  for (int r = 0; r < rows_n; ++r) {
    double mu = xm.row(r).mean();
    double var = (xm.row(r).array() - mu).square().mean();
    inv_sd[r] = 1.0 / std::sqrt(var + eps);
    normed->row(r) = ((xm.row(r).array() - mu) * inv_sd[r]).matrix();
    ym.row(r) = (normed->row(r).array() * gain.values().transpose().array()).matrix() +
                bias.values().transpose();
  }
  if (track({&x, &gain, &bias})) {
    record_op(out, [x = x, gain = gain, bias = bias, out, normed, inv_sd, rows_n, d]() mutable {
      if (out_grad_absent(out)) return;
      auto g = Eigen::Map<const RowMat>(out.grad_buffer().data(), rows_n, d);
      if (gain.requires_grad()) {
        gain.grad_buffer() += (g.array() * normed->array()).colwise().sum().matrix().transpose();
      }
      if (bias.requires_grad()) bias.grad_buffer() += g.colwise().sum().transpose();
      if (x.requires_grad()) {
        auto dx = Eigen::Map<RowMat>(x.grad_buffer().data(), rows_n, d);
        for (int r = 0; r < rows_n; ++r) {
          Eigen::RowVectorXd u = (g.row(r).array() * gain.values().transpose().array()).matrix();
          double um = u.mean();
          double uym = (u.array() * normed->row(r).array()).mean();
          dx.row(r) += ((u.array() - um - normed->row(r).array() * uym) * inv_sd[r]).matrix();
        }
      }
    });
  }
  return out;
}

// --- gradient checking --------------------------------------------------------

GradCheckReport grad_check(const std::function<Tensor()>& f, const std::vector<Tensor>& inputs, double h,
                           double tol) {
  if (!(h > 0.0)) throw ContractError("grad_check: step h must be positive");
  GradCheckReport report;
  report.inputs.resize(inputs.size());

  for (Tensor in : inputs) in.zero_grad();
  std::vector<Eigen::VectorXd> analytic(inputs.size());
  {
    Tape tape;
    Tensor loss = f();
    if (loss.size() != 1) throw ContractError("grad_check: f must return a scalar");
    tape.backward(loss);
  }
  for (std::size_t i = 0; i < inputs.size(); ++i) {
    if (!inputs[i].requires_grad()) continue;
    analytic[i] = inputs[i].has_grad() ? inputs[i].grad() : Eigen::VectorXd::Zero(inputs[i].size());
  }

  auto eval = [&]() {
    Tensor loss = f();  // no tape active: pure evaluation
    if (loss.size() != 1) throw ContractError("grad_check: f must return a scalar");
    return loss.scalar_value();
  };

  for (std::size_t i = 0; i < inputs.size(); ++i) {
    Tensor in = inputs[i];
    auto& rin = report.inputs[i];
    if (!in.requires_grad()) {
      rin.skipped = true;
      continue;
    }
    for (int j = 0; j < in.size(); ++j) {
      double x0 = in.values()[j];
      in.values()[j] = x0 + h;
      double fp = eval();
      in.values()[j] = x0 - h;
      double fm = eval();
      in.values()[j] = x0;
      double numeric = (fp - fm) / (2.0 * h);
      double a = analytic[i][j];
      double rel = std::abs(a - numeric) / std::max({std::abs(a), std::abs(numeric), 1e-6});
      if (rel > rin.max_rel_err) {
        rin.max_rel_err = rel;
        rin.worst_index = j;
      }
    }
    report.max_rel_err = std::max(report.max_rel_err, rin.max_rel_err);
  }
  report.pass = report.max_rel_err <= tol;
  return report;
}

}  // namespace cmat
