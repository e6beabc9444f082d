#include "scdsc/autodiff.hpp"

#include <algorithm>
#include <cmath>
#include <sstream>

namespace scdsc::ad {

std::string_view op_name(OpKind kind) {
  switch (kind) {
    case OpKind::matmul: return "matmul";
    case OpKind::add: return "add";
    case OpKind::sub: return "sub";
    case OpKind::scale: return "scale";
    case OpKind::add_scalar: return "add_scalar";
    case OpKind::relu: return "relu";
    case OpKind::row_l2norm: return "row_l2norm";
    case OpKind::row_normalize: return "row_normalize";
    case OpKind::hadamard: return "hadamard";
    case OpKind::frobenius_sq: return "frobenius_sq";
    case OpKind::sum: return "sum";
    case OpKind::log: return "log";
    case OpKind::transpose: return "transpose";
    case OpKind::reshape: return "reshape";
    case OpKind::gather_rows: return "gather_rows";
    case OpKind::scatter_mean: return "scatter_mean";
    case OpKind::masked_mean_filter: return "masked_mean_filter";
  }
  return "unknown";
}

std::shared_ptr<const GroupIndex> GroupIndex::make(std::vector<std::size_t> index) {
  auto groups = std::make_shared<GroupIndex>();
  std::size_t count = 0;
  for (std::size_t g : index) count = std::max(count, g + 1);
  groups->counts.assign(count, 0);
  for (std::size_t g : index) ++groups->counts[g];
  for (std::size_t g = 0; g < count; ++g) {
    if (groups->counts[g] == 0) {
      throw ContractError("group index: group " + std::to_string(g) + " is empty");
    }
  }
  groups->index = std::move(index);
  return groups;
}

namespace {

std::string shape_str(Index rows, Index cols) {
  std::ostringstream out;
  out << '(' << rows << 'x' << cols << ')';
  return out.str();
}

[[noreturn]] void shape_error(OpKind kind, Index ar, Index ac, Index br, Index bc) {
  throw DimensionError(std::string(op_name(kind)) + ": incompatible shapes " + shape_str(ar, ac) +
                       " and " + shape_str(br, bc));
}

template <typename T>
Tape<T>& common_tape(OpKind kind, const Value<T>& a, const Value<T>& b) {
  if (a.tape() == nullptr || a.tape() != b.tape()) {
    throw ContractError(std::string(op_name(kind)) + ": operands belong to different tapes");
  }
  return *a.tape();
}

template <typename T>
Tape<T>& tape_of(const Value<T>& a) {
  if (a.tape() == nullptr) throw ContractError("operation on an unbound value");
  return *a.tape();
}

enum class Broadcast { none, row, col };

Broadcast broadcast_kind(OpKind kind, Index ar, Index ac, Index br, Index bc) {
  if (ar == br && ac == bc) return Broadcast::none;
  if (br == 1 && bc == ac) return Broadcast::row;
  if (bc == 1 && br == ar) return Broadcast::col;
  shape_error(kind, ar, ac, br, bc);
}

template <typename T>
Value<T> add_like(const Value<T>& a, const Value<T>& b, T sign, OpKind kind) {
  Tape<T>& tape = common_tape(kind, a, b);
  const Matrix<T>& x = a.data();
  const Matrix<T>& y = b.data();
  const Broadcast mode = broadcast_kind(kind, x.rows(), x.cols(), y.rows(), y.cols());
  const Matrix<T> signed_y = sign * y;
  Matrix<T> out;
  switch (mode) {
    case Broadcast::none: out = x + signed_y; break;
    case Broadcast::row: out = x.rowwise() + signed_y.row(0); break;
    case Broadcast::col: out = x.colwise() + signed_y.col(0); break;
  }
  const std::size_t ia = a.id();
  const std::size_t ib = b.id();
  return tape.record(kind, {ia, ib}, std::move(out), [ia, ib, sign, mode](Tape<T>& t, std::size_t o) {
    const Matrix<T>& g = t.output_grad(o);
    t.accumulate(ia, g);
    if (!t.requires_grad(ib)) return;
    switch (mode) {
      case Broadcast::none: t.accumulate(ib, sign * g); break;
      case Broadcast::row: t.accumulate(ib, sign * g.colwise().sum()); break;
      case Broadcast::col: t.accumulate(ib, sign * g.rowwise().sum()); break;
    }
  });
}

}  // namespace

// ---------------------------------------------------------------------------
// Value

template <typename T>
const Matrix<T>& Value<T>::data() const {
  if (tape_ == nullptr) throw ContractError("value is not bound to a tape");
  return tape_->data(id_);
}

template <typename T>
const Matrix<T>& Value<T>::grad() const {
  if (tape_ == nullptr) throw ContractError("value is not bound to a tape");
  return tape_->grad(id_);
}

template <typename T>
bool Value<T>::requires_grad() const {
  return tape_ != nullptr && tape_->requires_grad(id_);
}

template <typename T>
std::optional<std::size_t> Value<T>::node() const {
  if (tape_ == nullptr) return std::nullopt;
  return tape_->node_of(id_);
}

template <typename T>
T Value<T>::item() const {
  const Matrix<T>& d = data();
  if (d.rows() != 1 || d.cols() != 1) {
    throw ContractError("item: value has shape " + shape_str(d.rows(), d.cols()));
  }
  return d(0, 0);
}

// ---------------------------------------------------------------------------
// Tape

template <typename T>
Value<T> Tape<T>::leaf(Matrix<T> data, bool requires_grad) {
  slots_.push_back(Slot{std::move(data), {}, requires_grad, std::nullopt});
  return Value<T>(this, slots_.size() - 1);
}

template <typename T>
Value<T> Tape<T>::record(OpKind kind, std::vector<std::size_t> inputs, Matrix<T> output,
                         BackwardRule rule) {
  const bool needs_grad =
      std::any_of(inputs.begin(), inputs.end(), [this](std::size_t id) { return slots_[id].requires_grad; });
  if (!needs_grad) {
    slots_.push_back(Slot{std::move(output), {}, false, std::nullopt});
    return Value<T>(this, slots_.size() - 1);
  }
  const std::size_t out = slots_.size();
  slots_.push_back(Slot{std::move(output), {}, true, nodes_.size()});
  nodes_.push_back(Node{kind, std::move(inputs), out, std::move(rule)});
  return Value<T>(this, out);
}

template <typename T>
const Matrix<T>& Tape<T>::grad(std::size_t id) const {
  const Slot& slot = slots_.at(id);
  if (!slot.requires_grad) throw ContractError("gradient requested for a value that does not require one");
  if (!consumed_) throw ContractError("gradient requested before backward");
  return slot.grad;
}

template <typename T>
void Tape<T>::backward(const Value<T>& loss) {
  if (loss.tape() != this) throw ContractError("backward: loss belongs to a different tape");
  const Matrix<T>& value = slots_[loss.id()].data;
  if (value.rows() != 1 || value.cols() != 1) {
    throw ContractError("backward: loss must be 1x1, got " + shape_str(value.rows(), value.cols()));
  }
  if (consumed_) throw ContractError("backward: tape already consumed");
  consumed_ = true;

  if (slots_[loss.id()].requires_grad) {
    slots_[loss.id()].grad = Matrix<T>::Ones(1, 1);
    for (auto it = nodes_.rbegin(); it != nodes_.rend(); ++it) {
      if (slots_[it->output].grad.size() == 0) continue;  // not on a path to the loss
      it->rule(*this, it->output);
    }
  }
  for (Slot& slot : slots_) {
    if (slot.requires_grad && slot.grad.size() == 0) slot.grad = Matrix<T>::Zero(slot.data.rows(), slot.data.cols());
  }
}

// ---------------------------------------------------------------------------
// Operations

template <typename T>
Value<T> matmul(const Value<T>& a, const Value<T>& b) {
  Tape<T>& tape = common_tape(OpKind::matmul, a, b);
  const Matrix<T>& x = a.data();
  const Matrix<T>& y = b.data();
  if (x.cols() != y.rows()) shape_error(OpKind::matmul, x.rows(), x.cols(), y.rows(), y.cols());
  Matrix<T> out(x.rows(), y.cols());
  out.noalias() = x * y;
  const std::size_t ia = a.id();
  const std::size_t ib = b.id();
  return tape.record(OpKind::matmul, {ia, ib}, std::move(out), [ia, ib](Tape<T>& t, std::size_t o) {
    const Matrix<T>& g = t.output_grad(o);
    if (t.requires_grad(ia)) t.accumulate(ia, (g * t.data(ib).transpose()).eval());
    if (t.requires_grad(ib)) t.accumulate(ib, (t.data(ia).transpose() * g).eval());
  });
}

template <typename T>
Value<T> add(const Value<T>& a, const Value<T>& b) {
  return add_like(a, b, T(1), OpKind::add);
}

template <typename T>
Value<T> sub(const Value<T>& a, const Value<T>& b) {
  return add_like(a, b, T(-1), OpKind::sub);
}

template <typename T>
Value<T> scale(const Value<T>& a, T factor) {
  Tape<T>& tape = tape_of(a);
  const std::size_t ia = a.id();
  return tape.record(OpKind::scale, {ia}, a.data() * factor, [ia, factor](Tape<T>& t, std::size_t o) {
    t.accumulate(ia, factor * t.output_grad(o));
  });
}

template <typename T>
Value<T> add_scalar(const Value<T>& a, T offset) {
  Tape<T>& tape = tape_of(a);
  const std::size_t ia = a.id();
  Matrix<T> out = a.data().array() + offset;
  return tape.record(OpKind::add_scalar, {ia}, std::move(out),
                     [ia](Tape<T>& t, std::size_t o) { t.accumulate(ia, t.output_grad(o)); });
}

template <typename T>
Value<T> relu(const Value<T>& a) {
  Tape<T>& tape = tape_of(a);
  const std::size_t ia = a.id();
  Matrix<T> out = a.data().cwiseMax(T(0));
  return tape.record(OpKind::relu, {ia}, std::move(out), [ia](Tape<T>& t, std::size_t o) {
    t.accumulate(ia, (t.data(ia).array() > T(0)).select(t.output_grad(o).array(), T(0)).matrix());
  });
}

template <typename T>
Value<T> row_l2norm(const Value<T>& a) {
  Tape<T>& tape = tape_of(a);
  const std::size_t ia = a.id();
  Matrix<T> out = a.data().rowwise().norm();
  return tape.record(OpKind::row_l2norm, {ia}, std::move(out), [ia](Tape<T>& t, std::size_t o) {
    const Matrix<T>& x = t.data(ia);
    const Matrix<T>& y = t.data(o);
    const Matrix<T>& g = t.output_grad(o);
    Matrix<T> dx(x.rows(), x.cols());
    for (Index i = 0; i < x.rows(); ++i) {
      // The norm is not differentiable at zero; use the zero subgradient.
      const T w = y(i, 0) > T(0) ? g(i, 0) / y(i, 0) : T(0);
      dx.row(i) = w * x.row(i);
    }
    t.accumulate(ia, dx);
  });
}

template <typename T>
Value<T> row_normalize(const Value<T>& a) {
  Tape<T>& tape = tape_of(a);
  const std::size_t ia = a.id();
  const Matrix<T>& x = a.data();
  Matrix<T> denom = (x.rowwise().sum().array() + T(kNormalizeGuard)).matrix();
  Matrix<T> out = x.array().colwise() / denom.col(0).array();
  return tape.record(OpKind::row_normalize, {ia}, std::move(out),
                     [ia, denom = std::move(denom)](Tape<T>& t, std::size_t o) {
                       const Matrix<T>& y = t.data(o);
                       const Matrix<T>& g = t.output_grad(o);
                       // d/dx_ij of y_ik = (delta_jk - y_ik) / s_i
                       Matrix<T> inner = g.cwiseProduct(y).rowwise().sum();
                       Matrix<T> dx = (g.colwise() - inner.col(0)).array().colwise() / denom.col(0).array();
                       t.accumulate(ia, dx);
                     });
}

template <typename T>
Value<T> hadamard(const Value<T>& a, const Value<T>& b) {
  Tape<T>& tape = common_tape(OpKind::hadamard, a, b);
  const Matrix<T>& x = a.data();
  const Matrix<T>& y = b.data();
  if (x.rows() != y.rows() || x.cols() != y.cols()) {
    shape_error(OpKind::hadamard, x.rows(), x.cols(), y.rows(), y.cols());
  }
  const std::size_t ia = a.id();
  const std::size_t ib = b.id();
  return tape.record(OpKind::hadamard, {ia, ib}, x.cwiseProduct(y), [ia, ib](Tape<T>& t, std::size_t o) {
    const Matrix<T>& g = t.output_grad(o);
    if (t.requires_grad(ia)) t.accumulate(ia, g.cwiseProduct(t.data(ib)));
    if (t.requires_grad(ib)) t.accumulate(ib, g.cwiseProduct(t.data(ia)));
  });
}

template <typename T>
Value<T> frobenius_sq(const Value<T>& a) {
  Tape<T>& tape = tape_of(a);
  const std::size_t ia = a.id();
  Matrix<T> out(1, 1);
  out(0, 0) = static_cast<T>(a.data().template cast<double>().squaredNorm());
  return tape.record(OpKind::frobenius_sq, {ia}, std::move(out), [ia](Tape<T>& t, std::size_t o) {
    t.accumulate(ia, (T(2) * t.output_grad(o)(0, 0)) * t.data(ia));
  });
}

template <typename T>
Value<T> sum(const Value<T>& a) {
  Tape<T>& tape = tape_of(a);
  const std::size_t ia = a.id();
  Matrix<T> out(1, 1);
  out(0, 0) = static_cast<T>(a.data().template cast<double>().sum());
  return tape.record(OpKind::sum, {ia}, std::move(out), [ia](Tape<T>& t, std::size_t o) {
    const Matrix<T>& x = t.data(ia);
    t.accumulate(ia, Matrix<T>::Constant(x.rows(), x.cols(), t.output_grad(o)(0, 0)));
  });
}

template <typename T>
Value<T> log(const Value<T>& a) {
  Tape<T>& tape = tape_of(a);
  const std::size_t ia = a.id();
  Matrix<T> out = a.data().array().log().matrix();
  return tape.record(OpKind::log, {ia}, std::move(out), [ia](Tape<T>& t, std::size_t o) {
    t.accumulate(ia, t.output_grad(o).cwiseQuotient(t.data(ia)));
  });
}

template <typename T>
Value<T> transpose(const Value<T>& a) {
  Tape<T>& tape = tape_of(a);
  const std::size_t ia = a.id();
  Matrix<T> out = a.data().transpose();
  return tape.record(OpKind::transpose, {ia}, std::move(out), [ia](Tape<T>& t, std::size_t o) {
    t.accumulate(ia, t.output_grad(o).transpose());
  });
}

template <typename T>
Value<T> reshape(const Value<T>& a, Index rows, Index cols) {
  Tape<T>& tape = tape_of(a);
  const Matrix<T>& x = a.data();
  if (rows < 0 || cols < 0 || rows * cols != x.size()) shape_error(OpKind::reshape, x.rows(), x.cols(), rows, cols);
  const std::size_t ia = a.id();
  Matrix<T> out = Eigen::Map<const Matrix<T>>(x.data(), rows, cols);
  const Index in_rows = x.rows();
  const Index in_cols = x.cols();
  return tape.record(OpKind::reshape, {ia}, std::move(out), [ia, in_rows, in_cols](Tape<T>& t, std::size_t o) {
    const Matrix<T>& g = t.output_grad(o);
    t.accumulate(ia, Eigen::Map<const Matrix<T>>(g.data(), in_rows, in_cols));
  });
}

template <typename T>
Value<T> gather_rows(const Value<T>& a, std::shared_ptr<const std::vector<std::size_t>> index) {
  Tape<T>& tape = tape_of(a);
  const Matrix<T>& x = a.data();
  const std::vector<std::size_t>& idx = *index;
  Matrix<T> out(static_cast<Index>(idx.size()), x.cols());
  for (std::size_t i = 0; i < idx.size(); ++i) {
    if (idx[i] >= static_cast<std::size_t>(x.rows())) {
      shape_error(OpKind::gather_rows, x.rows(), x.cols(), static_cast<Index>(idx[i]), 1);
    }
    out.row(static_cast<Index>(i)) = x.row(static_cast<Index>(idx[i]));
  }
  const std::size_t ia = a.id();
  return tape.record(OpKind::gather_rows, {ia}, std::move(out), [ia, index](Tape<T>& t, std::size_t o) {
    const Matrix<T>& g = t.output_grad(o);
    const Matrix<T>& x = t.data(ia);
    Matrix<T> dx = Matrix<T>::Zero(x.rows(), x.cols());
    for (std::size_t i = 0; i < index->size(); ++i) dx.row(static_cast<Index>((*index)[i])) += g.row(static_cast<Index>(i));
    t.accumulate(ia, dx);
  });
}

template <typename T>
Value<T> scatter_mean(const Value<T>& a, std::shared_ptr<const GroupIndex> groups) {
  Tape<T>& tape = tape_of(a);
  const Matrix<T>& x = a.data();
  if (groups->size() != static_cast<std::size_t>(x.rows())) {
    shape_error(OpKind::scatter_mean, x.rows(), x.cols(), static_cast<Index>(groups->size()), 1);
  }
  Matrix<T> out = Matrix<T>::Zero(static_cast<Index>(groups->groups()), x.cols());
  for (Index i = 0; i < x.rows(); ++i) out.row(static_cast<Index>(groups->index[i])) += x.row(i);
  for (std::size_t g = 0; g < groups->groups(); ++g) {
    out.row(static_cast<Index>(g)) /= static_cast<T>(groups->counts[g]);
  }
  const std::size_t ia = a.id();
  return tape.record(OpKind::scatter_mean, {ia}, std::move(out), [ia, groups](Tape<T>& t, std::size_t o) {
    const Matrix<T>& g = t.output_grad(o);
    const Matrix<T>& x = t.data(ia);
    Matrix<T> dx(x.rows(), x.cols());
    for (Index i = 0; i < x.rows(); ++i) {
      const std::size_t grp = groups->index[i];
      dx.row(i) = g.row(static_cast<Index>(grp)) / static_cast<T>(groups->counts[grp]);
    }
    t.accumulate(ia, dx);
  });
}

template <typename T>
Value<T> masked_mean_filter(const Value<T>& a, std::shared_ptr<const RowNeighborhood> neighborhood) {
  Tape<T>& tape = tape_of(a);
  const Matrix<T>& x = a.data();
  const RowNeighborhood& nb = *neighborhood;
  if (nb.source_rows != static_cast<std::size_t>(x.rows())) {
    shape_error(OpKind::masked_mean_filter, x.rows(), x.cols(), static_cast<Index>(nb.source_rows), 1);
  }
  Matrix<T> out = Matrix<T>::Zero(static_cast<Index>(nb.rows()), x.cols());
  for (std::size_t i = 0; i < nb.rows(); ++i) {
    const auto members = nb.row(i);
    if (members.empty()) throw ContractError("masked_mean_filter: empty neighborhood at row " + std::to_string(i));
    for (std::size_t j : members) out.row(static_cast<Index>(i)) += x.row(static_cast<Index>(j));
    out.row(static_cast<Index>(i)) /= static_cast<T>(members.size());
  }
  const std::size_t ia = a.id();
  return tape.record(OpKind::masked_mean_filter, {ia}, std::move(out),
                     [ia, neighborhood](Tape<T>& t, std::size_t o) {
                       const Matrix<T>& g = t.output_grad(o);
                       const Matrix<T>& x = t.data(ia);
                       Matrix<T> dx = Matrix<T>::Zero(x.rows(), x.cols());
                       for (std::size_t i = 0; i < neighborhood->rows(); ++i) {
                         const auto members = neighborhood->row(i);
                         const T w = T(1) / static_cast<T>(members.size());
                         for (std::size_t j : members) dx.row(static_cast<Index>(j)) += w * g.row(static_cast<Index>(i));
                       }
                       t.accumulate(ia, dx);
                     });
}

// ---------------------------------------------------------------------------
// Finite-difference gradient check

GradCheckResult grad_check(const LossBuilder& build, std::span<const Matrix<double>> leaves, double step) {
  auto evaluate = [&](std::span<const Matrix<double>> inputs) {
    Tape<double> tape;
    std::vector<Value<double>> bound;
    bound.reserve(inputs.size());
    for (const auto& m : inputs) bound.push_back(tape.constant(m));
    return build(tape, bound).item();
  };

  std::vector<Matrix<double>> analytic;
  {
    Tape<double> tape;
    std::vector<Value<double>> bound;
    for (const auto& m : leaves) bound.push_back(tape.leaf(m));
    Value<double> loss = build(tape, bound);
    tape.backward(loss);
    for (const auto& v : bound) analytic.push_back(v.grad());
  }

  GradCheckResult result;
  std::vector<Matrix<double>> probe(leaves.begin(), leaves.end());
  for (std::size_t l = 0; l < probe.size(); ++l) {
    for (Index e = 0; e < probe[l].size(); ++e) {
      double& entry = probe[l].data()[e];
      const double saved = entry;
      entry = saved + step;
      const double up = evaluate(probe);
      entry = saved - step;
      const double down = evaluate(probe);
      entry = saved;
      const double numeric = (up - down) / (2.0 * step);
      const double exact = analytic[l].data()[e];
      if (!std::isfinite(numeric) || !std::isfinite(exact)) {
        result.finite = false;
        result.worst_leaf = l;
        result.worst_entry = e;
        return result;
      }
      const double err = std::abs(exact - numeric) / std::max(1.0, std::abs(numeric));
      if (err > result.max_rel_error) {
        result.max_rel_error = err;
        result.worst_leaf = l;
        result.worst_entry = e;
      }
    }
  }
  return result;
}

// ---------------------------------------------------------------------------
// Instantiations

#define SCDSC_AD_INSTANTIATE(T)                                                                     \
  template class Value<T>;                                                                          \
  template class Tape<T>;                                                                           \
  template Value<T> matmul(const Value<T>&, const Value<T>&);                                       \
  template Value<T> add(const Value<T>&, const Value<T>&);                                          \
  template Value<T> sub(const Value<T>&, const Value<T>&);                                          \
  template Value<T> scale(const Value<T>&, T);                                                      \
  template Value<T> add_scalar(const Value<T>&, T);                                                 \
  template Value<T> relu(const Value<T>&);                                                          \
  template Value<T> row_l2norm(const Value<T>&);                                                    \
  template Value<T> row_normalize(const Value<T>&);                                                 \
  template Value<T> hadamard(const Value<T>&, const Value<T>&);                                     \
  template Value<T> frobenius_sq(const Value<T>&);                                                  \
  template Value<T> sum(const Value<T>&);                                                           \
  template Value<T> log(const Value<T>&);                                                           \
  template Value<T> transpose(const Value<T>&);                                                     \
  template Value<T> reshape(const Value<T>&, Index, Index);                                         \
  template Value<T> gather_rows(const Value<T>&, std::shared_ptr<const std::vector<std::size_t>>); \
  template Value<T> scatter_mean(const Value<T>&, std::shared_ptr<const GroupIndex>);               \
  template Value<T> masked_mean_filter(const Value<T>&, std::shared_ptr<const RowNeighborhood>);

SCDSC_AD_INSTANTIATE(float)
SCDSC_AD_INSTANTIATE(double)

#undef SCDSC_AD_INSTANTIATE

}  // namespace scdsc::ad
