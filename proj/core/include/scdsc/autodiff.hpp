#pragma once

// Minimal reverse-mode differentiation over dense row-major matrices.
//
// A Tape owns every value produced during one forward pass. Values are cheap
// handles into the tape. Operations record a node with a backward rule only
// when at least one input requires a gradient, so evaluating a graph made of
// constants costs nothing beyond the forward arithmetic.

#include <Eigen/Core>

#include <cstddef>
#include <deque>
#include <functional>
#include <memory>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "scdsc/errors.hpp"

namespace scdsc::ad {

template <typename T>
using Matrix = Eigen::Matrix<T, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;

using Index = Eigen::Index;

enum class OpKind {
  matmul,
  add,
  sub,
  scale,
  add_scalar,
  relu,
  row_l2norm,
  row_normalize,
  hadamard,
  frobenius_sq,
  sum,
  log,
  transpose,
  reshape,
  gather_rows,
  scatter_mean,
  masked_mean_filter,
};

std::string_view op_name(OpKind kind);

/// Denominator guard used by row_normalize.
inline constexpr double kNormalizeGuard = 1e-12;

/// Assignment of n samples to `groups` non-empty groups.
struct GroupIndex {
  std::vector<std::size_t> index;
  std::vector<std::size_t> counts;

  std::size_t size() const { return index.size(); }
  std::size_t groups() const { return counts.size(); }

  /// Validates that labels are contiguous in [0, groups) with no empty group.
  static std::shared_ptr<const GroupIndex> make(std::vector<std::size_t> index);
};

/// Compressed row lists: output row i averages input rows
/// members[offsets[i]] .. members[offsets[i+1] - 1].
struct RowNeighborhood {
  std::vector<std::size_t> offsets{0};
  std::vector<std::size_t> members;
  std::size_t source_rows = 0;

  std::size_t rows() const { return offsets.size() - 1; }
  std::span<const std::size_t> row(std::size_t i) const {
    return {members.data() + offsets[i], offsets[i + 1] - offsets[i]};
  }
};

template <typename T>
class Tape;

/// Handle to a matrix stored on a tape.
template <typename T>
class Value {
 public:
  Value() = default;

  Index rows() const { return data().rows(); }
  Index cols() const { return data().cols(); }
  const Matrix<T>& data() const;
  /// Accumulated gradient; only available after Tape::backward.
  const Matrix<T>& grad() const;
  bool requires_grad() const;
  bool is_leaf() const { return !node().has_value(); }
  /// Id of the node that produced this value, empty for leaves.
  std::optional<std::size_t> node() const;
  /// Scalar content of a 1x1 value.
  T item() const;

  Tape<T>* tape() const { return tape_; }
  std::size_t id() const { return id_; }

 private:
  friend class Tape<T>;
  Value(Tape<T>* tape, std::size_t id) : tape_(tape), id_(id) {}

  Tape<T>* tape_ = nullptr;
  std::size_t id_ = 0;
};

template <typename T>
class Tape {
 public:
  /// Called with the id of the node's output once its gradient is complete.
  using BackwardRule = std::function<void(Tape&, std::size_t output)>;

  Tape() = default;
  Tape(const Tape&) = delete;
  Tape& operator=(const Tape&) = delete;

  Value<T> leaf(Matrix<T> data, bool requires_grad = true);
  Value<T> constant(Matrix<T> data) { return leaf(std::move(data), false); }

  /// Propagates d(loss)/d(value) to every value that requires a gradient.
  /// A tape can be consumed once.
  void backward(const Value<T>& loss);

  std::size_t node_count() const { return nodes_.size(); }
  std::size_t value_count() const { return slots_.size(); }
  bool consumed() const { return consumed_; }

  const Matrix<T>& data(std::size_t id) const { return slots_.at(id).data; }
  const Matrix<T>& grad(std::size_t id) const;
  bool requires_grad(std::size_t id) const { return slots_.at(id).requires_grad; }
  std::optional<std::size_t> node_of(std::size_t id) const { return slots_.at(id).node; }

  /// Inputs of node `node`, in the order the op received them.
  std::span<const std::size_t> node_inputs(std::size_t node) const { return nodes_.at(node).inputs; }

  // Used by op implementations.
  Value<T> record(OpKind kind, std::vector<std::size_t> inputs, Matrix<T> output, BackwardRule rule);
  /// Adds `delta` into the gradient of `id` when that value requires one.
  template <typename Expr>
  void accumulate(std::size_t id, const Expr& delta);
  const Matrix<T>& output_grad(std::size_t id) const { return slots_[id].grad; }

 private:
  struct Slot {
    Matrix<T> data;
    Matrix<T> grad;
    bool requires_grad = false;
    std::optional<std::size_t> node;
  };
  struct Node {
    OpKind kind;
    std::vector<std::size_t> inputs;
    std::size_t output;
    BackwardRule rule;
  };

  std::deque<Slot> slots_;
  std::vector<Node> nodes_;
  bool consumed_ = false;
};

template <typename T>
template <typename Expr>
void Tape<T>::accumulate(std::size_t id, const Expr& delta) {
  Slot& slot = slots_[id];
  if (!slot.requires_grad) return;
  if (slot.grad.size() == 0) {
    slot.grad = delta;
  } else {
    slot.grad += delta;
  }
}

// Operations. Every binary op requires both operands on the same tape.

template <typename T> Value<T> matmul(const Value<T>& a, const Value<T>& b);
/// a + b; b may also be a 1 x cols row vector or a rows x 1 column vector.
template <typename T> Value<T> add(const Value<T>& a, const Value<T>& b);
/// a - b with the same broadcasting rules as add.
template <typename T> Value<T> sub(const Value<T>& a, const Value<T>& b);
template <typename T> Value<T> scale(const Value<T>& a, T factor);
template <typename T> Value<T> add_scalar(const Value<T>& a, T offset);
template <typename T> Value<T> relu(const Value<T>& a);
/// Euclidean norm of every row, rows x 1.
template <typename T> Value<T> row_l2norm(const Value<T>& a);
/// Divides every row by its sum (plus kNormalizeGuard).
template <typename T> Value<T> row_normalize(const Value<T>& a);
template <typename T> Value<T> hadamard(const Value<T>& a, const Value<T>& b);
/// Sum of squared entries, 1 x 1.
template <typename T> Value<T> frobenius_sq(const Value<T>& a);
template <typename T> Value<T> sum(const Value<T>& a);
template <typename T> Value<T> log(const Value<T>& a);
template <typename T> Value<T> transpose(const Value<T>& a);
/// Reinterprets the row-major buffer with a new shape of equal size.
template <typename T> Value<T> reshape(const Value<T>& a, Index rows, Index cols);
/// out.row(i) = a.row(index[i]).
template <typename T>
Value<T> gather_rows(const Value<T>& a, std::shared_ptr<const std::vector<std::size_t>> index);
/// out.row(g) = mean of the rows of `a` assigned to group g.
template <typename T>
Value<T> scatter_mean(const Value<T>& a, std::shared_ptr<const GroupIndex> groups);
/// out.row(i) = mean of the rows of `a` listed in neighborhood row i.
template <typename T>
Value<T> masked_mean_filter(const Value<T>& a, std::shared_ptr<const RowNeighborhood> neighborhood);

/// Result of comparing analytic gradients with central finite differences.
struct GradCheckResult {
  double max_rel_error = 0.0;
  bool finite = true;
  std::size_t worst_leaf = 0;
  Index worst_entry = 0;

  bool passed(double tolerance) const { return finite && max_rel_error < tolerance; }
};

using LossBuilder = std::function<Value<double>(Tape<double>&, std::span<const Value<double>>)>;

/// Max over leaves and entries of |analytic - numeric| / max(1, |numeric|).
/// A NaN on either side stops the scan and is reported through `finite`
/// with the offending leaf and entry.
GradCheckResult grad_check(const LossBuilder& build, std::span<const Matrix<double>> leaves,
                           double step = 1e-5);

}  // namespace scdsc::ad
