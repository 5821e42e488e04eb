#pragma once

#include <Eigen/Dense>

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <optional>
#include <span>
#include <sstream>
#include <string>
#include <tuple>
#include <type_traits>
#include <utility>
#include <vector>

#include "lpres/errors.hpp"
#include "lpres/rng.hpp"

namespace lpres {

/// Row-major dense matrix; rows index the batch, columns the features.
template <typename Scalar>
using Tensor = Eigen::Matrix<Scalar, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;

template <typename Scalar>
using RowVector = Eigen::Matrix<Scalar, 1, Eigen::Dynamic>;

using Mat = Tensor<double>;
using Vec = RowVector<double>;

template <typename Derived>
std::string shape_of(const Eigen::DenseBase<Derived>& t) {
  std::ostringstream os;
  os << '[' << t.rows() << "x" << t.cols() << ']';
  return os.str();
}

// ---------------------------------------------------------------------------
// Structural traversal of parameter aggregates.
//
// A parameter struct exposes `fields()` returning a tuple of references. Leaves
// are Eigen objects; std::vector and std::optional recurse elementwise.
// zip_fields applies `f` to corresponding leaves of several aggregates with
// identical structure.

namespace detail {

template <typename T>
concept HasFields = requires(T& t) { t.fields(); };

template <typename T>
struct is_vector : std::false_type {};
template <typename T, typename A>
struct is_vector<std::vector<T, A>> : std::true_type {};

template <typename T>
struct is_optional : std::false_type {};
template <typename T>
struct is_optional<std::optional<T>> : std::true_type {};

}  // namespace detail

template <typename F, typename First, typename... Rest>
void zip_fields(F&& f, First& first, Rest&... rest);

namespace detail {

template <std::size_t I, typename F, typename Heads>
void zip_column(F& f, Heads& heads) {
  std::apply([&](auto&... tuples) { zip_fields(f, std::get<I>(tuples)...); }, heads);
}

template <typename F, typename Heads, std::size_t... I>
void zip_columns(F& f, Heads& heads, std::index_sequence<I...>) {
  (zip_column<I>(f, heads), ...);
}

}  // namespace detail

template <typename F, typename First, typename... Rest>
void zip_fields(F&& f, First& first, Rest&... rest) {
  using Bare = std::remove_cvref_t<First>;
  if constexpr (detail::HasFields<First>) {
    auto heads = std::make_tuple(first.fields(), rest.fields()...);
    constexpr std::size_t n = std::tuple_size_v<std::remove_cvref_t<decltype(first.fields())>>;
    detail::zip_columns(f, heads, std::make_index_sequence<n>{});
  } else if constexpr (detail::is_vector<Bare>::value) {
    if (((rest.size() != first.size()) || ...)) throw DimensionError("zip_fields: list lengths differ");
    for (std::size_t i = 0; i < first.size(); ++i) zip_fields(f, first[i], rest[i]...);
  } else if constexpr (detail::is_optional<Bare>::value) {
    if (((rest.has_value() != first.has_value()) || ...)) {
      throw DimensionError("zip_fields: optional engagement differs");
    }
    if (first) zip_fields(f, *first, *rest...);
  } else {
    f(first, rest...);
  }
}

/// Number of scalars in a parameter aggregate.
template <typename P>
std::size_t parameter_count(const P& params) {
  std::size_t n = 0;
  zip_fields([&](const auto& t) { n += static_cast<std::size_t>(t.size()); }, params);
  return n;
}

/// A structurally identical aggregate filled with zeros.
template <typename P>
P zeros_like(const P& params) {
  P out = params;
  zip_fields([](auto& t) { t.setZero(); }, out);
  return out;
}

template <typename P>
bool all_finite(const P& params) {
  bool ok = true;
  zip_fields([&](const auto& t) { ok = ok && t.allFinite(); }, params);
  return ok;
}

// ---------------------------------------------------------------------------
// Differentiable primitives.

/// out[i,j] = sum_m x[i,m] W[m,j] + b[j]
template <typename Scalar>
Tensor<Scalar> affine(const Tensor<Scalar>& x, const Tensor<Scalar>& W, const RowVector<Scalar>& b) {
  if (x.cols() != W.rows() || W.cols() != b.cols()) {
    throw DimensionError("affine: x " + shape_of(x) + " W " + shape_of(W) + " b " + shape_of(b));
  }
  Tensor<Scalar> out = x * W;
  out.rowwise() += b;
  return out;
}

template <typename Derived>
typename Derived::PlainObject relu(const Eigen::MatrixBase<Derived>& x) {
  return x.cwiseMax(typename Derived::Scalar(0));
}

/// 1 where x > 0, else 0.
template <typename Derived>
typename Derived::PlainObject relu_mask(const Eigen::MatrixBase<Derived>& x) {
  using Scalar = typename Derived::Scalar;
  return x.unaryExpr([](Scalar v) { return v > Scalar(0) ? Scalar(1) : Scalar(0); });
}

template <typename Scalar>
struct LossAndGrad {
  Scalar loss;
  Tensor<Scalar> grad;
};

/// Mean cross-entropy of row-wise softmax, with gradient (softmax - onehot) / batch.
template <typename Scalar>
LossAndGrad<Scalar> softmax_cross_entropy(const Tensor<Scalar>& logits, std::span<const int> labels) {
  const Eigen::Index batch = logits.rows();
  const Eigen::Index classes = logits.cols();
  if (batch < 1) throw InputError("softmax_cross_entropy: empty batch");
  if (static_cast<Eigen::Index>(labels.size()) != batch) {
    throw DimensionError("softmax_cross_entropy: logits " + shape_of(logits) + " vs " +
                         std::to_string(labels.size()) + " labels");
  }
  LossAndGrad<Scalar> out{Scalar(0), Tensor<Scalar>(batch, classes)};
  for (Eigen::Index i = 0; i < batch; ++i) {
    const int label = labels[static_cast<std::size_t>(i)];
    if (label < 0 || label >= classes) {
      throw InputError("softmax_cross_entropy: label " + std::to_string(label) + " outside [0, " +
                       std::to_string(classes) + ")");
    }
    const Scalar row_max = logits.row(i).maxCoeff();
    auto shifted = (logits.row(i).array() - row_max).eval();
    auto expd = shifted.exp().eval();
    const Scalar total = expd.sum();
    out.loss += std::log(total) - shifted(label);
    out.grad.row(i) = expd / total;
    out.grad(i, label) -= Scalar(1);
  }
  const Scalar inv = Scalar(1) / static_cast<Scalar>(batch);
  out.loss *= inv;
  out.grad *= inv;
  return out;
}

template <typename Scalar>
std::vector<int> argmax_rows(const Tensor<Scalar>& logits) {
  std::vector<int> out(static_cast<std::size_t>(logits.rows()));
  for (Eigen::Index i = 0; i < logits.rows(); ++i) {
    Eigen::Index j = 0;
    logits.row(i).maxCoeff(&j);
    out[static_cast<std::size_t>(i)] = static_cast<int>(j);
  }
  return out;
}

/// Gaussian-filled tensor.
template <typename Scalar>
Tensor<Scalar> randn(Eigen::Index rows, Eigen::Index cols, SeededRng& rng, Scalar stddev = Scalar(1)) {
  Tensor<Scalar> out(rows, cols);
  for (Eigen::Index i = 0; i < out.size(); ++i) out.data()[i] = static_cast<Scalar>(rng.normal()) * stddev;
  return out;
}

// ---------------------------------------------------------------------------
// Finite-difference oracle.

/// Central differences of a scalar function of a tensor.
template <typename Scalar, typename F>
Tensor<Scalar> finite_diff_grad(F&& f, const Tensor<Scalar>& x, Scalar h) {
  if (!(h > Scalar(0))) throw InputError("finite_diff_grad: step must be positive");
  Tensor<Scalar> probe = x;
  Tensor<Scalar> grad(x.rows(), x.cols());
  for (Eigen::Index i = 0; i < x.size(); ++i) {
    const Scalar saved = probe.data()[i];
    probe.data()[i] = saved + h;
    const Scalar up = f(std::as_const(probe));
    probe.data()[i] = saved - h;
    const Scalar down = f(std::as_const(probe));
    probe.data()[i] = saved;
    grad.data()[i] = (up - down) / (Scalar(2) * h);
  }
  return grad;
}

/// Central differences of a nullary function with respect to a tensor it
/// reads by reference. The tensor is restored after each probe.
template <typename Derived, typename F>
typename Derived::PlainObject finite_diff_grad_inplace(F&& f, Eigen::PlainObjectBase<Derived>& x,
                                                       typename Derived::Scalar h) {
  using Scalar = typename Derived::Scalar;
  if (!(h > Scalar(0))) throw InputError("finite_diff_grad: step must be positive");
  typename Derived::PlainObject grad(x.rows(), x.cols());
  for (Eigen::Index i = 0; i < x.size(); ++i) {
    const Scalar saved = x.data()[i];
    x.data()[i] = saved + h;
    const Scalar up = f();
    x.data()[i] = saved - h;
    const Scalar down = f();
    x.data()[i] = saved;
    grad.data()[i] = (up - down) / (Scalar(2) * h);
  }
  return grad;
}

/// ||a - b|| / max(||a||, ||b||), with a floor on the denominator so that two
/// vanishing gradients compare as equal.
template <typename A, typename B>
double relative_error(const Eigen::MatrixBase<A>& a, const Eigen::MatrixBase<B>& b, double floor = 1e-8) {
  const double diff = (a - b).norm();
  const double scale = std::max({a.norm(), b.norm(), floor});
  return diff / scale;
}

}  // namespace lpres
