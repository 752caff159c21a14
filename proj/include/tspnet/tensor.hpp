#pragma once

#include <cstddef>
#include <functional>
#include <initializer_list>
#include <memory>
#include <span>
#include <string>
#include <vector>

namespace tspnet {

#ifdef TSPNET_SINGLE_PRECISION
using Real = float;
inline constexpr const char* kRealName = "f32";
#else
using Real = double;
inline constexpr const char* kRealName = "f64";
#endif

using Shape = std::vector<std::size_t>;

std::size_t shape_numel(const Shape& shape);
std::string shape_to_string(const Shape& shape);

/// Enables NaN/Inf checks on every op output. Defaults to on in debug builds.
void set_finite_checks(bool enabled);
bool finite_checks_enabled();

/// Dense row-major array with an optional gradient buffer.
///
/// Tensor is a handle: copies share storage. Parameters are held by the model
/// and by every tape that references them, so gradients written during
/// backward land on the model's tensors. Use clone() for a deep copy.
class Tensor {
 public:
  Tensor() = default;

  static Tensor zeros(Shape shape, bool requires_grad = false);
  static Tensor full(Shape shape, Real value, bool requires_grad = false);
  static Tensor from(Shape shape, std::vector<Real> values, bool requires_grad = false);
  static Tensor scalar(Real value, bool requires_grad = false);
  /// Row-major matrix from nested rows; all rows must have equal length.
  static Tensor matrix(std::initializer_list<std::initializer_list<Real>> rows,
                       bool requires_grad = false);

  bool defined() const { return impl_ != nullptr; }
  const Shape& shape() const;
  std::size_t rank() const { return shape().size(); }
  std::size_t numel() const;
  /// Row count of a rank-2 tensor.
  std::size_t rows() const;
  /// Column count of a rank-2 tensor.
  std::size_t cols() const;

  std::span<Real> data();
  std::span<const Real> data() const;
  Real item() const;
  Real at(std::size_t r, std::size_t c) const;
  Real& at(std::size_t r, std::size_t c);

  bool requires_grad() const;
  void set_requires_grad(bool value);

  bool has_grad() const;
  /// Gradient buffer, allocated (zero-filled) on first access. Writable
  /// through any handle, since backward accumulates into shared storage.
  std::span<Real> grad() const;
  void zero_grad();

  Tensor clone() const;
  /// True when both handles refer to the same storage.
  bool same(const Tensor& other) const { return impl_ == other.impl_; }

 private:
  struct Impl;
  std::shared_ptr<Impl> impl_;
};

/// Ordered record of differentiable operations.
///
/// Ops executed while a tape is current (see TapeScope) and that touch a
/// tensor requiring grad are appended in execution order. backward() walks
/// the record in exact reverse, then releases it; a tape supports one
/// backward pass. Tapes are not thread-safe and the current tape is
/// thread-local.
class Tape {
 public:
  using BackwardFn = std::function<void()>;

  Tape() = default;
  Tape(const Tape&) = delete;
  Tape& operator=(const Tape&) = delete;

  static Tape* current();

  void record(Tensor output, BackwardFn backward);
  /// Seeds d(loss)/d(loss) = 1 and propagates. loss must be a one-element
  /// tensor recorded on this tape.
  void backward(const Tensor& loss);

  bool consumed() const { return consumed_; }
  std::size_t size() const { return entries_.size(); }

 private:
  struct Entry {
    Tensor output;
    BackwardFn backward;
  };
  std::vector<Entry> entries_;
  bool consumed_ = false;
};

/// Makes `tape` current for the calling thread for the scope's lifetime.
class TapeScope {
 public:
  explicit TapeScope(Tape& tape);
  ~TapeScope();
  TapeScope(const TapeScope&) = delete;
  TapeScope& operator=(const TapeScope&) = delete;

 private:
  Tape* previous_;
};

/// Suspends recording for the calling thread (inference, parameter updates).
class NoGradScope {
 public:
  NoGradScope();
  ~NoGradScope();
  NoGradScope(const NoGradScope&) = delete;
  NoGradScope& operator=(const NoGradScope&) = delete;

 private:
  Tape* previous_;
};

}  // namespace tspnet
