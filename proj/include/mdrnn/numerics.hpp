#pragma once

#include <cstddef>
#include <cstdint>
#include <limits>
#include <span>
#include <stdexcept>
#include <string>
#include <string_view>
#include <vector>

namespace mdrnn {

/// Raised when a NaN or infinity escapes a public operation, or when training
/// diverges.
class NumericalError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

std::size_t shape_volume(std::span<const std::size_t> shape);

/// Dense row-major tensor of doubles.
class Tensor {
 public:
  Tensor() = default;
  explicit Tensor(std::vector<std::size_t> shape, double fill = 0.0);
  Tensor(std::vector<std::size_t> shape, std::vector<double> values);

  const std::vector<std::size_t>& shape() const { return shape_; }
  std::size_t rank() const { return shape_.size(); }
  std::size_t dim(std::size_t axis) const { return shape_.at(axis); }
  std::size_t size() const { return data_.size(); }
  bool empty() const { return data_.empty(); }

  double* data() { return data_.data(); }
  const double* data() const { return data_.data(); }
  std::span<double> values() { return data_; }
  std::span<const double> values() const { return data_; }

  double& operator[](std::size_t i) { return data_[i]; }
  double operator[](std::size_t i) const { return data_[i]; }

  void fill(double value);
  bool all_finite() const;

  /// Exact (bitwise for finite values) comparison of shape and contents.
  friend bool operator==(const Tensor&, const Tensor&) = default;

 private:
  std::vector<std::size_t> shape_;
  std::vector<double> data_;
};

/// Throws NumericalError naming `what` if any entry is NaN or infinite.
void ensure_finite(std::span<const double> values, std::string_view what);
inline void ensure_finite(const Tensor& t, std::string_view what) {
  ensure_finite(t.values(), what);
}

/// Counter-based generator: the n-th draw of a stream is a pure function of
/// (key, n), so streams derived by name never interfere with one another.
class Rng {
 public:
  explicit Rng(std::uint64_t seed);

  /// Independent generator keyed by (this stream's key, name). Does not
  /// advance this generator.
  Rng stream(std::string_view name) const;

  std::uint64_t next_u64();
  /// Uniform on [0, 1).
  double uniform();
  /// Standard normal via Box-Muller; consumes two draws.
  double normal();
  bool bernoulli(double p);
  /// Uniform integer in [0, n).
  std::size_t below(std::size_t n);

  std::uint64_t key() const { return key_; }
  std::uint64_t counter() const { return counter_; }

 private:
  Rng(std::uint64_t key, std::uint64_t counter) : key_(key), counter_(counter) {}

  std::uint64_t key_;
  std::uint64_t counter_ = 0;
};

/// Fills `t` with i.i.d. Normal(mean, stddev^2) draws. Throws
/// std::invalid_argument if stddev <= 0.
void gaussian_fill(Tensor& t, double mean, double stddev, Rng& rng);

/// Tensor of 0/1 entries, each 1 with probability p in (0, 1].
Tensor bernoulli_mask(std::vector<std::size_t> shape, double p, Rng& rng);

/// log(sum(exp(v))) with max-shifting. Entries may be -inf. Throws on an
/// empty input.
double log_sum_exp(std::span<const double> values);

/// Two-argument form used in tight recursions.
double log_add(double a, double b);

inline constexpr double kLogZero = -std::numeric_limits<double>::infinity();

}  // namespace mdrnn
