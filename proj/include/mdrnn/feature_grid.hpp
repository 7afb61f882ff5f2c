#pragma once

#include <cstddef>
#include <span>
#include <stdexcept>

#include "mdrnn/kernels.hpp"
#include "mdrnn/numerics.hpp"

namespace mdrnn {

/// H x W grid of D-dimensional feature vectors, stored (row, column, feature)
/// row-major. Width is the reading direction.
class FeatureGrid {
 public:
  FeatureGrid() = default;
  FeatureGrid(std::size_t height, std::size_t width, std::size_t depth, double fill = 0.0)
      : values_({height, width, depth}, fill) {
    if (height == 0 || width == 0 || depth == 0)
      throw std::invalid_argument("FeatureGrid extents must be positive");
  }
  explicit FeatureGrid(Tensor values) : values_(std::move(values)) {
    if (values_.rank() != 3 || values_.size() == 0)
      throw std::invalid_argument("FeatureGrid needs a non-empty rank-3 tensor");
  }

  std::size_t height() const { return values_.empty() ? 0 : values_.dim(0); }
  std::size_t width() const { return values_.empty() ? 0 : values_.dim(1); }
  std::size_t depth() const { return values_.empty() ? 0 : values_.dim(2); }
  std::size_t cells() const { return height() * width(); }
  bool empty() const { return values_.empty(); }

  double& at(std::size_t i, std::size_t j, std::size_t d) {
    return values_[(i * width() + j) * depth() + d];
  }
  double at(std::size_t i, std::size_t j, std::size_t d) const {
    return values_[(i * width() + j) * depth() + d];
  }
  double* cell(std::size_t i, std::size_t j) { return values_.data() + (i * width() + j) * depth(); }
  const double* cell(std::size_t i, std::size_t j) const {
    return values_.data() + (i * width() + j) * depth();
  }

  std::span<double> values() { return values_.values(); }
  std::span<const double> values() const { return values_.values(); }
  const Tensor& tensor() const { return values_; }
  Tensor& tensor() { return values_; }

  /// cells x depth view.
  kernels::Mat matrix() { return {values_.data(), cells(), depth()}; }
  kernels::ConstMat matrix() const { return {values_.data(), cells(), depth()}; }

  bool same_shape(const FeatureGrid& o) const {
    return height() == o.height() && width() == o.width() && depth() == o.depth();
  }

  friend bool operator==(const FeatureGrid&, const FeatureGrid&) = default;

 private:
  Tensor values_;
};

}  // namespace mdrnn
