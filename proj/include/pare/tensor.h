#pragma once

#include <cstddef>
#include <cstdint>
#include <memory>
#include <span>
#include <string>
#include <vector>

namespace pare {

using Shape = std::vector<std::size_t>;

std::size_t shape_numel(const Shape& shape);
std::string shape_str(const Shape& shape);

// Identifies a node on a specific gradient tape. `tape` is the serial of the
// owning Tape so stale ids from a destroyed tape are never matched.
struct NodeRef {
  std::uint64_t tape = 0;
  std::int64_t id = -1;

  bool valid() const { return id >= 0; }
};

// Dense row-major float64 tensor. Storage is shared and immutable; copying a
// Tensor is cheap and never aliases a mutable buffer.
class Tensor {
 public:
  Tensor();
  explicit Tensor(Shape shape);
  Tensor(Shape shape, std::vector<double> data);

  static Tensor scalar(double value);
  static Tensor full(Shape shape, double value);
  static Tensor vector(std::vector<double> values);

  const Shape& shape() const noexcept { return shape_; }
  std::size_t rank() const noexcept { return shape_.size(); }
  std::size_t dim(std::size_t axis) const;
  std::size_t numel() const noexcept { return data_ ? data_->size() : 0; }

  std::span<const double> data() const noexcept;
  std::vector<double> to_vector() const;
  double operator[](std::size_t i) const { return (*data_)[i]; }
  double at(std::size_t row, std::size_t col) const;
  double item() const;

  // Tape participation.
  const NodeRef& node() const noexcept { return node_; }
  void set_node(NodeRef node) noexcept { node_ = node; }
  bool tracked() const noexcept { return node_.valid(); }
  Tensor detached() const;

  bool all_finite() const;

 private:
  Shape shape_;
  std::shared_ptr<const std::vector<double>> data_;
  NodeRef node_;
};

// Same shape and identical bit patterns.
bool bitwise_equal(const Tensor& a, const Tensor& b);
double max_abs_diff(const Tensor& a, const Tensor& b);

}  // namespace pare
