#pragma once

#include <cstdint>
#include <functional>
#include <span>
#include <unordered_map>
#include <vector>

#include "pare/tensor.h"

namespace pare {

class Gradients;

// Reverse-mode gradient tape. Constructing a Tape makes it the active tape of
// the calling thread until it is destroyed; tapes nest LIFO. One tape per
// training step, never shared across threads.
class Tape {
 public:
  using GradBuffer = std::vector<double>;
  // grad_in[k] is null when input k is not tracked on this tape.
  using BackwardFn =
      std::function<void(std::span<const double> grad_out, std::span<GradBuffer* const> grad_in)>;

  Tape();
  ~Tape();
  Tape(const Tape&) = delete;
  Tape& operator=(const Tape&) = delete;

  static Tape* active() noexcept;

  // Returns a copy of `value` registered as a leaf on this tape.
  Tensor watch(const Tensor& value);

  NodeRef record(const Shape& shape, std::vector<NodeRef> inputs, BackwardFn backward,
                 bool stop = false);

  // Loss must be a single-element tensor attached to this tape.
  Gradients backward(const Tensor& loss) const;

  std::uint64_t serial() const noexcept { return serial_; }
  std::size_t size() const noexcept { return nodes_.size(); }
  std::vector<std::int64_t> stop_markers() const;

 private:
  struct Node {
    std::vector<std::int64_t> inputs;
    std::size_t numel = 0;
    BackwardFn backward;
    bool leaf = false;
    bool stop = false;
  };

  std::uint64_t serial_;
  Tape* previous_;
  std::vector<Node> nodes_;
};

// Gradients of leaves reached by a backward pass.
class Gradients {
 public:
  // Zero tensor of the leaf's shape when the leaf was not reached.
  Tensor of(const Tensor& leaf) const;
  bool reached(const Tensor& leaf) const;

 private:
  friend class Tape;
  std::uint64_t tape_ = 0;
  std::unordered_map<std::int64_t, std::vector<double>> leaf_grads_;
};

}  // namespace pare
