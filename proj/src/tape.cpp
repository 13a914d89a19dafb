#include "pare/tape.h"

#include <atomic>

#include "pare/error.h"

namespace pare {
namespace {

thread_local Tape* g_active_tape = nullptr;
std::atomic<std::uint64_t> g_next_serial{1};

}  // namespace

Tape::Tape() : serial_(g_next_serial.fetch_add(1)), previous_(g_active_tape) {
  g_active_tape = this;
}

Tape::~Tape() { g_active_tape = previous_; }

Tape* Tape::active() noexcept { return g_active_tape; }

Tensor Tape::watch(const Tensor& value) {
  Node node;
  node.numel = value.numel();
  node.leaf = true;
  nodes_.push_back(std::move(node));
  Tensor out = value.detached();
  out.set_node(NodeRef{serial_, static_cast<std::int64_t>(nodes_.size() - 1)});
  return out;
}

NodeRef Tape::record(const Shape& shape, std::vector<NodeRef> inputs, BackwardFn backward,
                     bool stop) {
  Node node;
  node.numel = shape_numel(shape);
  node.backward = std::move(backward);
  node.stop = stop;
  node.inputs.reserve(inputs.size());
  for (const NodeRef& ref : inputs) {
    node.inputs.push_back(ref.tape == serial_ ? ref.id : -1);
  }
  nodes_.push_back(std::move(node));
  return NodeRef{serial_, static_cast<std::int64_t>(nodes_.size() - 1)};
}

std::vector<std::int64_t> Tape::stop_markers() const {
  std::vector<std::int64_t> out;
  for (std::size_t i = 0; i < nodes_.size(); ++i) {
    if (nodes_[i].stop) out.push_back(static_cast<std::int64_t>(i));
  }
  return out;
}

Gradients Tape::backward(const Tensor& loss) const {
  if (loss.numel() != 1) {
    throw ContractError("backward: loss must be scalar, got shape " + shape_str(loss.shape()));
  }
  if (loss.node().tape != serial_ || !loss.tracked()) {
    throw ContractError("backward: loss is not attached to this tape");
  }
  std::vector<GradBuffer> grads(nodes_.size());
  grads[static_cast<std::size_t>(loss.node().id)].assign(1, 1.0);

  std::vector<GradBuffer*> inputs;
  for (std::int64_t n = loss.node().id; n >= 0; --n) {
    const Node& node = nodes_[static_cast<std::size_t>(n)];
    GradBuffer& g = grads[static_cast<std::size_t>(n)];
    if (g.empty() || node.leaf || node.stop) continue;
    inputs.assign(node.inputs.size(), nullptr);
    for (std::size_t k = 0; k < node.inputs.size(); ++k) {
      std::int64_t id = node.inputs[k];
      if (id < 0) continue;
      GradBuffer& gi = grads[static_cast<std::size_t>(id)];
      if (gi.empty()) gi.assign(nodes_[static_cast<std::size_t>(id)].numel, 0.0);
      inputs[k] = &gi;
    }
    node.backward(g, inputs);
    // Interior buffers are no longer needed once propagated.
    GradBuffer().swap(g);
  }

  Gradients out;
  out.tape_ = serial_;
  for (std::size_t n = 0; n < nodes_.size(); ++n) {
    if (nodes_[n].leaf && !grads[n].empty()) {
      out.leaf_grads_.emplace(static_cast<std::int64_t>(n), std::move(grads[n]));
    }
  }
  return out;
}

Tensor Gradients::of(const Tensor& leaf) const {
  if (leaf.node().tape == tape_) {
    auto it = leaf_grads_.find(leaf.node().id);
    if (it != leaf_grads_.end()) return Tensor(leaf.shape(), it->second);
  }
  return Tensor(leaf.shape());
}

bool Gradients::reached(const Tensor& leaf) const {
  return leaf.node().tape == tape_ && leaf_grads_.count(leaf.node().id) > 0;
}

}  // namespace pare
