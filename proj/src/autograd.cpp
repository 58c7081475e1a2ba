#include "ssd/autograd.hpp"

#include <algorithm>
#include <unordered_map>
#include <unordered_set>

#include "ssd/ops.hpp"

namespace ssd {
inline namespace SSD_PRECISION_NS {

namespace {

void accumulate(std::unordered_map<const void*, Tensor>& table, const void* key, const Tensor& g) {
  auto it = table.find(key);
  if (it == table.end()) {
    table.emplace(key, g);
  } else {
    it->second = add(it->second, g);
  }
}

}  // namespace

std::vector<Tensor> grad(const Tensor& loss, std::span<const Tensor> wrt, GradOptions options) {
  if (!loss.defined()) throw AutogradError("grad: loss is undefined");
  if (loss.numel() != 1) {
    throw AutogradError("grad: loss must be a scalar, got shape " + to_string(loss.shape()));
  }

  // Targets are keyed by their producing node (non-leaf) or their impl (leaf).
  std::unordered_set<const void*> leaf_targets;
  std::unordered_set<const TapeNode*> node_targets;
  for (const auto& t : wrt) {
    if (!t.defined()) throw AutogradError("grad: undefined tensor in wrt");
    if (t.is_leaf()) {
      leaf_targets.insert(t.impl());
    } else {
      node_targets.insert(t.grad_fn().get());
    }
  }

  // Reachable nodes, processed in reverse recording order.
  std::vector<TapeNode*> nodes;
  if (!loss.is_leaf()) {
    std::unordered_set<const TapeNode*> seen;
    std::vector<TapeNode*> stack{loss.grad_fn().get()};
    while (!stack.empty()) {
      TapeNode* node = stack.back();
      stack.pop_back();
      if (!seen.insert(node).second) continue;
      nodes.push_back(node);
      for (const auto& in : node->inputs) {
        if (in.requires_grad() && !in.is_leaf()) stack.push_back(in.grad_fn().get());
      }
    }
    std::sort(nodes.begin(), nodes.end(), [](const TapeNode* a, const TapeNode* b) { return a->seq > b->seq; });
  }

  // A node is needed when some target is reachable through it.
  std::unordered_set<const TapeNode*> needed;
  for (auto it = nodes.rbegin(); it != nodes.rend(); ++it) {
    const TapeNode* node = *it;
    bool need = node_targets.count(node) > 0;
    for (const auto& in : node->inputs) {
      if (!in.requires_grad()) continue;
      if (in.is_leaf() ? leaf_targets.count(in.impl()) > 0 : needed.count(in.grad_fn().get()) > 0) {
        need = true;
      }
    }
    if (need) needed.insert(node);
  }

  std::unordered_map<const void*, Tensor> grads;  // keyed by node or leaf impl
  GradModeGuard mode(options.create_graph);
  const Tensor seed = Tensor::full(loss.shape(), Real(1));
  if (loss.is_leaf()) {
    if (loss.requires_grad()) grads.emplace(loss.impl(), seed);
  } else {
    grads.emplace(loss.grad_fn().get(), seed);
  }

  for (TapeNode* node : nodes) {
    if (!needed.count(node)) continue;
    auto found = grads.find(node);
    if (found == grads.end()) continue;
    const Tensor grad_out = found->second;

    std::vector<bool> needs(node->inputs.size(), false);
    for (std::size_t i = 0; i < node->inputs.size(); ++i) {
      const auto& in = node->inputs[i];
      if (in.version() != node->saved_versions[i]) {
        throw AutogradError("grad: input " + std::to_string(i) + " of '" + node->op +
                            "' was modified after it was recorded; the tape is stale");
      }
      if (!in.requires_grad()) continue;
      needs[i] = in.is_leaf() ? leaf_targets.count(in.impl()) > 0 : needed.count(in.grad_fn().get()) > 0;
    }

    auto input_grads = node->backward(grad_out, needs);
    for (std::size_t i = 0; i < node->inputs.size(); ++i) {
      if (!needs[i]) continue;
      const auto& g = input_grads.at(i);
      if (!g.defined()) continue;
      const auto& in = node->inputs[i];
      if (g.shape() != in.shape()) {
        throw AutogradError("grad: backward of '" + node->op + "' produced shape " + to_string(g.shape()) +
                            " for input of shape " + to_string(in.shape()));
      }
      accumulate(grads, in.is_leaf() ? static_cast<const void*>(in.impl()) : in.grad_fn().get(), g);
    }
    // Non-target intermediate gradients are no longer needed.
    if (!node_targets.count(node)) grads.erase(node);
  }

  std::vector<Tensor> result;
  result.reserve(wrt.size());
  for (const auto& t : wrt) {
    const void* key = t.is_leaf() ? static_cast<const void*>(t.impl()) : t.grad_fn().get();
    auto it = grads.find(key);
    if (it != grads.end()) {
      result.push_back(options.create_graph ? it->second : it->second.detach());
    } else if (options.allow_unused) {
      result.push_back(Tensor::zeros(t.shape()));
    } else {
      throw AutogradError("grad: a requested tensor of shape " + to_string(t.shape()) +
                          " is not reachable from the loss");
    }
  }
  return result;
}

}  // namespace SSD_PRECISION_NS
}  // namespace ssd
