#include "dcnt/tensor.hpp"

#include <algorithm>
#include <cmath>
#include <unordered_set>

#include "dcnt/errors.hpp"

namespace dcnt::ad {
namespace {

thread_local std::uint64_t next_id = 0;
thread_local bool grad_mode = true;

std::shared_ptr<Node> new_node(std::string op, Shape shape, std::vector<double> value, bool requires_grad) {
  auto node = std::make_shared<Node>();
  if (value.size() != shape_numel(shape)) {
    throw ContractError(op + ": value count " + std::to_string(value.size()) + " does not match shape " +
                        shape_str(shape));
  }
  node->shape = std::move(shape);
  node->value = std::move(value);
  node->requires_grad = requires_grad;
  node->id = next_id++;
  node->op = std::move(op);
  return node;
}

// Nodes reachable from root, sorted by descending id.
std::vector<Node*> reverse_tape(const Node& root) {
  std::vector<Node*> order;
  std::unordered_set<const Node*> seen;
  std::vector<Node*> stack{const_cast<Node*>(&root)};
  seen.insert(&root);
  while (!stack.empty()) {
    Node* n = stack.back();
    stack.pop_back();
    order.push_back(n);
    for (auto& in : n->inputs) {
      if (seen.insert(in.get()).second) stack.push_back(in.get());
    }
  }
  std::sort(order.begin(), order.end(), [](const Node* a, const Node* b) { return a->id > b->id; });
  return order;
}

}  // namespace

std::size_t shape_numel(const Shape& shape) {
  std::size_t n = 1;
  for (auto e : shape) n *= e;
  return n;
}

std::string shape_str(const Shape& shape) {
  std::string s = "(";
  for (std::size_t i = 0; i < shape.size(); ++i) {
    if (i) s += ",";
    s += std::to_string(shape[i]);
  }
  return s + ")";
}

Tensor Tensor::zeros(Shape shape, bool requires_grad) { return full(std::move(shape), 0.0, requires_grad); }

Tensor Tensor::full(Shape shape, double value, bool requires_grad) {
  const auto n = shape_numel(shape);
  return Tensor(new_node("leaf", std::move(shape), std::vector<double>(n, value), requires_grad));
}

Tensor Tensor::from(Shape shape, std::vector<double> values, bool requires_grad) {
  return Tensor(new_node("leaf", std::move(shape), std::move(values), requires_grad));
}

Tensor Tensor::scalar(double value, bool requires_grad) { return from({}, {value}, requires_grad); }

double Tensor::item() const {
  if (numel() != 1) throw ContractError("item() on tensor of shape " + shape_str(shape()));
  return node_->value[0];
}

void Tensor::zero_grad() {
  if (!node_->grad.empty()) std::fill(node_->grad.begin(), node_->grad.end(), 0.0);
}

Tensor Tensor::detach() const { return Tensor(new_node("detach", node_->shape, node_->value, false)); }

NoGradGuard::NoGradGuard() : previous_(grad_mode) { grad_mode = false; }
NoGradGuard::~NoGradGuard() { grad_mode = previous_; }

bool grad_enabled() { return grad_mode; }

Tensor make_result(std::string op, Shape shape, std::vector<double> value, std::vector<Tensor> inputs,
                   std::function<void(Node&)> backward) {
  bool needs = false;
  if (grad_mode) {
    for (const auto& in : inputs) needs = needs || in.requires_grad();
  }
  auto node = new_node(std::move(op), std::move(shape), std::move(value), needs);
  if (needs) {
    node->inputs.reserve(inputs.size());
    for (auto& in : inputs) node->inputs.push_back(in.node_ptr());
    node->backward = std::move(backward);
  }
  return Tensor(std::move(node));
}

void backward(const Tensor& loss) {
  if (!loss.defined() || loss.numel() != 1) {
    throw ContractError("backward needs a scalar loss, got shape " +
                        (loss.defined() ? shape_str(loss.shape()) : std::string("undefined")));
  }
  if (!loss.requires_grad()) throw ContractError("backward: loss is not on the tape");
  auto order = reverse_tape(loss.node());
  for (Node* n : order) {
    if (n->backward) n->grad.assign(n->value.size(), 0.0);
  }
  loss.node().ensure_grad()[0] += 1.0;
  for (Node* n : order) {
    if (n->backward && n->requires_grad) n->backward(*n);
  }
}

std::string find_nonfinite(const Tensor& root) {
  auto order = reverse_tape(root.node());
  std::reverse(order.begin(), order.end());
  for (const Node* n : order) {
    for (double v : n->value) {
      if (!std::isfinite(v)) return n->op;
    }
  }
  return {};
}

}  // namespace dcnt::ad
