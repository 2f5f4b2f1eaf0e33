#include "s2t/tensor.hpp"

#include <sstream>

namespace s2t {

std::string shape_str(const Shape& shape) {
  std::ostringstream os;
  os << '[';
  for (std::size_t i = 0; i < shape.size(); ++i) {
    if (i) os << 'x';
    os << shape[i];
  }
  os << ']';
  return os.str();
}

Index shape_numel(const Shape& shape) {
  Index n = 1;
  for (Index e : shape) n *= e;
  return n;
}

namespace {
thread_local bool g_grad_enabled = true;
}

bool grad_enabled() { return g_grad_enabled; }
void set_grad_enabled(bool on) { g_grad_enabled = on; }

template <typename Scalar>
Graph<Scalar>& Graph<Scalar>::current() {
  thread_local Graph graph;
  return graph;
}

template <typename Scalar>
void Graph<Scalar>::backward(const Tensor<Scalar>& loss) {
  if (!loss.defined() || loss.numel() != 1) {
    throw ContractError("backward: loss must be a scalar, got shape " +
                        (loss.defined() ? shape_str(loss.shape()) : std::string("<undefined>")));
  }
  if (!loss.requires_grad()) throw ContractError("backward: loss does not depend on any parameter");

  if (loss.is_leaf()) {
    Tensor<Scalar> leaf = loss;
    leaf.grad()[0] += Scalar(1);
    return;
  }

  std::size_t end = nodes_.size();
  while (end > 0 && nodes_[end - 1].output != loss.data()) --end;
  if (end == 0) throw ContractError("backward: loss was not recorded on this thread's graph");

  for (std::size_t i = 0; i < end; ++i) std::vector<Scalar>().swap(nodes_[i].output->grad);
  nodes_[end - 1].output->grad.assign(1, Scalar(1));

  for (std::size_t i = end; i-- > 0;) {
    if (nodes_[i].output->grad.empty()) continue;
    nodes_[i].backward();
  }
}

template class Graph<float>;
template class Graph<double>;

}  // namespace s2t
