#include "tape.hpp"

namespace cocn {

Var Tape::input(Matrix value, bool requires_grad) {
  Node n;
  n.value = std::move(value);
  n.requires_grad = requires_grad;
  nodes_.push_back(std::move(n));
  return Var(this, static_cast<int>(nodes_.size()) - 1);
}

Var Tape::make(Matrix value, bool requires_grad,
               std::function<void(Tape&, int)> backward) {
  Node n;
  n.value = std::move(value);
  n.requires_grad = requires_grad;
  if (requires_grad) n.backward = std::move(backward);
  nodes_.push_back(std::move(n));
  return Var(this, static_cast<int>(nodes_.size()) - 1);
}

Matrix& Tape::grad(int id) {
  Node& n = nodes_[id];
  if (!n.grad_set) {
    n.grad_mat = Matrix::Zero(n.value.rows(), n.value.cols());
    n.grad_set = true;
  }
  return n.grad_mat;
}

void Tape::add_grad(int id, const Matrix& g) {
  Matrix& dst = grad(id);
  if (dst.rows() != g.rows() || dst.cols() != g.cols())
    throw DimensionError("gradient shape " + shape_str(g.rows(), g.cols()) +
                         " does not match value shape " +
                         shape_str(dst.rows(), dst.cols()));
  dst += g;
}

void Tape::backward(Var loss) {
  if (loss.tape() != this) throw DimensionError("loss var from another tape");
  const Matrix& lv = value(loss.id());
  if (lv.rows() != 1 || lv.cols() != 1)
    throw DimensionError("backward expects a scalar loss, got " +
                         shape_str(lv.rows(), lv.cols()));
  grad(loss.id()).setConstant(1.0);
  for (int id = loss.id(); id >= 0; id--) {
    Node& n = nodes_[id];
    if (n.requires_grad && n.grad_set && n.backward) n.backward(*this, id);
  }
}

void Tape::clear() { nodes_.clear(); }

}  // namespace cocn
