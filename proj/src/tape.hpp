#pragma once

#include "common.hpp"

#include <functional>
#include <utility>
#include <vector>

namespace cocn {

class Tape;

// Lightweight handle to a tape node.
class Var {
 public:
  Var() = default;
  Var(Tape* tape, int id) : tape_(tape), id_(id) {}

  const Matrix& value() const;
  const Matrix& grad() const;
  bool requires_grad() const;
  Eigen::Index rows() const { return value().rows(); }
  Eigen::Index cols() const { return value().cols(); }
  Tape* tape() const { return tape_; }
  int id() const { return id_; }
  explicit operator bool() const { return tape_ != nullptr; }

 private:
  Tape* tape_ = nullptr;
  int id_ = -1;
};

// Reverse-mode tape over dense matrices. Nodes are appended in forward order;
// backward() replays them in exact reverse order, accumulating gradients into
// each node before its own backward closure runs.
class Tape {
 public:
  Var input(Matrix value, bool requires_grad);
  Var constant(Matrix value) { return input(std::move(value), false); }

  // Appends a node computed from inputs; requires_grad is inherited from any
  // input that requires it. The closure receives this tape.
  Var make(Matrix value, bool requires_grad,
           std::function<void(Tape&, int)> backward);

  const Matrix& value(int id) const { return nodes_[id].value; }
  bool requires_grad(int id) const { return nodes_[id].requires_grad; }

  // Lazily materialized zero gradient.
  Matrix& grad(int id);
  bool has_grad(int id) const { return nodes_[id].grad_set; }
  void add_grad(int id, const Matrix& g);

  void backward(Var loss);
  void clear();
  size_t size() const { return nodes_.size(); }

 private:
  struct Node {
    Matrix value;
    Matrix grad_mat;
    bool requires_grad = false;
    bool grad_set = false;
    std::function<void(Tape&, int)> backward;
  };
  std::vector<Node> nodes_;

  friend class Var;
};

inline const Matrix& Var::value() const { return tape_->value(id_); }
inline const Matrix& Var::grad() const {
  return const_cast<Tape*>(tape_)->grad(id_);
}
inline bool Var::requires_grad() const { return tape_->requires_grad(id_); }

}  // namespace cocn
