#include "adam.hpp"

#include <cmath>

namespace cocn {

void adam_step(Parameter& p, const Matrix& grad, const AdamConfig& cfg) {
  if (grad.rows() != p.value.rows() || grad.cols() != p.value.cols())
    throw DimensionError("adam_step: gradient " +
                         shape_str(grad.rows(), grad.cols()) +
                         " vs parameter " +
                         shape_str(p.value.rows(), p.value.cols()));
  p.step++;
  if (cfg.weight_decay != 0.0) p.value *= (1.0 - cfg.lr * cfg.weight_decay);
  p.m = cfg.beta1 * p.m + (1.0 - cfg.beta1) * grad;
  p.v = cfg.beta2 * p.v + (1.0 - cfg.beta2) * grad.cwiseProduct(grad);
  double bc1 = 1.0 - std::pow(cfg.beta1, static_cast<double>(p.step));
  double bc2 = 1.0 - std::pow(cfg.beta2, static_cast<double>(p.step));
  Matrix mhat = p.m / bc1;
  Matrix vhat = p.v / bc2;
  p.value.array() -=
      cfg.lr * mhat.array() / (vhat.array().sqrt() + cfg.eps);
}

Matrix uniform_init(Eigen::Index rows, Eigen::Index cols, Eigen::Index fan_in,
                    std::mt19937_64& rng) {
  double bound = std::sqrt(6.0 / static_cast<double>(std::max<Eigen::Index>(
                                     fan_in, 1)));
  std::uniform_real_distribution<double> u(-bound, bound);
  Matrix m(rows, cols);
  for (Eigen::Index i = 0; i < m.size(); i++) m.data()[i] = u(rng);
  return m;
}

}  // namespace cocn
