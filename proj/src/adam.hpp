#pragma once

#include "common.hpp"

#include <random>
#include <string>
#include <vector>

namespace cocn {

// A trainable tensor with Adam moment state.
struct Parameter {
  std::string name;
  Matrix value;
  Matrix m, v;  // first/second moments, zero-initialized
  long step = 0;

  Parameter() = default;
  Parameter(std::string n, Matrix val)
      : name(std::move(n)),
        value(std::move(val)),
        m(Matrix::Zero(value.rows(), value.cols())),
        v(Matrix::Zero(value.rows(), value.cols())) {}
};

struct AdamConfig {
  double lr = 1e-3;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
  double weight_decay = 0.0;
};

// Standard Adam with decoupled weight decay applied multiplicatively before
// the moment update.
void adam_step(Parameter& p, const Matrix& grad, const AdamConfig& cfg);

// Uniform in +/- sqrt(6 / fan_in).
Matrix uniform_init(Eigen::Index rows, Eigen::Index cols, Eigen::Index fan_in,
                    std::mt19937_64& rng);

}  // namespace cocn
