#pragma once

#include <cstdint>
#include <string>

#include "villa/common.hpp"

namespace villa {

enum class OptimizerKind { Adam, Sgd };

struct TrainHyper {
  double lr = 1e-4;
  int batch_size = 48;
  int epochs = 30;
  std::uint64_t seed = 1;
  OptimizerKind optimizer = OptimizerKind::Adam;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;

  void validate() const;
  std::string describe() const;
};

// Adam or plain SGD over a flat parameter vector.
class Optimizer {
 public:
  Optimizer(const TrainHyper& hyper, Eigen::Index n_params);
  void step(Vec& params, const Vec& grad);
  long steps() const { return t_; }

 private:
  TrainHyper hyper_;
  Vec m_, v_;
  long t_ = 0;
};

}  // namespace villa
