#include "villa/optim.hpp"

#include <cmath>
#include <sstream>

namespace villa {

void TrainHyper::validate() const {
  if (!(lr > 0.0)) throw Error(ErrorKind::InvalidArgument, "learning rate must be positive");
  if (batch_size < 1) throw Error(ErrorKind::InvalidArgument, "batch size must be >= 1");
  if (epochs < 0) throw Error(ErrorKind::InvalidArgument, "epochs must be >= 0");
}

std::string TrainHyper::describe() const {
  std::ostringstream ss;
  ss.precision(17);
  ss << "lr=" << lr << ";batch=" << batch_size << ";epochs=" << epochs << ";seed=" << seed
     << ";opt=" << (optimizer == OptimizerKind::Adam ? "adam" : "sgd") << ";b1=" << beta1 << ";b2=" << beta2
     << ";eps=" << eps;
  return ss.str();
}

Optimizer::Optimizer(const TrainHyper& hyper, Eigen::Index n_params)
    : hyper_(hyper), m_(Vec::Zero(n_params)), v_(Vec::Zero(n_params)) {}

void Optimizer::step(Vec& params, const Vec& grad) {
  ++t_;
  if (hyper_.optimizer == OptimizerKind::Sgd) {
    params -= hyper_.lr * grad;
    return;
  }
  m_ = hyper_.beta1 * m_ + (1.0 - hyper_.beta1) * grad;
  v_ = hyper_.beta2 * v_ + (1.0 - hyper_.beta2) * grad.cwiseProduct(grad);
  const double c1 = 1.0 - std::pow(hyper_.beta1, static_cast<double>(t_));
  const double c2 = 1.0 - std::pow(hyper_.beta2, static_cast<double>(t_));
  params.array() -= hyper_.lr * (m_.array() / c1) / ((v_.array() / c2).sqrt() + hyper_.eps);
}

}  // namespace villa
