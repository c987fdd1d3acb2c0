#pragma once

#include <Eigen/Core>

namespace contraj {

/// Adam with bias correction. propose() returns the step the optimizer would
/// take for a gradient without mutating its state; step() takes it for real.
class Adam {
 public:
  struct Options {
    double lr = 1e-3;
    double beta1 = 0.9;
    double beta2 = 0.999;
    double eps = 1e-8;
  };

  Adam() = default;
  Adam(int n, Options opt) : opt_(opt) { reset(n); }

  void reset(int n) {
    m_.setZero(n);
    v_.setZero(n);
    t_ = 0;
  }

  const Options& options() const { return opt_; }
  void set_lr(double lr) { opt_.lr = lr; }

  /// Update to add to the parameters (already negated).
  Eigen::VectorXd propose(const Eigen::VectorXd& grad) const {
    const long t = t_ + 1;
    Eigen::VectorXd m = opt_.beta1 * m_ + (1.0 - opt_.beta1) * grad;
    Eigen::VectorXd v = opt_.beta2 * v_.array().matrix() +
                        (1.0 - opt_.beta2) * grad.array().square().matrix();
    const double c1 = 1.0 - std::pow(opt_.beta1, static_cast<double>(t));
    const double c2 = 1.0 - std::pow(opt_.beta2, static_cast<double>(t));
    return (-opt_.lr * (m.array() / c1) / ((v.array() / c2).sqrt() + opt_.eps)).matrix();
  }

  void step(Eigen::Ref<Eigen::VectorXd> params, const Eigen::VectorXd& grad) {
    ++t_;
    m_ = opt_.beta1 * m_ + (1.0 - opt_.beta1) * grad;
    v_ = (opt_.beta2 * v_.array() + (1.0 - opt_.beta2) * grad.array().square()).matrix();
    const double c1 = 1.0 - std::pow(opt_.beta1, static_cast<double>(t_));
    const double c2 = 1.0 - std::pow(opt_.beta2, static_cast<double>(t_));
    params.array() -= opt_.lr * (m_.array() / c1) / ((v_.array() / c2).sqrt() + opt_.eps);
  }

 private:
  Options opt_;
  Eigen::VectorXd m_;
  Eigen::VectorXd v_;
  long t_ = 0;
};

}  // namespace contraj
