#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <random>
#include <vector>

#include <Eigen/Core>

namespace contraj {

/// Seeded random generator with portable value transforms. std::mt19937_64
/// supplies the bit stream; the floating-point mappings are done by hand so
/// the same seed yields the same values on every platform.
class Rng {
 public:
  explicit Rng(std::uint64_t seed) : gen_(seed) {}

  std::uint64_t bits() { return gen_(); }

  /// Uniform in [0, 1).
  double uniform() { return static_cast<double>(gen_() >> 11) * 0x1.0p-53; }

  double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }

  /// Standard normal via Box-Muller.
  double normal() {
    if (have_spare_) {
      have_spare_ = false;
      return spare_;
    }
    double u1 = uniform();
    double u2 = uniform();
    while (u1 <= 1e-300) u1 = uniform();
    const double r = std::sqrt(-2.0 * std::log(u1));
    const double a = 2.0 * M_PI * u2;
    spare_ = r * std::sin(a);
    have_spare_ = true;
    return r * std::cos(a);
  }

  /// Uniform integer in [0, n).
  int index(int n) { return static_cast<int>(gen_() % static_cast<std::uint64_t>(n)); }

  Eigen::VectorXd uniform_vector(int n, double lo, double hi) {
    Eigen::VectorXd v(n);
    for (int i = 0; i < n; ++i) v[i] = uniform(lo, hi);
    return v;
  }

  Eigen::VectorXd normal_vector(int n) {
    Eigen::VectorXd v(n);
    for (int i = 0; i < n; ++i) v[i] = normal();
    return v;
  }

  /// k distinct indices drawn uniformly from [0, n), in draw order.
  std::vector<int> distinct_indices(int k, int n) {
    std::vector<int> pool(n);
    for (int i = 0; i < n; ++i) pool[i] = i;
    std::vector<int> out;
    out.reserve(k);
    for (int i = 0; i < k && !pool.empty(); ++i) {
      const int j = index(static_cast<int>(pool.size()));
      out.push_back(pool[j]);
      pool.erase(pool.begin() + j);
    }
    return out;
  }

  /// Uniform point in the d-ball of the given radius.
  Eigen::VectorXd in_ball(int d, double radius) {
    Eigen::VectorXd dir = normal_vector(d);
    const double n = dir.norm();
    if (n < 1e-12) return Eigen::VectorXd::Zero(d);
    const double r = radius * std::pow(uniform(), 1.0 / d);
    return dir * (r / n);
  }

 private:
  std::mt19937_64 gen_;
  bool have_spare_ = false;
  double spare_ = 0.0;
};

}  // namespace contraj
