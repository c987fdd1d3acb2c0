#include "contraj/ad.hpp"

#include <cmath>
#include <utility>

#include "contraj/errors.hpp"

namespace contraj::ad {

double unary_value(UnaryFn fn, double x, double knee) {
  switch (fn) {
    case UnaryFn::Softplus:
      return x > 30.0 ? x : std::log1p(std::exp(x));
    case UnaryFn::Sigmoid:
      return 1.0 / (1.0 + std::exp(-x));
    case UnaryFn::SigmoidDeriv: {
      const double s = 1.0 / (1.0 + std::exp(-x));
      return s * (1.0 - s);
    }
    case UnaryFn::Tanh:
      return std::tanh(x);
    case UnaryFn::Relu:
      return x > 0.0 ? x : 0.0;
    case UnaryFn::SmoothRelu:
      if (x <= 0.0) return 0.0;
      if (x >= knee) return x - 0.5 * knee;
      return x * x / (2.0 * knee);
    case UnaryFn::SmoothReluDeriv:
      if (x <= 0.0) return 0.0;
      if (x >= knee) return 1.0;
      return x / knee;
    case UnaryFn::Square:
      return x * x;
    case UnaryFn::Recip:
      return 1.0 / x;
  }
  return 0.0;
}

double unary_deriv(UnaryFn fn, double x, double knee) {
  switch (fn) {
    case UnaryFn::Softplus:
      return 1.0 / (1.0 + std::exp(-x));
    case UnaryFn::Sigmoid: {
      const double s = 1.0 / (1.0 + std::exp(-x));
      return s * (1.0 - s);
    }
    case UnaryFn::SigmoidDeriv: {
      const double s = 1.0 / (1.0 + std::exp(-x));
      return s * (1.0 - s) * (1.0 - 2.0 * s);
    }
    case UnaryFn::Tanh: {
      const double t = std::tanh(x);
      return 1.0 - t * t;
    }
    case UnaryFn::Relu:
      return x > 0.0 ? 1.0 : 0.0;
    case UnaryFn::SmoothRelu:
      if (x <= 0.0) return 0.0;
      if (x >= knee) return 1.0;
      return x / knee;
    case UnaryFn::SmoothReluDeriv:
      return (x > 0.0 && x < knee) ? 1.0 / knee : 0.0;
    case UnaryFn::Square:
      return 2.0 * x;
    case UnaryFn::Recip:
      return -1.0 / (x * x);
  }
  return 0.0;
}

void Tape::reset() { nodes_.clear(); }

Var Tape::push(Eigen::MatrixXd value, bool requires_grad, std::function<void(Tape&)> pull) {
  Node n;
  n.value = std::move(value);
  n.requires_grad = requires_grad;
  n.pull = std::move(pull);
  nodes_.push_back(std::move(n));
  return Var{static_cast<int>(nodes_.size()) - 1};
}

Eigen::MatrixXd& Tape::grad_buf(int id) {
  Node& n = nodes_[id];
  if (!n.touched) {
    n.grad.setZero(n.value.rows(), n.value.cols());
    n.touched = true;
  }
  return n.grad;
}

void Tape::backward(Var target) {
  if (!target.valid()) throw ContractError("backward: invalid target");
  if (nodes_[target.id].value.size() != 1) throw ContractError("backward: target must be scalar");
  for (Node& n : nodes_) n.touched = false;
  grad_buf(target.id).setConstant(1.0);
  for (int i = target.id; i >= 0; --i) {
    Node& n = nodes_[i];
    if (n.touched && n.pull) n.pull(*this);
  }
}

Var Tape::constant(const Eigen::MatrixXd& value) { return push(value, false, nullptr); }

Var Tape::leaf(const Eigen::MatrixXd& value) { return push(value, true, nullptr); }

Var Tape::add(Var a, Var b) {
  const int id = size();
  const bool rg = requires_grad(a) || requires_grad(b);
  std::function<void(Tape&)> pull;
  if (rg) {
    pull = [id, a, b](Tape& t) {
      const Eigen::MatrixXd& g = t.nodes_[id].grad;
      if (t.requires_grad(a)) t.grad_buf(a.id) += g;
      if (t.requires_grad(b)) t.grad_buf(b.id) += g;
    };
  }
  return push(val(a) + val(b), rg, std::move(pull));
}

Var Tape::sub(Var a, Var b) {
  const int id = size();
  const bool rg = requires_grad(a) || requires_grad(b);
  std::function<void(Tape&)> pull;
  if (rg) {
    pull = [id, a, b](Tape& t) {
      const Eigen::MatrixXd& g = t.nodes_[id].grad;
      if (t.requires_grad(a)) t.grad_buf(a.id) += g;
      if (t.requires_grad(b)) t.grad_buf(b.id) -= g;
    };
  }
  return push(val(a) - val(b), rg, std::move(pull));
}

Var Tape::scale(Var a, double s) {
  const int id = size();
  const bool rg = requires_grad(a);
  std::function<void(Tape&)> pull;
  if (rg) {
    pull = [id, a, s](Tape& t) { t.grad_buf(a.id) += s * t.nodes_[id].grad; };
  }
  return push(val(a) * s, rg, std::move(pull));
}

Var Tape::add_const(Var a, const Eigen::MatrixXd& c) {
  const int id = size();
  const bool rg = requires_grad(a);
  std::function<void(Tape&)> pull;
  if (rg) {
    pull = [id, a](Tape& t) { t.grad_buf(a.id) += t.nodes_[id].grad; };
  }
  return push(val(a) + c, rg, std::move(pull));
}

Var Tape::matmul(Var a, Var b) {
  const int id = size();
  const bool rg = requires_grad(a) || requires_grad(b);
  std::function<void(Tape&)> pull;
  if (rg) {
    pull = [id, a, b](Tape& t) {
      const Eigen::MatrixXd& g = t.nodes_[id].grad;
      if (t.requires_grad(a)) t.grad_buf(a.id).noalias() += g * t.val(b).transpose();
      if (t.requires_grad(b)) t.grad_buf(b.id).noalias() += t.val(a).transpose() * g;
    };
  }
  Eigen::MatrixXd out;
  out.noalias() = val(a) * val(b);
  return push(std::move(out), rg, std::move(pull));
}

Var Tape::matmul_tn(Var a, Var b) {
  const int id = size();
  const bool rg = requires_grad(a) || requires_grad(b);
  std::function<void(Tape&)> pull;
  if (rg) {
    pull = [id, a, b](Tape& t) {
      const Eigen::MatrixXd& g = t.nodes_[id].grad;
      if (t.requires_grad(a)) t.grad_buf(a.id).noalias() += t.val(b) * g.transpose();
      if (t.requires_grad(b)) t.grad_buf(b.id).noalias() += t.val(a) * g;
    };
  }
  Eigen::MatrixXd out;
  out.noalias() = val(a).transpose() * val(b);
  return push(std::move(out), rg, std::move(pull));
}

Var Tape::colwise_add(Var mat, Var bias) {
  const int id = size();
  const bool rg = requires_grad(mat) || requires_grad(bias);
  std::function<void(Tape&)> pull;
  if (rg) {
    pull = [id, mat, bias](Tape& t) {
      const Eigen::MatrixXd& g = t.nodes_[id].grad;
      if (t.requires_grad(mat)) t.grad_buf(mat.id) += g;
      if (t.requires_grad(bias)) t.grad_buf(bias.id) += g.rowwise().sum();
    };
  }
  Eigen::MatrixXd out = val(mat);
  out.colwise() += Eigen::VectorXd(val(bias));
  return push(std::move(out), rg, std::move(pull));
}

Var Tape::cwise_mul(Var a, Var b) {
  const int id = size();
  const bool rg = requires_grad(a) || requires_grad(b);
  std::function<void(Tape&)> pull;
  if (rg) {
    pull = [id, a, b](Tape& t) {
      const Eigen::MatrixXd& g = t.nodes_[id].grad;
      if (t.requires_grad(a)) t.grad_buf(a.id).array() += g.array() * t.val(b).array();
      if (t.requires_grad(b)) t.grad_buf(b.id).array() += g.array() * t.val(a).array();
    };
  }
  return push(val(a).cwiseProduct(val(b)), rg, std::move(pull));
}

Var Tape::rowbcast_mul(Var mat, Var row) {
  const int id = size();
  const bool rg = requires_grad(mat) || requires_grad(row);
  std::function<void(Tape&)> pull;
  if (rg) {
    pull = [id, mat, row](Tape& t) {
      const Eigen::MatrixXd& g = t.nodes_[id].grad;
      if (t.requires_grad(mat)) {
        t.grad_buf(mat.id).array() +=
            g.array().rowwise() * t.val(row).row(0).array();
      }
      if (t.requires_grad(row)) {
        t.grad_buf(row.id) += (g.cwiseProduct(t.val(mat))).colwise().sum();
      }
    };
  }
  Eigen::MatrixXd out = val(mat);
  out.array().rowwise() *= val(row).row(0).array();
  return push(std::move(out), rg, std::move(pull));
}

Var Tape::unary(Var a, UnaryFn fn, double knee) {
  const int id = size();
  const bool rg = requires_grad(a);
  std::function<void(Tape&)> pull;
  if (rg) {
    pull = [id, a, fn, knee](Tape& t) {
      const Eigen::MatrixXd& g = t.nodes_[id].grad;
      const Eigen::MatrixXd& x = t.val(a);
      Eigen::MatrixXd& ga = t.grad_buf(a.id);
      for (Eigen::Index j = 0; j < x.cols(); ++j)
        for (Eigen::Index i = 0; i < x.rows(); ++i)
          ga(i, j) += g(i, j) * unary_deriv(fn, x(i, j), knee);
    };
  }
  const Eigen::MatrixXd& x = val(a);
  Eigen::MatrixXd out(x.rows(), x.cols());
  for (Eigen::Index j = 0; j < x.cols(); ++j)
    for (Eigen::Index i = 0; i < x.rows(); ++i) out(i, j) = unary_value(fn, x(i, j), knee);
  return push(std::move(out), rg, std::move(pull));
}

Var Tape::cwise_max_scalar(Var a, double floor) {
  const int id = size();
  const bool rg = requires_grad(a);
  std::function<void(Tape&)> pull;
  if (rg) {
    pull = [id, a, floor](Tape& t) {
      const Eigen::MatrixXd& g = t.nodes_[id].grad;
      const Eigen::MatrixXd& x = t.val(a);
      t.grad_buf(a.id).array() +=
          g.array() * (x.array() > floor).template cast<double>();
    };
  }
  return push(val(a).cwiseMax(floor), rg, std::move(pull));
}

Var Tape::colsum(Var a) {
  const int id = size();
  const bool rg = requires_grad(a);
  std::function<void(Tape&)> pull;
  if (rg) {
    pull = [id, a](Tape& t) {
      const Eigen::MatrixXd& g = t.nodes_[id].grad;
      Eigen::MatrixXd& ga = t.grad_buf(a.id);
      ga.array().rowwise() += g.row(0).array();
    };
  }
  Eigen::MatrixXd out = val(a).colwise().sum();
  return push(std::move(out), rg, std::move(pull));
}

Var Tape::sum_all(Var a) {
  const int id = size();
  const bool rg = requires_grad(a);
  std::function<void(Tape&)> pull;
  if (rg) {
    pull = [id, a](Tape& t) {
      t.grad_buf(a.id).array() += t.nodes_[id].grad(0, 0);
    };
  }
  Eigen::MatrixXd out(1, 1);
  out(0, 0) = val(a).sum();
  return push(std::move(out), rg, std::move(pull));
}

Var Tape::sumsq(Var a) {
  const int id = size();
  const bool rg = requires_grad(a);
  std::function<void(Tape&)> pull;
  if (rg) {
    pull = [id, a](Tape& t) {
      t.grad_buf(a.id) += (2.0 * t.nodes_[id].grad(0, 0)) * t.val(a);
    };
  }
  Eigen::MatrixXd out(1, 1);
  out(0, 0) = val(a).squaredNorm();
  return push(std::move(out), rg, std::move(pull));
}

Var Tape::sumsq_diff(Var a, const Eigen::MatrixXd& c) {
  const int id = size();
  const bool rg = requires_grad(a);
  std::function<void(Tape&)> pull;
  if (rg) {
    pull = [id, a, c](Tape& t) {
      t.grad_buf(a.id) += (2.0 * t.nodes_[id].grad(0, 0)) * (t.val(a) - c);
    };
  }
  Eigen::MatrixXd out(1, 1);
  out(0, 0) = (val(a) - c).squaredNorm();
  return push(std::move(out), rg, std::move(pull));
}

Var Tape::rows(Var a, int first, int count) {
  const int id = size();
  const bool rg = requires_grad(a);
  std::function<void(Tape&)> pull;
  if (rg) {
    pull = [id, a, first, count](Tape& t) {
      t.grad_buf(a.id).middleRows(first, count) += t.nodes_[id].grad;
    };
  }
  return push(val(a).middleRows(first, count), rg, std::move(pull));
}

Var Tape::concat_rows(const std::vector<Var>& parts) {
  const int id = size();
  bool rg = false;
  Eigen::Index total = 0;
  const Eigen::Index cols = val(parts.front()).cols();
  for (Var p : parts) {
    rg = rg || requires_grad(p);
    total += val(p).rows();
  }
  Eigen::MatrixXd out(total, cols);
  Eigen::Index at = 0;
  for (Var p : parts) {
    out.middleRows(at, val(p).rows()) = val(p);
    at += val(p).rows();
  }
  std::function<void(Tape&)> pull;
  if (rg) {
    pull = [id, parts](Tape& t) {
      const Eigen::MatrixXd& g = t.nodes_[id].grad;
      Eigen::Index at2 = 0;
      for (Var p : parts) {
        const Eigen::Index r = t.val(p).rows();
        if (t.requires_grad(p)) t.grad_buf(p.id) += g.middleRows(at2, r);
        at2 += r;
      }
    };
  }
  return push(std::move(out), rg, std::move(pull));
}

Var Tape::append_const_row(Var a, double value) {
  const int id = size();
  const bool rg = requires_grad(a);
  const Eigen::MatrixXd& x = val(a);
  Eigen::MatrixXd out(x.rows() + 1, x.cols());
  out.topRows(x.rows()) = x;
  out.row(x.rows()).setConstant(value);
  std::function<void(Tape&)> pull;
  if (rg) {
    const int r = static_cast<int>(x.rows());
    pull = [id, a, r](Tape& t) {
      t.grad_buf(a.id) += t.nodes_[id].grad.topRows(r);
    };
  }
  return push(std::move(out), rg, std::move(pull));
}

Var Tape::tile_cols(Var v, int n) {
  const int id = size();
  const bool rg = requires_grad(v);
  std::function<void(Tape&)> pull;
  if (rg) {
    pull = [id, v](Tape& t) {
      t.grad_buf(v.id) += t.nodes_[id].grad.rowwise().sum();
    };
  }
  return push(val(v).replicate(1, n), rg, std::move(pull));
}

Var Tape::gather_cols(Var bank, std::vector<int> idx) {
  const int id = size();
  const bool rg = requires_grad(bank);
  const Eigen::MatrixXd& b = val(bank);
  Eigen::MatrixXd out(b.rows(), static_cast<Eigen::Index>(idx.size()));
  for (std::size_t j = 0; j < idx.size(); ++j) out.col(j) = b.col(idx[j]);
  std::function<void(Tape&)> pull;
  if (rg) {
    pull = [id, bank, idx = std::move(idx)](Tape& t) {
      const Eigen::MatrixXd& g = t.nodes_[id].grad;
      Eigen::MatrixXd& gb = t.grad_buf(bank.id);
      for (std::size_t j = 0; j < idx.size(); ++j) gb.col(idx[j]) += g.col(j);
    };
  }
  return push(std::move(out), rg, std::move(pull));
}

Var Tape::flatten_cols(Var a) {
  const int id = size();
  const bool rg = requires_grad(a);
  const Eigen::MatrixXd& x = val(a);
  Eigen::MatrixXd out = Eigen::Map<const Eigen::MatrixXd>(x.data(), x.size(), 1);
  std::function<void(Tape&)> pull;
  if (rg) {
    const Eigen::Index r = x.rows(), c = x.cols();
    pull = [id, a, r, c](Tape& t) {
      const Eigen::MatrixXd& g = t.nodes_[id].grad;
      t.grad_buf(a.id) += Eigen::Map<const Eigen::MatrixXd>(g.data(), r, c);
    };
  }
  return push(std::move(out), rg, std::move(pull));
}

Var Tape::segment(Var v, int off, int n) {
  const int id = size();
  const bool rg = requires_grad(v);
  std::function<void(Tape&)> pull;
  if (rg) {
    pull = [id, v, off, n](Tape& t) {
      t.grad_buf(v.id).block(off, 0, n, 1) += t.nodes_[id].grad;
    };
  }
  return push(val(v).block(off, 0, n, 1), rg, std::move(pull));
}

Var Tape::reshape_rowmajor(Var v, int off, int rows, int cols) {
  const int id = size();
  const bool rg = requires_grad(v);
  using RowMajorMap =
      Eigen::Map<const Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>>;
  Eigen::MatrixXd out = RowMajorMap(val(v).data() + off, rows, cols);
  std::function<void(Tape&)> pull;
  if (rg) {
    pull = [id, v, off, rows, cols](Tape& t) {
      const Eigen::MatrixXd& g = t.nodes_[id].grad;
      Eigen::MatrixXd& gv = t.grad_buf(v.id);
      using RowMajorMutable =
          Eigen::Map<Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>>;
      RowMajorMutable(gv.data() + off, rows, cols) += g;
    };
  }
  return push(std::move(out), rg, std::move(pull));
}

}  // namespace contraj::ad
