#pragma once

/**
 * Reverse-mode automatic differentiation over dense double matrices.
 *
 * A Tape records operations in creation order; since every op only
 * references earlier nodes, walking the tape backwards is a valid
 * topological order and backward() needs no graph search. Scalars are
 * 1x1 matrices, which lets the loss plumbing (odds transform, log-sigmoid
 * aggregation) live on the same tape as the sequence model.
 *
 * Gradients are exact and deterministic: same inputs, same bits.
 */

#include <Eigen/Dense>

#include <cmath>
#include <functional>
#include <vector>

#include "rpo/common.hpp"

namespace rpo {

using Mat = Eigen::MatrixXd;

struct Var {
  int idx = -1;
  bool valid() const { return idx >= 0; }
};

class Tape {
 public:
  // --------------------------------------------------------------------
  // Leaves
  // --------------------------------------------------------------------

  /// Constant input; no gradient is tracked through it.
  Var input(Mat value) { return push(std::move(value), false, {}); }

  Var scalar_input(double value) { return input(Mat::Constant(1, 1, value)); }

  /// Trainable leaf. The tape keeps a pointer back to the source tensor so
  /// callers can read out d(loss)/d(param) after backward().
  Var param(const Mat& source) {
    Var v = push(source, true, {});
    bindings_.push_back({&source, v.idx});
    return v;
  }

  // --------------------------------------------------------------------
  // Elementwise and linear algebra
  // --------------------------------------------------------------------

  Var add(Var a, Var b) {
    return unary_or_binary(a, b, val(a) + val(b), [this](Node& n, Var a, Var b) {
      if (needs_grad(a)) grad(a) += n.grad;
      if (needs_grad(b)) grad(b) += n.grad;
    });
  }

  Var sub(Var a, Var b) {
    return unary_or_binary(a, b, val(a) - val(b), [this](Node& n, Var a, Var b) {
      if (needs_grad(a)) grad(a) += n.grad;
      if (needs_grad(b)) grad(b) -= n.grad;
    });
  }

  Var hadamard(Var a, Var b) {
    return unary_or_binary(a, b, val(a).cwiseProduct(val(b)), [this](Node& n, Var a, Var b) {
      if (needs_grad(a)) grad(a) += n.grad.cwiseProduct(val(b));
      if (needs_grad(b)) grad(b) += n.grad.cwiseProduct(val(a));
    });
  }

  /// k*a + c, elementwise.
  Var affine(Var a, double k, double c) {
    Mat out = (val(a).array() * k + c).matrix();
    return make(std::move(out), {a}, [this, k](Node& n, const std::vector<Var>& in) {
      if (needs_grad(in[0])) grad(in[0]) += k * n.grad;
    });
  }

  Var matmul(Var a, Var b) {
    check_shapes(val(a).cols() == val(b).rows(), "matmul: inner dimension mismatch");
    Mat out = val(a) * val(b);
    return make(std::move(out), {a, b}, [this](Node& n, const std::vector<Var>& in) {
      if (needs_grad(in[0])) grad(in[0]).noalias() += n.grad * val(in[1]).transpose();
      if (needs_grad(in[1])) grad(in[1]).noalias() += val(in[0]).transpose() * n.grad;
    });
  }

  /// A * B^T without materializing the transpose.
  Var matmul_nt(Var a, Var b) {
    check_shapes(val(a).cols() == val(b).cols(), "matmul_nt: inner dimension mismatch");
    Mat out = val(a) * val(b).transpose();
    return make(std::move(out), {a, b}, [this](Node& n, const std::vector<Var>& in) {
      if (needs_grad(in[0])) grad(in[0]).noalias() += n.grad * val(in[1]);
      if (needs_grad(in[1])) grad(in[1]).noalias() += n.grad.transpose() * val(in[0]);
    });
  }

  /// X + broadcast of a 1xK row vector to every row.
  Var add_row_broadcast(Var x, Var row) {
    check_shapes(val(row).rows() == 1 && val(row).cols() == val(x).cols(),
                 "add_row_broadcast: row shape mismatch");
    Mat out = val(x).rowwise() + val(row).row(0);
    return make(std::move(out), {x, row}, [this](Node& n, const std::vector<Var>& in) {
      if (needs_grad(in[0])) grad(in[0]) += n.grad;
      if (needs_grad(in[1])) grad(in[1]) += n.grad.colwise().sum();
    });
  }

  Var slice_rows(Var x, int r0, int r1) {
    check_shapes(0 <= r0 && r0 < r1 && r1 <= val(x).rows(), "slice_rows: bad range");
    Mat out = val(x).middleRows(r0, r1 - r0);
    return make(std::move(out), {x}, [this, r0, r1](Node& n, const std::vector<Var>& in) {
      if (needs_grad(in[0])) grad(in[0]).middleRows(r0, r1 - r0) += n.grad;
    });
  }

  Var row(Var x, int r) { return slice_rows(x, r, r + 1); }

  Var vstack(const std::vector<Var>& rows) {
    require(!rows.empty(), "vstack: empty input");
    const auto cols = val(rows[0]).cols();
    Eigen::Index total = 0;
    for (Var r : rows) {
      check_shapes(val(r).cols() == cols, "vstack: column mismatch");
      total += val(r).rows();
    }
    Mat out(total, cols);
    Eigen::Index at = 0;
    for (Var r : rows) {
      out.middleRows(at, val(r).rows()) = val(r);
      at += val(r).rows();
    }
    return make(std::move(out), rows, [this](Node& n, const std::vector<Var>& in) {
      Eigen::Index at = 0;
      for (Var r : in) {
        if (needs_grad(r)) grad(r) += n.grad.middleRows(at, val(r).rows());
        at += val(r).rows();
      }
    });
  }

  /// Gather rows of an embedding table by token id.
  Var embed_rows(Var table, const std::vector<int>& ids) {
    const Mat& e = val(table);
    Mat out(static_cast<Eigen::Index>(ids.size()), e.cols());
    for (size_t i = 0; i < ids.size(); ++i) {
      check_shapes(ids[i] >= 0 && ids[i] < e.rows(), "embed_rows: id out of range");
      out.row(static_cast<Eigen::Index>(i)) = e.row(ids[i]);
    }
    return make(std::move(out), {table}, [this, ids](Node& n, const std::vector<Var>& in) {
      if (!needs_grad(in[0])) return;
      Mat& g = grad(in[0]);
      for (size_t i = 0; i < ids.size(); ++i)
        g.row(ids[i]) += n.grad.row(static_cast<Eigen::Index>(i));
    });
  }

  // --------------------------------------------------------------------
  // Nonlinearities
  // --------------------------------------------------------------------

  Var gelu(Var x) {
    const Mat& v = val(x);
    Mat out = v.unaryExpr([](double t) { return 0.5 * t * (1.0 + std::erf(t * M_SQRT1_2)); });
    return make(std::move(out), {x}, [this](Node& n, const std::vector<Var>& in) {
      if (!needs_grad(in[0])) return;
      const Mat& v = val(in[0]);
      Mat dx = v.unaryExpr([](double t) {
        const double cdf = 0.5 * (1.0 + std::erf(t * M_SQRT1_2));
        const double pdf = std::exp(-0.5 * t * t) / std::sqrt(2.0 * M_PI);
        return cdf + t * pdf;
      });
      grad(in[0]) += n.grad.cwiseProduct(dx);
    });
  }

  Var tanh_op(Var x) {
    Mat out = val(x).array().tanh().matrix();
    return make(std::move(out), {x}, [this](Node& n, const std::vector<Var>& in) {
      if (needs_grad(in[0]))
        grad(in[0]) += n.grad.cwiseProduct((1.0 - n.value.array().square()).matrix());
    });
  }

  Var sigmoid(Var x) {
    Mat out = val(x).unaryExpr([](double t) {
      return t >= 0 ? 1.0 / (1.0 + std::exp(-t)) : std::exp(t) / (1.0 + std::exp(t));
    });
    return make(std::move(out), {x}, [this](Node& n, const std::vector<Var>& in) {
      if (needs_grad(in[0]))
        grad(in[0]) += n.grad.cwiseProduct((n.value.array() * (1.0 - n.value.array())).matrix());
    });
  }

  /// Row-wise RMS normalization with a learned gain: y_r = x_r / rms(x_r) . gain
  Var rms_norm(Var x, Var gain, double eps = 1e-8) {
    const Mat& v = val(x);
    check_shapes(val(gain).rows() == 1 && val(gain).cols() == v.cols(), "rms_norm: gain shape");
    const Eigen::Index d = v.cols();
    Eigen::VectorXd rms(v.rows());
    for (Eigen::Index r = 0; r < v.rows(); ++r)
      rms(r) = std::sqrt(v.row(r).squaredNorm() / static_cast<double>(d) + eps);
    Mat normed = v.array().colwise() / rms.array();
    Mat out = normed.array().rowwise() * val(gain).row(0).array();
    return make(std::move(out), {x, gain},
                [this, rms = std::move(rms), normed = std::move(normed)](
                    Node& n, const std::vector<Var>& in) {
      const Mat& v = val(in[0]);
      const auto g_row = val(in[1]).row(0);
      const double d = static_cast<double>(v.cols());
      if (needs_grad(in[1])) grad(in[1]) += (n.grad.cwiseProduct(normed)).colwise().sum();
      if (needs_grad(in[0])) {
        Mat dy_g = n.grad.array().rowwise() * g_row.array();
        for (Eigen::Index r = 0; r < v.rows(); ++r) {
          const double inv = 1.0 / rms(r);
          const double dot = dy_g.row(r).dot(v.row(r));
          grad(in[0]).row(r) += dy_g.row(r) * inv - v.row(r) * (dot * inv * inv * inv / d);
        }
      }
    });
  }

  /// Row-wise softmax over the lower triangle (j <= i); strictly-upper
  /// entries are exactly zero, so position i never attends to the future.
  Var causal_row_softmax(Var scores) {
    const Mat& s = val(scores);
    check_shapes(s.rows() == s.cols(), "causal_row_softmax: square input expected");
    Mat out = Mat::Zero(s.rows(), s.cols());
    for (Eigen::Index i = 0; i < s.rows(); ++i) {
      const auto head = s.row(i).head(i + 1);
      const double m = head.maxCoeff();
      Eigen::RowVectorXd e = (head.array() - m).exp();
      out.row(i).head(i + 1) = e / e.sum();
    }
    return make(std::move(out), {scores}, [this](Node& n, const std::vector<Var>& in) {
      if (!needs_grad(in[0])) return;
      Mat& g = grad(in[0]);
      for (Eigen::Index i = 0; i < n.value.rows(); ++i) {
        const auto a = n.value.row(i).head(i + 1);
        const auto da = n.grad.row(i).head(i + 1);
        const double dot = da.dot(a);
        g.row(i).head(i + 1) += (da.array() - dot).matrix().cwiseProduct(a);
      }
    });
  }

  // --------------------------------------------------------------------
  // Losses and reductions
  // --------------------------------------------------------------------

  /// Per-row log P(target_r) under log-softmax of the logit rows.
  Var token_logprobs(Var logits, const std::vector<int>& targets) {
    const Mat& z = val(logits);
    check_shapes(static_cast<Eigen::Index>(targets.size()) == z.rows(),
                 "token_logprobs: one target per row expected");
    Mat probs(z.rows(), z.cols());
    Mat out(z.rows(), 1);
    for (Eigen::Index r = 0; r < z.rows(); ++r) {
      check_shapes(targets[static_cast<size_t>(r)] >= 0 &&
                       targets[static_cast<size_t>(r)] < z.cols(),
                   "token_logprobs: target id out of range");
      const double m = z.row(r).maxCoeff();
      Eigen::RowVectorXd e = (z.row(r).array() - m).exp();
      const double sum = e.sum();
      probs.row(r) = e / sum;
      out(r, 0) = z(r, targets[static_cast<size_t>(r)]) - (m + std::log(sum));
    }
    return make(std::move(out), {logits},
                [this, targets, probs = std::move(probs)](Node& n, const std::vector<Var>& in) {
      if (!needs_grad(in[0])) return;
      Mat& g = grad(in[0]);
      for (Eigen::Index r = 0; r < probs.rows(); ++r) {
        const double d = n.grad(r, 0);
        g.row(r) -= d * probs.row(r);
        g(r, targets[static_cast<size_t>(r)]) += d;
      }
    });
  }

  Var sum(Var x) {
    Mat out = Mat::Constant(1, 1, val(x).sum());
    return make(std::move(out), {x}, [this](Node& n, const std::vector<Var>& in) {
      if (needs_grad(in[0])) grad(in[0]).array() += n.grad(0, 0);
    });
  }

  Var mean(Var x) {
    const double inv = 1.0 / static_cast<double>(val(x).size());
    Mat out = Mat::Constant(1, 1, val(x).sum() * inv);
    return make(std::move(out), {x}, [this, inv](Node& n, const std::vector<Var>& in) {
      if (needs_grad(in[0])) grad(in[0]).array() += n.grad(0, 0) * inv;
    });
  }

  // --------------------------------------------------------------------
  // Scalar (1x1) helpers
  // --------------------------------------------------------------------

  Var s_exp(Var x) {
    Mat out = val(x).array().exp().matrix();
    return make(std::move(out), {x}, [this](Node& n, const std::vector<Var>& in) {
      if (needs_grad(in[0])) grad(in[0]) += n.grad.cwiseProduct(n.value);
    });
  }

  Var s_log(Var x) {
    Mat out = val(x).array().log().matrix();
    return make(std::move(out), {x}, [this](Node& n, const std::vector<Var>& in) {
      if (needs_grad(in[0])) grad(in[0]) += n.grad.cwiseQuotient(val(in[0]));
    });
  }

  /// log(sigmoid(x)) = -softplus(-x), numerically stable both tails.
  Var log_sigmoid(Var x) {
    Mat out = val(x).unaryExpr([](double t) {
      return t >= 0 ? -std::log1p(std::exp(-t)) : t - std::log1p(std::exp(t));
    });
    return make(std::move(out), {x}, [this](Node& n, const std::vector<Var>& in) {
      if (!needs_grad(in[0])) return;
      Mat ds = val(in[0]).unaryExpr([](double t) {
        return t >= 0 ? std::exp(-t) / (1.0 + std::exp(-t)) : 1.0 / (1.0 + std::exp(t));
      });
      grad(in[0]) += n.grad.cwiseProduct(ds);
    });
  }

  /// Clamp with zero gradient outside [lo, hi].
  Var clamp(Var x, double lo, double hi) {
    Mat out = val(x).array().max(lo).min(hi).matrix();
    return make(std::move(out), {x}, [this, lo, hi](Node& n, const std::vector<Var>& in) {
      if (!needs_grad(in[0])) return;
      const Mat& v = val(in[0]);
      Mat mask = ((v.array() >= lo) && (v.array() <= hi)).cast<double>().matrix();
      grad(in[0]) += n.grad.cwiseProduct(mask);
    });
  }

  /// Given x = log p (x < 0), return log(p / (1 - p)) = x - log(-expm1(x)).
  Var log_odds_from_logp(Var x) {
    Mat out = val(x).unaryExpr([](double t) { return t - std::log(-std::expm1(t)); });
    return make(std::move(out), {x}, [this](Node& n, const std::vector<Var>& in) {
      if (!needs_grad(in[0])) return;
      // d/dx [x - log(1 - e^x)] = 1 / (1 - e^x)
      Mat ds = val(in[0]).unaryExpr([](double t) { return 1.0 / (-std::expm1(t)); });
      grad(in[0]) += n.grad.cwiseProduct(ds);
    });
  }

  // --------------------------------------------------------------------
  // Access and backward
  // --------------------------------------------------------------------

  const Mat& val(Var v) const { return node(v).value; }
  double value(Var v) const {
    const Mat& m = val(v);
    check_shapes(m.size() == 1, "value: scalar expected");
    return m(0, 0);
  }

  /// Gradient of the last backward() target w.r.t. this node.
  const Mat& grad_of(Var v) const {
    require(ran_backward_, "grad_of: backward() has not run");
    return node(v).grad;
  }

  /// Run reverse-mode accumulation from a scalar loss recorded on this tape.
  void backward(Var loss) {
    if (!loss.valid() || static_cast<size_t>(loss.idx) >= nodes_.size())
      throw AuditError("backward: loss was not recorded on this tape");
    check_shapes(val(loss).size() == 1, "backward: loss must be scalar");
    for (auto& n : nodes_) n.grad.setZero(n.value.rows(), n.value.cols());
    nodes_[static_cast<size_t>(loss.idx)].grad(0, 0) = 1.0;
    for (int i = loss.idx; i >= 0; --i) {
      Node& n = nodes_[static_cast<size_t>(i)];
      if (n.backward && n.requires_grad) n.backward(n);
    }
    ran_backward_ = true;
  }

  /// Visit (source tensor, gradient) for every param leaf, in binding order.
  template <typename Fn>
  void for_each_param_grad(Fn&& fn) const {
    require(ran_backward_, "for_each_param_grad: backward() has not run");
    for (const auto& b : bindings_) fn(b.source, nodes_[static_cast<size_t>(b.node)].grad);
  }

  size_t size() const { return nodes_.size(); }

 private:
  struct Node {
    Mat value;
    Mat grad;
    std::vector<Var> inputs;
    std::function<void(Node&)> backward;
    bool requires_grad = false;
  };

  struct Binding {
    const Mat* source;
    int node;
  };

  static void check_shapes(bool ok, const char* msg) {
    if (!ok) throw AuditError(msg);
  }

  const Node& node(Var v) const {
    require(v.valid() && static_cast<size_t>(v.idx) < nodes_.size(), "invalid tape var");
    return nodes_[static_cast<size_t>(v.idx)];
  }

  bool needs_grad(Var v) const { return nodes_[static_cast<size_t>(v.idx)].requires_grad; }
  Mat& grad(Var v) { return nodes_[static_cast<size_t>(v.idx)].grad; }

  Var push(Mat value, bool requires_grad, std::function<void(Node&)> backward) {
    Node n;
    n.value = std::move(value);
    n.requires_grad = requires_grad;
    n.backward = std::move(backward);
    nodes_.push_back(std::move(n));
    return Var{static_cast<int>(nodes_.size()) - 1};
  }

  template <typename Fn>
  Var make(Mat value, std::vector<Var> inputs, Fn&& backward) {
    bool needs = false;
    for (Var v : inputs) {
      require(v.valid() && static_cast<size_t>(v.idx) < nodes_.size(), "op input not on tape");
      needs = needs || nodes_[static_cast<size_t>(v.idx)].requires_grad;
    }
    auto fn = [inputs, backward = std::forward<Fn>(backward)](Node& n) mutable {
      backward(n, inputs);
    };
    Var v = push(std::move(value), needs, needs ? std::function<void(Node&)>(fn) : nullptr);
    nodes_[static_cast<size_t>(v.idx)].inputs = std::move(inputs);
    return v;
  }

  template <typename Fn>
  Var unary_or_binary(Var a, Var b, Mat value, Fn&& backward) {
    check_shapes(val(a).rows() == val(b).rows() && val(a).cols() == val(b).cols(),
                 "elementwise op: shape mismatch");
    return make(std::move(value), {a, b},
                [backward = std::forward<Fn>(backward)](Node& n, const std::vector<Var>& in) mutable {
                  backward(n, in[0], in[1]);
                });
  }

  std::vector<Node> nodes_;
  std::vector<Binding> bindings_;
  bool ran_backward_ = false;
};

}  // namespace rpo
