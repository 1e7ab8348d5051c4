#pragma once

/**
 * Small causal sequence model with exact per-token log-probabilities.
 *
 * Two mixing-block flavors behind one config switch:
 *   - attention: single-head causal self-attention (default)
 *   - recurrent: gated recurrent mixer (forget gate + tanh candidate)
 *
 * Block layout: X += Mixer(RmsNorm(X)); X += Mlp(RmsNorm(X)); final
 * RmsNorm, then a linear head over the vocabulary. All math is double
 * precision.
 *
 * Training passes build a Tape graph (build_logprob_graph); generation
 * and scoring use a tape-free path (InferState with per-block caches,
 * score_tokens) that computes the same formulas.
 */

#include <Eigen/Dense>

#include <array>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <optional>
#include <string>
#include <unordered_map>
#include <vector>

#include "rpo/common.hpp"
#include "rpo/rng.hpp"
#include "rpo/tape.hpp"

namespace rpo {

enum class MixerKind { attention, recurrent };

struct ModelConfig {
  int vocab_size = 31;
  int d_model = 64;
  int n_blocks = 2;
  int context_len = 256;
  int mlp_hidden = 128;
  MixerKind mixer = MixerKind::attention;
  double init_std = 0.08;

  bool operator==(const ModelConfig&) const = default;
};

struct BlockParams {
  // Mixer. Attention uses wq/wk/wv/wo; recurrent uses wf/uf/wh/uh/bf/bh + wo.
  Mat wq, wk, wv, wo;
  Mat wf, uf, wh, uh;
  Mat bf, bh;
  // MLP.
  Mat w1, b1, w2, b2;
  // Norm gains.
  Mat g_mixer, g_mlp;
};

struct ModelParams {
  ModelConfig config;
  Mat embedding;   // V x d
  Mat positional;  // L x d
  std::vector<BlockParams> blocks;
  Mat g_final;     // 1 x d
  Mat w_out;       // d x V
  Mat b_out;       // 1 x V

  /// Visit every tensor in a fixed declaration order (checkpoint layout,
  /// gradient accumulation, and finite-difference probing all rely on it).
  template <typename Fn>
  void for_each_param(Fn&& fn) {
    fn("embedding", embedding);
    fn("positional", positional);
    for (size_t b = 0; b < blocks.size(); ++b) {
      const std::string p = "block" + std::to_string(b) + ".";
      auto& blk = blocks[b];
      if (config.mixer == MixerKind::attention) {
        fn(p + "wq", blk.wq);
        fn(p + "wk", blk.wk);
        fn(p + "wv", blk.wv);
      } else {
        fn(p + "wf", blk.wf);
        fn(p + "uf", blk.uf);
        fn(p + "bf", blk.bf);
        fn(p + "wh", blk.wh);
        fn(p + "uh", blk.uh);
        fn(p + "bh", blk.bh);
      }
      fn(p + "wo", blk.wo);
      fn(p + "w1", blk.w1);
      fn(p + "b1", blk.b1);
      fn(p + "w2", blk.w2);
      fn(p + "b2", blk.b2);
      fn(p + "g_mixer", blk.g_mixer);
      fn(p + "g_mlp", blk.g_mlp);
    }
    fn("g_final", g_final);
    fn("w_out", w_out);
    fn("b_out", b_out);
  }

  template <typename Fn>
  void for_each_param(Fn&& fn) const {
    const_cast<ModelParams*>(this)->for_each_param(
        [&](const std::string& name, Mat& m) { fn(name, const_cast<const Mat&>(m)); });
  }

  bool all_finite() const {
    bool ok = true;
    for_each_param([&](const std::string&, const Mat& m) { ok = ok && m.allFinite(); });
    return ok;
  }
};

inline ModelParams init_model(const ModelConfig& cfg, uint64_t seed) {
  ModelParams p;
  p.config = cfg;
  RngStream rng = RngStream::derive(seed, {0x6D6F64656CULL});
  auto randn = [&](Eigen::Index r, Eigen::Index c) {
    Mat m(r, c);
    for (Eigen::Index i = 0; i < r; ++i)
      for (Eigen::Index j = 0; j < c; ++j) m(i, j) = rng.normal() * cfg.init_std;
    return m;
  };
  const int d = cfg.d_model;
  p.embedding = randn(cfg.vocab_size, d);
  p.positional = randn(cfg.context_len, d);
  p.blocks.resize(static_cast<size_t>(cfg.n_blocks));
  for (auto& blk : p.blocks) {
    if (cfg.mixer == MixerKind::attention) {
      blk.wq = randn(d, d);
      blk.wk = randn(d, d);
      blk.wv = randn(d, d);
    } else {
      blk.wf = randn(d, d);
      blk.uf = randn(d, d);
      blk.bf = Mat::Zero(1, d);
      blk.wh = randn(d, d);
      blk.uh = randn(d, d);
      blk.bh = Mat::Zero(1, d);
    }
    blk.wo = randn(d, d);
    blk.w1 = randn(d, cfg.mlp_hidden);
    blk.b1 = Mat::Zero(1, cfg.mlp_hidden);
    blk.w2 = randn(cfg.mlp_hidden, d);
    blk.b2 = Mat::Zero(1, d);
    blk.g_mixer = Mat::Ones(1, d);
    blk.g_mlp = Mat::Ones(1, d);
  }
  p.g_final = Mat::Ones(1, d);
  // Zero head: the freshly initialized model is exactly uniform.
  p.w_out = Mat::Zero(d, cfg.vocab_size);
  p.b_out = Mat::Zero(1, cfg.vocab_size);
  return p;
}

// ============================================================================
// Tape forward (training path)
// ============================================================================

namespace detail {

struct BoundBlock {
  Var wq, wk, wv, wo, wf, uf, bf, wh, uh, bh, w1, b1, w2, b2, g_mixer, g_mlp;
};

struct BoundModel {
  Var embedding, positional, g_final, w_out, b_out;
  std::vector<BoundBlock> blocks;
};

inline BoundModel bind_params(Tape& tape, const ModelParams& p) {
  BoundModel m;
  m.embedding = tape.param(p.embedding);
  m.positional = tape.param(p.positional);
  for (const auto& blk : p.blocks) {
    BoundBlock b;
    if (p.config.mixer == MixerKind::attention) {
      b.wq = tape.param(blk.wq);
      b.wk = tape.param(blk.wk);
      b.wv = tape.param(blk.wv);
    } else {
      b.wf = tape.param(blk.wf);
      b.uf = tape.param(blk.uf);
      b.bf = tape.param(blk.bf);
      b.wh = tape.param(blk.wh);
      b.uh = tape.param(blk.uh);
      b.bh = tape.param(blk.bh);
    }
    b.wo = tape.param(blk.wo);
    b.w1 = tape.param(blk.w1);
    b.b1 = tape.param(blk.b1);
    b.w2 = tape.param(blk.w2);
    b.b2 = tape.param(blk.b2);
    b.g_mixer = tape.param(blk.g_mixer);
    b.g_mlp = tape.param(blk.g_mlp);
    m.blocks.push_back(b);
  }
  m.g_final = tape.param(p.g_final);
  m.w_out = tape.param(p.w_out);
  m.b_out = tape.param(p.b_out);
  return m;
}

inline Var mixer_graph(Tape& tape, const ModelConfig& cfg, const BoundBlock& b, Var y) {
  if (cfg.mixer == MixerKind::attention) {
    Var q = tape.matmul(y, b.wq);
    Var k = tape.matmul(y, b.wk);
    Var v = tape.matmul(y, b.wv);
    Var scores = tape.affine(tape.matmul_nt(q, k), 1.0 / std::sqrt(double(cfg.d_model)), 0.0);
    Var attn = tape.causal_row_softmax(scores);
    return tape.matmul(tape.matmul(attn, v), b.wo);
  }
  // Recurrent mixer, one row at a time (causal by construction).
  const Eigen::Index n = tape.val(y).rows();
  Var h = tape.input(Mat::Zero(1, cfg.d_model));
  std::vector<Var> hs;
  hs.reserve(static_cast<size_t>(n));
  for (Eigen::Index t = 0; t < n; ++t) {
    Var xt = tape.row(y, static_cast<int>(t));
    Var f = tape.sigmoid(tape.add(tape.add(tape.matmul(xt, b.wf), tape.matmul(h, b.uf)), b.bf));
    Var cand = tape.tanh_op(tape.add(tape.add(tape.matmul(xt, b.wh), tape.matmul(h, b.uh)), b.bh));
    h = tape.add(tape.hadamard(tape.affine(f, -1.0, 1.0), h), tape.hadamard(f, cand));
    hs.push_back(h);
  }
  return tape.matmul(tape.vstack(hs), b.wo);
}

/// Hidden states for the whole token sequence (n x d after final norm).
inline Var hidden_graph(Tape& tape, const ModelParams& p, const BoundModel& m,
                        const TokenSeq& tokens) {
  const ModelConfig& cfg = p.config;
  require(!tokens.empty(), "hidden_graph: empty token sequence");
  require(static_cast<int>(tokens.size()) <= cfg.context_len,
          "context too long: " + std::to_string(tokens.size()) + " > " +
              std::to_string(cfg.context_len));
  std::vector<int> ids(tokens.begin(), tokens.end());
  Var x = tape.add(tape.embed_rows(m.embedding, ids),
                   tape.slice_rows(m.positional, 0, static_cast<int>(ids.size())));
  for (const auto& b : m.blocks) {
    x = tape.add(x, mixer_graph(tape, cfg, b, tape.rms_norm(x, b.g_mixer)));
    Var y = tape.rms_norm(x, b.g_mlp);
    Var mlp = tape.add_row_broadcast(
        tape.matmul(tape.gelu(tape.add_row_broadcast(tape.matmul(y, b.w1), b.b1)), b.w2), b.b2);
    x = tape.add(x, mlp);
  }
  return tape.rms_norm(x, m.g_final);
}

}  // namespace detail

/// Differentiable log P(tokens[j] | tokens[<j]) for j in [from, n).
/// Returns a (n-from) x 1 column of per-token log-probabilities.
inline Var build_logprob_graph(Tape& tape, const ModelParams& params, const TokenSeq& tokens,
                               size_t from, const detail::BoundModel* bound = nullptr) {
  require(from >= 1 && from < tokens.size(), "build_logprob_graph: bad target range");
  detail::BoundModel local;
  if (!bound) {
    local = detail::bind_params(tape, params);
    bound = &local;
  }
  Var hidden = detail::hidden_graph(tape, params, *bound, tokens);
  Var rows = tape.slice_rows(hidden, static_cast<int>(from) - 1, static_cast<int>(tokens.size()) - 1);
  Var logits = tape.add_row_broadcast(tape.matmul(rows, bound->w_out), bound->b_out);
  std::vector<int> targets(tokens.begin() + static_cast<long>(from), tokens.end());
  return tape.token_logprobs(logits, targets);
}

// ============================================================================
// Tape-free forward (generation / scoring path)
// ============================================================================

namespace detail {

inline Eigen::RowVectorXd rms_norm_row(const Eigen::RowVectorXd& x, const Mat& gain,
                                       double eps = 1e-8) {
  const double rms = std::sqrt(x.squaredNorm() / static_cast<double>(x.size()) + eps);
  return (x / rms).cwiseProduct(gain.row(0));
}

inline Eigen::RowVectorXd gelu_row(const Eigen::RowVectorXd& x) {
  return x.unaryExpr([](double t) { return 0.5 * t * (1.0 + std::erf(t * M_SQRT1_2)); });
}

inline Eigen::RowVectorXd sigmoid_row(const Eigen::RowVectorXd& x) {
  return x.unaryExpr([](double t) {
    return t >= 0 ? 1.0 / (1.0 + std::exp(-t)) : std::exp(t) / (1.0 + std::exp(t));
  });
}

}  // namespace detail

/// Incremental decoder state. Appends one token at a time; attention
/// blocks cache keys/values, the recurrent mixer carries its hidden row.
class InferState {
 public:
  explicit InferState(const ModelParams& params) : p_(params) {
    caches_.resize(p_.blocks.size());
    for (auto& c : caches_) {
      if (p_.config.mixer == MixerKind::attention) {
        c.keys.resize(p_.config.context_len, p_.config.d_model);
        c.values.resize(p_.config.context_len, p_.config.d_model);
      } else {
        c.h = Mat::Zero(1, p_.config.d_model);
      }
    }
  }

  int position() const { return position_; }

  /// Feed one token; returns the logit row for the next-token distribution.
  Eigen::RowVectorXd append(Token token) {
    const ModelConfig& cfg = p_.config;
    if (position_ >= cfg.context_len)
      throw AuditError("context too long: " + std::to_string(position_ + 1) + " > " +
                       std::to_string(cfg.context_len));
    require(token >= 0 && token < cfg.vocab_size, "append: token out of range");
    Eigen::RowVectorXd x = p_.embedding.row(token) + p_.positional.row(position_);
    for (size_t b = 0; b < p_.blocks.size(); ++b) {
      const BlockParams& blk = p_.blocks[b];
      Cache& cache = caches_[b];
      Eigen::RowVectorXd y = detail::rms_norm_row(x, blk.g_mixer);
      Eigen::RowVectorXd mixed;
      if (cfg.mixer == MixerKind::attention) {
        Eigen::RowVectorXd q = y * blk.wq;
        cache.keys.row(position_) = y * blk.wk;
        cache.values.row(position_) = y * blk.wv;
        Eigen::VectorXd scores =
            (cache.keys.topRows(position_ + 1) * q.transpose()) / std::sqrt(double(cfg.d_model));
        const double m = scores.maxCoeff();
        Eigen::VectorXd weights = (scores.array() - m).exp();
        weights /= weights.sum();
        mixed = (weights.transpose() * cache.values.topRows(position_ + 1)) * blk.wo;
      } else {
        Eigen::RowVectorXd f =
            detail::sigmoid_row(y * blk.wf + cache.h.row(0) * blk.uf + blk.bf.row(0));
        Eigen::RowVectorXd cand =
            (y * blk.wh + cache.h.row(0) * blk.uh + blk.bh.row(0)).array().tanh();
        cache.h.row(0) =
            (1.0 - f.array()) * cache.h.row(0).array() + f.array() * cand.array();
        mixed = cache.h.row(0) * blk.wo;
      }
      x += mixed;
      Eigen::RowVectorXd z = detail::rms_norm_row(x, blk.g_mlp);
      x += (detail::gelu_row(z * blk.w1 + blk.b1.row(0)) * blk.w2 + blk.b2.row(0));
    }
    ++position_;
    Eigen::RowVectorXd h = detail::rms_norm_row(x, p_.g_final);
    return h * p_.w_out + p_.b_out.row(0);
  }

  Eigen::RowVectorXd append_all(const TokenSeq& tokens) {
    require(!tokens.empty(), "append_all: empty sequence");
    Eigen::RowVectorXd logits;
    for (Token t : tokens) logits = append(t);
    return logits;
  }

 private:
  struct Cache {
    Mat keys, values;  // attention
    Mat h;             // recurrent
  };

  const ModelParams& p_;
  std::vector<Cache> caches_;
  int position_ = 0;
};

inline Eigen::VectorXd softmax(const Eigen::RowVectorXd& logits) {
  const double m = logits.maxCoeff();
  Eigen::VectorXd e = (logits.array() - m).exp().transpose();
  return e / e.sum();
}

/// P(next token | context). Deterministic; errors when |context| > L.
inline Eigen::VectorXd forward_next_token(const ModelParams& params, const TokenSeq& context) {
  require(!context.empty(), "forward_next_token: empty context");
  InferState state(params);
  return softmax(state.append_all(context));
}

/// log P(tokens[j] | tokens[<j]) for j in [from, n), without a tape.
inline std::vector<double> score_tokens(const ModelParams& params, const TokenSeq& tokens,
                                        size_t from) {
  require(from >= 1 && from < tokens.size(), "score_tokens: bad target range");
  InferState state(params);
  std::vector<double> out;
  out.reserve(tokens.size() - from);
  for (size_t j = 0; j + 1 < tokens.size(); ++j) {
    Eigen::RowVectorXd logits = state.append(tokens[j]);
    if (j + 1 >= from) {
      const double m = logits.maxCoeff();
      const double lse = m + std::log((logits.array() - m).exp().sum());
      out.push_back(logits(tokens[j + 1]) - lse);
    }
  }
  return out;
}

struct SequenceLogprob {
  std::vector<double> per_token;
  double sum = 0.0;
  double mean = 0.0;
};

/// Per-token log-probs of `target` conditioned on `prefix`, plus sum/mean.
inline SequenceLogprob sequence_logprob(const ModelParams& params, const TokenSeq& prefix,
                                        const TokenSeq& target) {
  require(!target.empty(), "sequence_logprob: empty target");
  require(!prefix.empty(), "sequence_logprob: empty prefix");
  require(prefix.size() + target.size() <= static_cast<size_t>(params.config.context_len),
          "sequence_logprob: length overflow");
  TokenSeq all = prefix;
  all.insert(all.end(), target.begin(), target.end());
  SequenceLogprob result;
  result.per_token = score_tokens(params, all, prefix.size());
  for (double lp : result.per_token) result.sum += lp;
  result.mean = result.sum / static_cast<double>(result.per_token.size());
  return result;
}

// ============================================================================
// Optimizer
// ============================================================================

enum class OptimKind { sgd, adam };

struct OptimConfig {
  OptimKind kind = OptimKind::adam;
  double lr = 1e-3;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
  double weight_decay = 0.0;  // decoupled (applied directly to the weights)
};

struct OptimState {
  OptimConfig config;
  int64_t step = 0;
  std::vector<Mat> m;  // first moments, param order
  std::vector<Mat> v;  // second moments
};

/// Gradient container in the model's fixed parameter order.
struct Gradients {
  std::vector<Mat> tensors;
  std::vector<std::string> names;

  static Gradients zeros_like(const ModelParams& p) {
    Gradients g;
    p.for_each_param([&](const std::string& name, const Mat& m) {
      g.names.push_back(name);
      g.tensors.push_back(Mat::Zero(m.rows(), m.cols()));
    });
    return g;
  }

  void accumulate_from(const ModelParams& p, const Tape& tape) {
    std::unordered_map<const Mat*, size_t> slot_of;
    size_t idx = 0;
    p.for_each_param([&](const std::string&, const Mat& m) { slot_of[&m] = idx++; });
    tape.for_each_param_grad([&](const Mat* src, const Mat& grad) {
      auto it = slot_of.find(src);
      require(it != slot_of.end(), "gradient accumulate: unknown param binding");
      tensors[it->second] += grad;
    });
  }

  void scale(double k) {
    for (auto& t : tensors) t *= k;
  }

  void add(const Gradients& other) {
    for (size_t i = 0; i < tensors.size(); ++i) tensors[i] += other.tensors[i];
  }

  void set_zero() {
    for (auto& t : tensors) t.setZero();
  }

  double norm() const {
    double sq = 0.0;
    for (const auto& t : tensors) sq += t.squaredNorm();
    return std::sqrt(sq);
  }
};

inline OptimState init_optimizer(const ModelParams& params, const OptimConfig& cfg) {
  OptimState state;
  state.config = cfg;
  if (cfg.kind == OptimKind::adam) {
    params.for_each_param([&](const std::string&, const Mat& m) {
      state.m.push_back(Mat::Zero(m.rows(), m.cols()));
      state.v.push_back(Mat::Zero(m.rows(), m.cols()));
    });
  }
  return state;
}

/// One update. Plain SGD applies theta -= lr * g exactly; Adam uses
/// bias-corrected moments. Non-finite gradients abort the step, naming
/// the offending parameter.
inline void optimizer_step(ModelParams& params, const Gradients& grads, OptimState& state) {
  for (size_t i = 0; i < grads.tensors.size(); ++i)
    if (!grads.tensors[i].allFinite())
      throw AuditError("optimizer_step: non-finite gradient in " + grads.names[i]);

  const OptimConfig& cfg = state.config;
  state.step += 1;
  size_t i = 0;
  if (cfg.kind == OptimKind::sgd) {
    params.for_each_param([&](const std::string&, Mat& m) {
      m -= cfg.lr * grads.tensors[i];
      ++i;
    });
    return;
  }
  const double bc1 = 1.0 - std::pow(cfg.beta1, static_cast<double>(state.step));
  const double bc2 = 1.0 - std::pow(cfg.beta2, static_cast<double>(state.step));
  params.for_each_param([&](const std::string&, Mat& m) {
    state.m[i] = cfg.beta1 * state.m[i] + (1.0 - cfg.beta1) * grads.tensors[i];
    state.v[i] = cfg.beta2 * state.v[i] +
                 (1.0 - cfg.beta2) * grads.tensors[i].cwiseProduct(grads.tensors[i]);
    const Mat m_hat = state.m[i] / bc1;
    const Mat v_hat = state.v[i] / bc2;
    if (cfg.weight_decay > 0.0) m *= 1.0 - cfg.lr * cfg.weight_decay;
    m -= cfg.lr * m_hat.cwiseQuotient((v_hat.cwiseSqrt().array() + cfg.eps).matrix());
    ++i;
  });
}

// ============================================================================
// Checkpoints (bit-exact binary dump)
// ============================================================================

namespace detail {

inline void put_u64(std::ostream& out, uint64_t v) {
  out.write(reinterpret_cast<const char*>(&v), sizeof(v));
}
inline void put_i64(std::ostream& out, int64_t v) {
  out.write(reinterpret_cast<const char*>(&v), sizeof(v));
}
inline void put_f64(std::ostream& out, double v) {
  out.write(reinterpret_cast<const char*>(&v), sizeof(v));
}
inline void put_mat(std::ostream& out, const Mat& m) {
  put_u64(out, static_cast<uint64_t>(m.rows()));
  put_u64(out, static_cast<uint64_t>(m.cols()));
  for (Eigen::Index r = 0; r < m.rows(); ++r)
    for (Eigen::Index c = 0; c < m.cols(); ++c) put_f64(out, m(r, c));
}
inline uint64_t get_u64(std::istream& in) {
  uint64_t v = 0;
  in.read(reinterpret_cast<char*>(&v), sizeof(v));
  return v;
}
inline int64_t get_i64(std::istream& in) {
  int64_t v = 0;
  in.read(reinterpret_cast<char*>(&v), sizeof(v));
  return v;
}
inline double get_f64(std::istream& in) {
  double v = 0;
  in.read(reinterpret_cast<char*>(&v), sizeof(v));
  return v;
}
inline Mat get_mat(std::istream& in) {
  const uint64_t rows = get_u64(in);
  const uint64_t cols = get_u64(in);
  Mat m(static_cast<Eigen::Index>(rows), static_cast<Eigen::Index>(cols));
  for (Eigen::Index r = 0; r < m.rows(); ++r)
    for (Eigen::Index c = 0; c < m.cols(); ++c) m(r, c) = get_f64(in);
  return m;
}

}  // namespace detail

struct Checkpoint {
  ModelParams params;
  std::array<uint64_t, 4> rng_state{};
  std::optional<OptimState> optim;
};

inline void save_checkpoint(const Checkpoint& ckpt, const std::filesystem::path& path) {
  if (!path.parent_path().empty()) std::filesystem::create_directories(path.parent_path());
  std::ofstream out(path, std::ios::binary);
  if (!out) throw IoError("cannot open checkpoint for writing: " + path.string());
  out.write("RPOCKPT1", 8);
  const ModelConfig& cfg = ckpt.params.config;
  detail::put_u64(out, static_cast<uint64_t>(cfg.vocab_size));
  detail::put_u64(out, static_cast<uint64_t>(cfg.d_model));
  detail::put_u64(out, static_cast<uint64_t>(cfg.n_blocks));
  detail::put_u64(out, static_cast<uint64_t>(cfg.context_len));
  detail::put_u64(out, static_cast<uint64_t>(cfg.mlp_hidden));
  detail::put_u64(out, cfg.mixer == MixerKind::attention ? 0 : 1);
  detail::put_f64(out, cfg.init_std);

  uint64_t count = 0;
  ckpt.params.for_each_param([&](const std::string&, const Mat&) { ++count; });
  detail::put_u64(out, count);
  ckpt.params.for_each_param([&](const std::string& name, const Mat& m) {
    detail::put_u64(out, name.size());
    out.write(name.data(), static_cast<std::streamsize>(name.size()));
    detail::put_mat(out, m);
  });

  for (uint64_t w : ckpt.rng_state) detail::put_u64(out, w);

  detail::put_u64(out, ckpt.optim ? 1 : 0);
  if (ckpt.optim) {
    const OptimState& s = *ckpt.optim;
    detail::put_u64(out, s.config.kind == OptimKind::adam ? 1 : 0);
    detail::put_f64(out, s.config.lr);
    detail::put_f64(out, s.config.beta1);
    detail::put_f64(out, s.config.beta2);
    detail::put_f64(out, s.config.eps);
    detail::put_f64(out, s.config.weight_decay);
    detail::put_i64(out, s.step);
    detail::put_u64(out, s.m.size());
    for (const auto& m : s.m) detail::put_mat(out, m);
    for (const auto& v : s.v) detail::put_mat(out, v);
  }
  if (!out) throw IoError("checkpoint write failed: " + path.string());
}

inline Checkpoint load_checkpoint(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open checkpoint: " + path.string());
  char magic[8];
  in.read(magic, 8);
  if (!in || std::memcmp(magic, "RPOCKPT1", 8) != 0)
    throw IoError("bad checkpoint magic: " + path.string());

  ModelConfig cfg;
  cfg.vocab_size = static_cast<int>(detail::get_u64(in));
  cfg.d_model = static_cast<int>(detail::get_u64(in));
  cfg.n_blocks = static_cast<int>(detail::get_u64(in));
  cfg.context_len = static_cast<int>(detail::get_u64(in));
  cfg.mlp_hidden = static_cast<int>(detail::get_u64(in));
  cfg.mixer = detail::get_u64(in) == 0 ? MixerKind::attention : MixerKind::recurrent;
  cfg.init_std = detail::get_f64(in);

  Checkpoint ckpt;
  ckpt.params = init_model(cfg, 0);
  const uint64_t count = detail::get_u64(in);
  uint64_t seen = 0;
  ckpt.params.for_each_param([&](const std::string& name, Mat& m) {
    const uint64_t len = detail::get_u64(in);
    std::string stored(len, '\0');
    in.read(stored.data(), static_cast<std::streamsize>(len));
    if (stored != name) throw IoError("checkpoint param order mismatch: " + stored + " vs " + name);
    m = detail::get_mat(in);
    ++seen;
  });
  if (seen != count) throw IoError("checkpoint param count mismatch");

  for (auto& w : ckpt.rng_state) w = detail::get_u64(in);

  if (detail::get_u64(in) == 1) {
    OptimState s;
    s.config.kind = detail::get_u64(in) == 1 ? OptimKind::adam : OptimKind::sgd;
    s.config.lr = detail::get_f64(in);
    s.config.beta1 = detail::get_f64(in);
    s.config.beta2 = detail::get_f64(in);
    s.config.eps = detail::get_f64(in);
    s.config.weight_decay = detail::get_f64(in);
    s.step = detail::get_i64(in);
    const uint64_t n = detail::get_u64(in);
    s.m.resize(n);
    for (auto& m : s.m) m = detail::get_mat(in);
    s.v.resize(n);
    for (auto& v : s.v) v = detail::get_mat(in);
    ckpt.optim = std::move(s);
  }
  if (!in) throw IoError("truncated checkpoint: " + path.string());
  return ckpt;
}

}  // namespace rpo
