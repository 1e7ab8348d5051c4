#pragma once

/**
 * Differentiable training objectives.
 *
 * Reference loss: mean NLL of the path tokens conditioned on the prompt
 * (question tokens are conditioning only and carry no loss terms).
 *
 * Branch odds: p = exp(mean per-token log-prob) of the branch given its
 * shared prefix (geometric-mean probability; raw product behind the
 * length_normalize flag), odds = p / (1 - p) with p clamped to
 * [1e-12, 1 - 1e-12]. The pair score is log(odds+ / odds-) in odds_ratio
 * mode or beta * (mean-logp+ - mean-logp-) in direct_preference mode;
 * the exploration loss averages -log(sigmoid(score)) over formed pairs.
 *
 * Combined loss: reference + lambda * exploration. The full-path
 * preference baselines (DPO with a frozen reference policy and joint
 * NLL, ORPO) are assembled from the same kernels.
 */

#include <cmath>
#include <string>
#include <vector>

#include "rpo/encoding.hpp"
#include "rpo/explorer.hpp"
#include "rpo/model.hpp"
#include "rpo/tape.hpp"

namespace rpo {

enum class PairObjective { odds_ratio, direct_preference };

inline const char* pair_objective_name(PairObjective p) {
  return p == PairObjective::odds_ratio ? "odds-ratio" : "direct-preference";
}

inline PairObjective pair_objective_from_name(const std::string& name) {
  if (name == "odds-ratio") return PairObjective::odds_ratio;
  if (name == "direct-preference") return PairObjective::direct_preference;
  throw UsageError("unknown pair objective: " + name);
}

struct ObjectiveConfig {
  double lambda = 0.3;
  PairObjective pair_objective = PairObjective::odds_ratio;
  double dp_beta = 0.1;
  bool length_normalize = true;
};

struct PairTerm {
  size_t step_index = 0;
  double score = 0.0;             // l_bp
  double neg_log_sigmoid = 0.0;   // -log(sigmoid(l_bp))
};

struct LossBreakdown {
  double l_ref = 0.0;
  double l_exp = 0.0;
  double lambda = 0.0;
  double total = 0.0;
  std::vector<PairTerm> per_pair;
};

namespace detail {

constexpr double kProbEps = 1e-12;

/// Differentiable per-token log-probs of `target` given `prefix`.
inline Var target_logprobs(Tape& tape, const ModelParams& params, const BoundModel& bound,
                           const TokenSeq& prefix, const TokenSeq& target) {
  require(!target.empty(), "target_logprobs: empty target");
  require(!prefix.empty(), "target_logprobs: empty prefix");
  TokenSeq full = prefix;
  full.insert(full.end(), target.begin(), target.end());
  return build_logprob_graph(tape, params, full, prefix.size(), &bound);
}

/// log p of a branch: geometric-mean per-token probability by default,
/// raw product when length normalization is off; clamped before the odds
/// transform so the result is always finite.
inline Var branch_logp(Tape& tape, Var logprobs, const ObjectiveConfig& cfg) {
  Var agg = cfg.length_normalize ? tape.mean(logprobs) : tape.sum(logprobs);
  return tape.clamp(agg, std::log(kProbEps), std::log1p(-kProbEps));
}

inline Var branch_log_odds(Tape& tape, Var logprobs, const ObjectiveConfig& cfg) {
  return tape.log_odds_from_logp(branch_logp(tape, logprobs, cfg));
}

}  // namespace detail

// ============================================================================
// Core losses
// ============================================================================

/// Mean NLL over the path tokens (delimiters and <eos> included) given
/// the prompt; with several reference paths, the mean over paths.
inline Var reference_loss(Tape& tape, const ModelParams& params, const detail::BoundModel& bound,
                          const TokenSeq& prompt, const std::vector<ReasoningPath>& paths,
                          const Vocabulary& vocab) {
  require(!paths.empty(), "reference_loss: no path");
  Var acc;
  for (const auto& path : paths) {
    require(!path.steps.empty(), "reference_loss: empty path");
    const TokenSeq stream = steps_stream(path.steps, 0, path.steps.size(), vocab, true);
    Var nll = tape.affine(tape.mean(detail::target_logprobs(tape, params, bound, prompt, stream)),
                          -1.0, 0.0);
    acc = acc.valid() ? tape.add(acc, nll) : nll;
  }
  return paths.size() == 1 ? acc : tape.affine(acc, 1.0 / double(paths.size()), 0.0);
}

/// Odds of generating `target` after `prefix`: p / (1 - p).
inline Var branch_odds(Tape& tape, const ModelParams& params, const detail::BoundModel& bound,
                       const TokenSeq& prefix, const TokenSeq& target,
                       const ObjectiveConfig& cfg) {
  Var lp = detail::target_logprobs(tape, params, bound, prefix, target);
  return tape.s_exp(detail::branch_log_odds(tape, lp, cfg));
}

/// Pair score l_bp for one (favorable, unfavorable) pair on a shared prefix.
inline Var branch_pair_score(Tape& tape, const ModelParams& params,
                             const detail::BoundModel& bound, const TokenSeq& prefix,
                             const TokenSeq& favorable, const TokenSeq& unfavorable,
                             const ObjectiveConfig& cfg) {
  Var lp_fav = detail::target_logprobs(tape, params, bound, prefix, favorable);
  Var lp_unf = detail::target_logprobs(tape, params, bound, prefix, unfavorable);
  if (cfg.pair_objective == PairObjective::odds_ratio) {
    return tape.sub(detail::branch_log_odds(tape, lp_fav, cfg),
                    detail::branch_log_odds(tape, lp_unf, cfg));
  }
  return tape.affine(tape.sub(tape.mean(lp_fav), tape.mean(lp_unf)), cfg.dp_beta, 0.0);
}

// ============================================================================
// Combined example losses
// ============================================================================

struct LossGraph {
  Var loss;  // scalar on the tape
  LossBreakdown breakdown;
};

namespace detail {

/// Mean of -log(sigmoid(l_bp)) over the example's formed pairs, all
/// scored against reference_paths[0]'s prefixes.
inline Var exploration_terms(Tape& tape, const ModelParams& params, const BoundModel& bound,
                             const Problem& problem, const RpoExample& example,
                             const Vocabulary& vocab, const ObjectiveConfig& cfg,
                             std::vector<PairTerm>& per_pair) {
  const ReasoningPath& trunk = example.reference_paths.front();
  Var sum_terms;
  for (const auto& pair : example.branch_pairs) {
    const TokenSeq prefix = branch_prefix(problem, trunk, pair.start_index, vocab);
    const TokenSeq fav = steps_stream(pair.favorable.steps, 0, pair.favorable.steps.size(),
                                      vocab, true);
    const TokenSeq unf = steps_stream(pair.unfavorable.steps, 0, pair.unfavorable.steps.size(),
                                      vocab, true);
    Var score = branch_pair_score(tape, params, bound, prefix, fav, unf, cfg);
    Var term = tape.affine(tape.log_sigmoid(score), -1.0, 0.0);
    per_pair.push_back({pair.start_index, tape.value(score), tape.value(term)});
    sum_terms = sum_terms.valid() ? tape.add(sum_terms, term) : term;
  }
  return tape.affine(sum_terms, 1.0 / double(example.branch_pairs.size()), 0.0);
}

}  // namespace detail

/// Aggregated exploration loss alone: mean of -log(sigmoid(l_bp)) over
/// the formed pairs. Errors when the example has none.
inline LossGraph exploration_loss(Tape& tape, const ModelParams& params, const Problem& problem,
                                  const RpoExample& example, const Vocabulary& vocab,
                                  const ObjectiveConfig& cfg) {
  require(!example.branch_pairs.empty(),
          "exploration_loss: example has no branch pairs (route it to the reference loss)");
  require(!example.reference_paths.empty(), "exploration_loss: example without reference path");
  const detail::BoundModel bound = detail::bind_params(tape, params);
  LossGraph out;
  out.loss = detail::exploration_terms(tape, params, bound, problem, example, vocab, cfg,
                                       out.breakdown.per_pair);
  out.breakdown.l_exp = tape.value(out.loss);
  out.breakdown.lambda = cfg.lambda;
  out.breakdown.total = out.breakdown.l_exp;
  return out;
}

/// Reference + lambda * exploration for one example. Pair-less examples
/// reduce to the reference loss with l_exp := 0.
inline LossGraph rpo_loss(Tape& tape, const ModelParams& params, const Problem& problem,
                          const RpoExample& example, const Vocabulary& vocab,
                          const ObjectiveConfig& cfg) {
  require(!example.reference_paths.empty(), "rpo_loss: example without reference path");
  const detail::BoundModel bound = detail::bind_params(tape, params);
  const TokenSeq prompt = prompt_tokens(problem, vocab);

  LossGraph out;
  Var l_ref = reference_loss(tape, params, bound, prompt, example.reference_paths, vocab);
  out.breakdown.l_ref = tape.value(l_ref);
  out.breakdown.lambda = cfg.lambda;

  if (example.branch_pairs.empty()) {
    out.breakdown.l_exp = 0.0;
    out.breakdown.total = out.breakdown.l_ref;
    out.loss = l_ref;
    return out;
  }

  Var l_exp = detail::exploration_terms(tape, params, bound, problem, example, vocab, cfg,
                                        out.breakdown.per_pair);
  out.breakdown.l_exp = tape.value(l_exp);
  out.loss = tape.add(l_ref, tape.affine(l_exp, cfg.lambda, 0.0));
  out.breakdown.total = tape.value(out.loss);
  return out;
}

/// SFT: mean NLL of the answer statement (no intermediate steps).
inline LossGraph sft_loss(Tape& tape, const ModelParams& params, const Problem& problem,
                          const ReasoningPath& answer_statement, const Vocabulary& vocab) {
  const detail::BoundModel bound = detail::bind_params(tape, params);
  LossGraph out;
  out.loss = reference_loss(tape, params, bound, prompt_tokens(problem, vocab),
                            {answer_statement}, vocab);
  out.breakdown.l_ref = tape.value(out.loss);
  out.breakdown.total = out.breakdown.l_ref;
  return out;
}

/// RFT: identical computation to the reference loss on the retained
/// self-generated path (shared kernel; only the dataset differs).
inline LossGraph rft_loss(Tape& tape, const ModelParams& params, const Problem& problem,
                          const ReasoningPath& path, const Vocabulary& vocab) {
  const detail::BoundModel bound = detail::bind_params(tape, params);
  LossGraph out;
  out.loss = reference_loss(tape, params, bound, prompt_tokens(problem, vocab), {path}, vocab);
  out.breakdown.l_ref = tape.value(out.loss);
  out.breakdown.total = out.breakdown.l_ref;
  return out;
}

/// DPO over one full-path pair with a frozen reference policy, plus the
/// joint NLL over the accepted path. Full-path log-probs are sums over
/// the output tokens.
inline LossGraph dpo_loss(Tape& tape, const ModelParams& params, const ModelParams& ref_params,
                          const Problem& problem, const PreferencePair& pair,
                          const Vocabulary& vocab, const ObjectiveConfig& cfg) {
  const detail::BoundModel bound = detail::bind_params(tape, params);
  const TokenSeq prompt = prompt_tokens(problem, vocab);
  const TokenSeq acc = steps_stream(pair.accepted.steps, 0, pair.accepted.steps.size(), vocab, true);
  const TokenSeq rej = steps_stream(pair.rejected.steps, 0, pair.rejected.steps.size(), vocab, true);

  Var lp_acc = detail::target_logprobs(tape, params, bound, prompt, acc);
  Var lp_rej = detail::target_logprobs(tape, params, bound, prompt, rej);

  auto ref_sum = [&](const TokenSeq& target) {
    TokenSeq full = prompt;
    full.insert(full.end(), target.begin(), target.end());
    double sum = 0.0;
    for (double lp : score_tokens(ref_params, full, prompt.size())) sum += lp;
    return sum;
  };
  const double ref_margin = ref_sum(acc) - ref_sum(rej);

  Var policy_margin = tape.sub(tape.sum(lp_acc), tape.sum(lp_rej));
  Var z = tape.affine(tape.sub(policy_margin, tape.scalar_input(ref_margin)), cfg.dp_beta, 0.0);
  Var contrast = tape.affine(tape.log_sigmoid(z), -1.0, 0.0);
  Var nll = tape.affine(tape.mean(lp_acc), -1.0, 0.0);

  LossGraph out;
  out.loss = tape.add(nll, contrast);
  out.breakdown.l_ref = tape.value(nll);
  out.breakdown.l_exp = tape.value(contrast);
  out.breakdown.lambda = 1.0;
  out.breakdown.total = tape.value(out.loss);
  out.breakdown.per_pair.push_back({1, tape.value(z), tape.value(contrast)});
  return out;
}

/// ORPO over one full-path pair: reference NLL of the accepted path plus
/// lambda * -log(sigmoid(log odds ratio)), both paths conditioned on the
/// question alone.
inline LossGraph orpo_loss(Tape& tape, const ModelParams& params, const Problem& problem,
                           const PreferencePair& pair, const Vocabulary& vocab,
                           const ObjectiveConfig& cfg) {
  const detail::BoundModel bound = detail::bind_params(tape, params);
  const TokenSeq prompt = prompt_tokens(problem, vocab);
  const TokenSeq acc = steps_stream(pair.accepted.steps, 0, pair.accepted.steps.size(), vocab, true);
  const TokenSeq rej = steps_stream(pair.rejected.steps, 0, pair.rejected.steps.size(), vocab, true);

  Var l_ref = reference_loss(tape, params, bound, prompt, {pair.accepted}, vocab);
  Var score = branch_pair_score(tape, params, bound, prompt, acc, rej, cfg);
  Var term = tape.affine(tape.log_sigmoid(score), -1.0, 0.0);

  LossGraph out;
  out.loss = tape.add(l_ref, tape.affine(term, cfg.lambda, 0.0));
  out.breakdown.l_ref = tape.value(l_ref);
  out.breakdown.l_exp = tape.value(term);
  out.breakdown.lambda = cfg.lambda;
  out.breakdown.total = tape.value(out.loss);
  out.breakdown.per_pair.push_back({1, tape.value(score), tape.value(term)});
  return out;
}

}  // namespace rpo
