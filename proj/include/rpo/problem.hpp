#pragma once

/**
 * Synthetic chained-arithmetic problems and reasoning-path segmentation.
 *
 * A problem is a fixed left-to-right chain of binary integer operations
 * over single-letter variables:
 *
 *   x = 4 + 3 ; y = x * 2 ; y ?
 *
 * Its ground-truth solution states one intermediate result per operation
 * and closes with the fixed answer template:
 *
 *   4 + 3 = 7 <sep> 7 * 2 = 14 <sep> so the answer is 14 <eos>
 *
 * Division appears only when exact; every intermediate stays within the
 * configured magnitude bound, so all values render in-vocabulary.
 */

#include <algorithm>
#include <cstdlib>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include "rpo/common.hpp"
#include "rpo/rng.hpp"
#include "rpo/vocab.hpp"

namespace rpo {

// ============================================================================
// Domain types
// ============================================================================

enum class PathSource { model_sampled, ground_truth };

struct ReasoningPath {
  std::vector<TokenSeq> steps;  // each step free of <sep>/<eos>
  PathSource source = PathSource::model_sampled;

  bool operator==(const ReasoningPath& other) const { return steps == other.steps; }
};

struct Problem {
  uint64_t id = 0;
  TokenSeq question;
  std::string answer;                // canonical signed decimal
  std::vector<TokenSeq> gt_steps;    // depth + 1 steps, last contains answer
  int depth = 0;

  // Generation-time bookkeeping for split disjointness.
  std::string signature;             // operand sequence + operator sequence
};

struct GenConfig {
  long long bound = 9999;   // |intermediate| <= bound
  int operand_max = 9;      // constants in [0, operand_max]
  int first_operand_min = -9;
  int first_operand_max = 9;
  int max_draws = 1000;     // resample budget before giving up
};

// ============================================================================
// Canonical integers and answer extraction
// ============================================================================

/// Strip leading zeros and normalize "-0" to "0".
inline std::string canonicalize_int(const std::string& literal) {
  bool negative = false;
  size_t i = 0;
  if (i < literal.size() && (literal[i] == '-' || literal[i] == '+')) {
    negative = literal[i] == '-';
    ++i;
  }
  while (i + 1 < literal.size() && literal[i] == '0') ++i;
  std::string digits = literal.substr(i);
  if (digits.empty()) return "";
  if (digits == "0") return "0";
  return negative ? "-" + digits : digits;
}

inline const std::string kNoAnswer = "<no-answer>";

namespace detail {

/// All maximal signed integer literals in a step, in order. A "-" token
/// counts as a sign only when it does not follow a digit (so "9 - 7"
/// yields 9 and 7, while "= - 5" yields -5).
inline std::vector<std::string> integer_literals(const TokenSeq& step, const Vocabulary& vocab) {
  std::vector<std::string> out;
  size_t i = 0;
  while (i < step.size()) {
    if (!vocab.is_digit(step[i])) {
      ++i;
      continue;
    }
    bool negative = false;
    if (i > 0 && vocab.is_minus(step[i - 1])) {
      const bool binary = i >= 2 && vocab.is_digit(step[i - 2]);
      negative = !binary;
    }
    std::string digits;
    while (i < step.size() && vocab.is_digit(step[i])) {
      digits += vocab.token_text(step[i]);
      ++i;
    }
    out.push_back(canonicalize_int((negative ? "-" : "") + digits));
  }
  return out;
}

}  // namespace detail

/// Last maximal signed integer literal of a step, canonicalized;
/// kNoAnswer when the step contains no digit.
inline std::string extract_answer(const TokenSeq& step, const Vocabulary& vocab) {
  auto literals = detail::integer_literals(step, vocab);
  if (literals.empty()) return kNoAnswer;
  return literals.back();
}

// ============================================================================
// Step segmentation
// ============================================================================

/// Flatten steps back into the generated token stream:
/// S1 <sep> S2 <sep> ... Sn <eos>.
inline TokenSeq flatten_path(const ReasoningPath& path, const Vocabulary& vocab) {
  TokenSeq out;
  for (size_t i = 0; i < path.steps.size(); ++i) {
    if (i) out.push_back(vocab.step_delimiter());
    out.insert(out.end(), path.steps[i].begin(), path.steps[i].end());
  }
  out.push_back(vocab.end_of_sequence());
  return out;
}

/// Split on the step delimiter, dropping empty segments and anything at
/// or after the first <eos>. Throws AuditError when nothing remains.
inline ReasoningPath split_steps(const TokenSeq& tokens, const Vocabulary& vocab,
                                 PathSource source = PathSource::model_sampled) {
  ReasoningPath path;
  path.source = source;
  TokenSeq current;
  for (Token t : tokens) {
    require(t >= 0 && t < vocab.size(), "split_steps: token out of vocabulary");
    if (t == vocab.end_of_sequence()) break;
    if (t == vocab.step_delimiter()) {
      if (!current.empty()) path.steps.push_back(std::move(current));
      current = {};
    } else {
      current.push_back(t);
    }
  }
  if (!current.empty()) path.steps.push_back(std::move(current));
  if (path.steps.empty()) throw AuditError("split_steps: no non-empty step");
  return path;
}

// ============================================================================
// Problem generation
// ============================================================================

namespace detail {

struct ChainOp {
  char op;
  long long constant;
};

struct Chain {
  long long first = 0;
  std::vector<ChainOp> ops;

  std::string signature() const {
    std::string sig = std::to_string(first);
    for (const auto& o : ops) {
      sig += ' ';
      sig += o.op;
      sig += std::to_string(o.constant);
    }
    return sig;
  }
};

inline std::optional<long long> apply_op(long long lhs, char op, long long rhs, long long bound) {
  long long result = 0;
  switch (op) {
    case '+': result = lhs + rhs; break;
    case '-': result = lhs - rhs; break;
    case '*': result = lhs * rhs; break;
    case '/':
      if (rhs == 0 || lhs % rhs != 0) return std::nullopt;
      result = lhs / rhs;
      break;
    default: return std::nullopt;
  }
  if (std::llabs(result) > bound) return std::nullopt;
  return result;
}

inline Chain draw_chain(RngStream& rng, int depth, const GenConfig& cfg) {
  static const char kOps[4] = {'+', '-', '*', '/'};
  int draws = 0;
  while (draws < cfg.max_draws) {
    Chain chain;
    chain.first = rng.uniform_int(cfg.first_operand_min, cfg.first_operand_max);
    long long value = chain.first;
    bool ok = std::llabs(value) <= cfg.bound;
    for (int step = 0; ok && step < depth; ++step) {
      bool placed = false;
      for (int attempt = 0; attempt < 40; ++attempt) {
        ++draws;
        const char op = kOps[rng.uniform_int(0, 3)];
        const long long c = rng.uniform_int(0, cfg.operand_max);
        auto result = apply_op(value, op, c, cfg.bound);
        if (!result) continue;
        chain.ops.push_back({op, c});
        value = *result;
        placed = true;
        break;
      }
      ok = placed;
    }
    if (ok) return chain;
  }
  throw AuditError("generate_problem: no valid chain within draw budget (check bound/operand config)");
}

}  // namespace detail

/// Deterministically generate one problem from a stream. The chain has
/// exactly `depth` operations and every intermediate obeys the bound.
inline Problem generate_problem(RngStream& rng, int depth, long long bound,
                                const Vocabulary& vocab, GenConfig cfg = {}) {
  require(depth >= 1, "generate_problem: depth must be >= 1");
  require(bound >= 10, "generate_problem: bound must be >= 10");
  cfg.bound = bound;

  const auto chain = detail::draw_chain(rng, depth, cfg);
  const auto& vars = Vocabulary::variable_names();
  require(depth <= static_cast<int>(vars.size()),
          "generate_problem: depth exceeds available variable names");

  Problem problem;
  problem.depth = depth;
  problem.signature = chain.signature();

  // Question: "x = c1 op c2 ; y = x op c3 ; ... ; v ?"
  auto push_int = [&](long long v) {
    const TokenSeq toks = vocab.render_int(v);
    problem.question.insert(problem.question.end(), toks.begin(), toks.end());
  };
  long long value = chain.first;
  for (int k = 0; k < depth; ++k) {
    problem.question.push_back(vocab.id_of(vars[static_cast<size_t>(k)]));
    problem.question.push_back(vocab.id_of("="));
    if (k == 0) {
      push_int(chain.first);
    } else {
      problem.question.push_back(vocab.id_of(vars[static_cast<size_t>(k - 1)]));
    }
    problem.question.push_back(vocab.id_of(std::string(1, chain.ops[static_cast<size_t>(k)].op)));
    push_int(chain.ops[static_cast<size_t>(k)].constant);
    problem.question.push_back(vocab.id_of(";"));

    auto next = detail::apply_op(value, chain.ops[static_cast<size_t>(k)].op,
                                 chain.ops[static_cast<size_t>(k)].constant, cfg.bound);
    require(next.has_value(), "generate_problem: internal chain re-evaluation failed");

    // Ground-truth step: "<lhs> <op> <c> = <result>"
    TokenSeq step = vocab.render_int(value);
    step.push_back(vocab.id_of(std::string(1, chain.ops[static_cast<size_t>(k)].op)));
    const TokenSeq c_toks = vocab.render_int(chain.ops[static_cast<size_t>(k)].constant);
    step.insert(step.end(), c_toks.begin(), c_toks.end());
    step.push_back(vocab.id_of("="));
    const TokenSeq r_toks = vocab.render_int(*next);
    step.insert(step.end(), r_toks.begin(), r_toks.end());
    problem.gt_steps.push_back(std::move(step));

    value = *next;
  }
  problem.question.push_back(vocab.id_of(vars[static_cast<size_t>(depth - 1)]));
  problem.question.push_back(vocab.id_of("?"));

  problem.answer = std::to_string(value);

  // Final step: "so the answer is <answer>"
  TokenSeq last;
  for (const char* w : {"so", "the", "answer", "is"}) last.push_back(vocab.id_of(w));
  const TokenSeq a_toks = vocab.render_int(value);
  last.insert(last.end(), a_toks.begin(), a_toks.end());
  problem.gt_steps.push_back(std::move(last));

  return problem;
}

/// Ground-truth reasoning path for a problem.
inline ReasoningPath render_solution(const Problem& problem) {
  require(!problem.gt_steps.empty(), "render_solution: problem has no ground-truth steps");
  ReasoningPath path;
  path.source = PathSource::ground_truth;
  path.steps = problem.gt_steps;
  return path;
}

// ============================================================================
// Independent question evaluator (stack-based; used by corpus audits)
// ============================================================================

/// Re-evaluate a rendered question with exact integer arithmetic by
/// parsing its token stream, independent of the generator's chain state.
inline std::string evaluate_question(const TokenSeq& question, const Vocabulary& vocab) {
  std::map<std::string, long long> env;
  size_t i = 0;
  const size_t n = question.size();

  auto text = [&](size_t k) { return vocab.token_text(question[k]); };
  auto parse_operand = [&](size_t& k) -> long long {
    std::string t = text(k);
    if (env.count(t)) {
      ++k;
      return env[t];
    }
    bool neg = false;
    if (t == "-") {
      neg = true;
      ++k;
      require(k < n, "evaluate_question: dangling sign");
      t = text(k);
    }
    std::string digits;
    while (k < n && vocab.is_digit(question[k])) {
      digits += text(k);
      ++k;
    }
    require(!digits.empty(), "evaluate_question: expected integer operand");
    const long long mag = std::stoll(digits);
    return neg ? -mag : mag;
  };

  while (i < n) {
    const std::string var = text(i);
    require(i + 1 < n, "evaluate_question: truncated clause");
    if (text(i + 1) == "?") {
      require(env.count(var) != 0, "evaluate_question: query of unassigned variable");
      return std::to_string(env[var]);
    }
    require(text(i + 1) == "=", "evaluate_question: expected '='");
    i += 2;
    const long long lhs = parse_operand(i);
    require(i < n, "evaluate_question: truncated expression");
    const std::string op = text(i);
    ++i;
    const long long rhs = parse_operand(i);
    long long value = 0;
    if (op == "+") value = lhs + rhs;
    else if (op == "-") value = lhs - rhs;
    else if (op == "*") value = lhs * rhs;
    else if (op == "/") {
      require(rhs != 0 && lhs % rhs == 0, "evaluate_question: inexact division");
      value = lhs / rhs;
    } else {
      throw AuditError("evaluate_question: unknown operator '" + op + "'");
    }
    env[var] = value;
    require(i < n && text(i) == ";", "evaluate_question: expected ';'");
    ++i;
  }
  throw AuditError("evaluate_question: missing final query");
}

}  // namespace rpo
