#pragma once

/**
 * Serialization of problems and paths into model token streams.
 *
 * Full training sequence:  <q> question <a> S1 <sep> S2 <sep> ... Sn <eos>
 * Generation prompt:       <q> question <a>
 * Branch prefix at step i: prompt + S1 <sep> ... S_{i-1} <sep>   (i >= 2)
 *                          prompt alone for i = 1.
 */

#include "rpo/problem.hpp"
#include "rpo/vocab.hpp"

namespace rpo {

inline TokenSeq prompt_tokens(const Problem& problem, const Vocabulary& vocab) {
  TokenSeq out;
  out.reserve(problem.question.size() + 2);
  out.push_back(vocab.question_start());
  out.insert(out.end(), problem.question.begin(), problem.question.end());
  out.push_back(vocab.answer_start());
  return out;
}

/// Token stream of steps [first, last) of a path, each step separated by
/// <sep>; `terminal` appends the closing <eos> (used when the slice runs
/// to the end of the path).
inline TokenSeq steps_stream(const std::vector<TokenSeq>& steps, size_t first, size_t last,
                             const Vocabulary& vocab, bool terminal) {
  require(first <= last && last <= steps.size(), "steps_stream: bad range");
  TokenSeq out;
  for (size_t i = first; i < last; ++i) {
    if (i > first) out.push_back(vocab.step_delimiter());
    out.insert(out.end(), steps[i].begin(), steps[i].end());
  }
  if (terminal) {
    out.push_back(vocab.end_of_sequence());
  } else if (last > first) {
    out.push_back(vocab.step_delimiter());
  }
  return out;
}

/// Prefix for branch sampling/scoring at 1-based step index i:
/// the prompt plus reference steps 1..i-1 (each closed with <sep>).
inline TokenSeq branch_prefix(const Problem& problem, const ReasoningPath& reference,
                              size_t step_index, const Vocabulary& vocab) {
  require(step_index >= 1 && step_index <= reference.steps.size(),
          "branch_prefix: step index out of range");
  TokenSeq out = prompt_tokens(problem, vocab);
  const TokenSeq prior = steps_stream(reference.steps, 0, step_index - 1, vocab, false);
  out.insert(out.end(), prior.begin(), prior.end());
  return out;
}

}  // namespace rpo
