#pragma once

/**
 * Temperature sampling, greedy decoding, and the path verifier.
 *
 * Both decoders run on an InferState snapshot and stop at <eos> or the
 * token budget; sampling draws from softmax(logits / T) with the stream
 * passed in, so identical (params, prefix, stream) give identical output
 * from any worker. Greedy ties break toward the lowest token id.
 */

#include <algorithm>
#include <vector>

#include "rpo/model.hpp"
#include "rpo/problem.hpp"
#include "rpo/rng.hpp"
#include "rpo/vocab.hpp"

namespace rpo {

struct SampleConfig {
  double temperature = 0.5;
  int max_new_tokens = 160;
};

struct GenerationResult {
  TokenSeq tokens;       // includes the terminating <eos> when one was emitted
  bool hit_eos = false;  // false means the budget truncated the generation
};

/// Draw tokens from softmax(logits / T) until <eos> or the budget.
inline GenerationResult sample_continuation(const ModelParams& params, const TokenSeq& prefix,
                                            const SampleConfig& cfg, const Vocabulary& vocab,
                                            RngStream& rng) {
  require(cfg.temperature > 0.0, "sample_continuation: temperature must be positive");
  require(!prefix.empty(), "sample_continuation: empty prefix");
  InferState state(params);
  Eigen::RowVectorXd logits = state.append_all(prefix);
  GenerationResult result;
  // The budget never exceeds the remaining context; a generation that
  // runs out is returned truncated (scored F=0 downstream), not an error.
  const int budget = std::min<int>(cfg.max_new_tokens,
                                   params.config.context_len - static_cast<int>(prefix.size()));
  for (int step = 0; step < budget; ++step) {
    Eigen::VectorXd probs = softmax(logits / cfg.temperature);
    std::vector<double> weights(probs.data(), probs.data() + probs.size());
    const Token token = static_cast<Token>(rng.categorical(weights));
    result.tokens.push_back(token);
    if (token == vocab.end_of_sequence()) {
      result.hit_eos = true;
      break;
    }
    logits = state.append(token);
  }
  return result;
}

/// Argmax decoding; ties break to the lowest token id.
inline GenerationResult greedy_decode(const ModelParams& params, const TokenSeq& prefix,
                                      int max_new_tokens, const Vocabulary& vocab) {
  require(!prefix.empty(), "greedy_decode: empty prefix");
  InferState state(params);
  Eigen::RowVectorXd logits = state.append_all(prefix);
  GenerationResult result;
  const int budget = std::min<int>(max_new_tokens,
                                   params.config.context_len - static_cast<int>(prefix.size()));
  for (int step = 0; step < budget; ++step) {
    Token best = 0;
    double best_logit = logits(0);
    for (Eigen::Index j = 1; j < logits.size(); ++j) {
      if (logits(j) > best_logit) {
        best_logit = logits(j);
        best = static_cast<Token>(j);
      }
    }
    result.tokens.push_back(best);
    if (best == vocab.end_of_sequence()) {
      result.hit_eos = true;
      break;
    }
    logits = state.append(best);
  }
  return result;
}

/// The verification function F: 1 iff the last step contains the
/// ground-truth answer (canonical-integer equality), else 0.
inline int verify(const ReasoningPath& path, const std::string& answer, const Vocabulary& vocab) {
  require(!path.steps.empty(), "verify: empty path");
  return extract_answer(path.steps.back(), vocab) == canonicalize_int(answer) ? 1 : 0;
}

}  // namespace rpo
