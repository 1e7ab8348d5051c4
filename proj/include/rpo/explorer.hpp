#pragma once

/**
 * Generation and exploration stages: reference-path collection with the
 * 10-attempt cap, per-step branch-pair search with the 10-sample cap,
 * dedup, and construction of the per-method training datasets under the
 * data-fairness rules (every method uses all viable samples, at most one
 * accepted path per problem).
 *
 * Sampling is injected as a callable `(prefix, attempt_stream) ->
 * GenerationResult`, so tests can script exact output schedules.
 */

#include <algorithm>
#include <functional>
#include <map>
#include <optional>
#include <set>
#include <string>
#include <vector>

#include "rpo/encoding.hpp"
#include "rpo/problem.hpp"
#include "rpo/sampler.hpp"

namespace rpo {

// ============================================================================
// Domain types
// ============================================================================

struct Branch {
  size_t start_index = 1;          // 1-based step index into the reference path
  std::vector<TokenSeq> steps;     // S'_i .. S'_l
  int label = 0;                   // F-value

  bool same_tokens(const Branch& other) const { return steps == other.steps; }
};

struct BranchPair {
  size_t start_index = 1;
  Branch favorable;    // label 1
  Branch unfavorable;  // label 0
};

struct RpoExample {
  uint64_t problem_id = 0;
  std::vector<ReasoningPath> reference_paths;  // nonempty, all F=1
  std::vector<BranchPair> branch_pairs;        // indexed against reference_paths[0]
  int attempts_used = 0;
};

struct PreferencePair {
  uint64_t problem_id = 0;
  ReasoningPath accepted;  // F=1
  ReasoningPath rejected;  // F=0
};

enum class ReferenceStrategy { first_correct, random_correct, multi_k };

struct StrategyConfig {
  ReferenceStrategy strategy = ReferenceStrategy::first_correct;
  int multi_k = 3;
};

inline std::string strategy_name(const StrategyConfig& s) {
  switch (s.strategy) {
    case ReferenceStrategy::first_correct: return "first";
    case ReferenceStrategy::random_correct: return "random";
    case ReferenceStrategy::multi_k: return "multi:" + std::to_string(s.multi_k);
  }
  return "?";
}

inline StrategyConfig strategy_from_name(const std::string& name) {
  StrategyConfig s;
  if (name == "first") {
    s.strategy = ReferenceStrategy::first_correct;
  } else if (name == "random") {
    s.strategy = ReferenceStrategy::random_correct;
  } else if (name.rfind("multi:", 0) == 0) {
    s.strategy = ReferenceStrategy::multi_k;
    s.multi_k = std::stoi(name.substr(6));
    require(s.multi_k >= 1, "reference strategy multi:K needs K >= 1");
  } else {
    throw UsageError("unknown reference strategy: " + name);
  }
  return s;
}

/// Sampler abstraction: draw one continuation from a prefix using the
/// given per-attempt stream.
using SampleFn = std::function<GenerationResult(const TokenSeq& prefix, RngStream& rng)>;

inline SampleFn model_sampler(const ModelParams& params, const SampleConfig& cfg,
                              const Vocabulary& vocab) {
  return [&params, cfg, &vocab](const TokenSeq& prefix, RngStream& rng) {
    return sample_continuation(params, prefix, cfg, vocab, rng);
  };
}

// ============================================================================
// Generation stage
// ============================================================================

constexpr int kGenerationAttemptCap = 10;
constexpr int kBranchSampleCap = 10;

struct GenerationOutcome {
  std::optional<RpoExample> example;          // empty when the problem was dropped
  std::vector<ReasoningPath> incorrect_paths; // complete (<eos>) wrong paths, draw order
  int attempts_used = 0;
};

/// Parse a generation into a verified path. Truncated generations score
/// F=0 for attempt accounting but yield no storable path, so everything
/// kept downstream satisfies its label invariant literally.
inline std::optional<std::pair<ReasoningPath, int>> parse_generation(
    const GenerationResult& gen, const std::string& answer, const Vocabulary& vocab) {
  if (!gen.hit_eos) return std::nullopt;
  ReasoningPath path;
  try {
    path = split_steps(gen.tokens, vocab);
  } catch (const AuditError&) {
    return std::nullopt;  // no non-empty step
  }
  return std::make_pair(path, verify(path, answer, vocab));
}

/// Sample up to 10 reference candidates at temperature T. first_correct
/// stops at the first verified path; random_correct / multi:K always
/// draw the full budget, then pick one / up to K distinct correct paths.
/// A problem with no correct draw is dropped (reported, not an error).
inline GenerationOutcome generate_reference_paths(const SampleFn& sample, const Problem& problem,
                                                  const Vocabulary& vocab,
                                                  const StrategyConfig& strategy,
                                                  uint64_t global_seed) {
  const TokenSeq prompt = prompt_tokens(problem, vocab);
  GenerationOutcome outcome;
  std::vector<ReasoningPath> correct;

  const bool stop_early = strategy.strategy == ReferenceStrategy::first_correct;
  for (int attempt = 0; attempt < kGenerationAttemptCap; ++attempt) {
    RngStream rng = RngStream::derive(global_seed, {0x67656E65ULL, problem.id,
                                                    static_cast<uint64_t>(attempt)});
    const GenerationResult gen = sample(prompt, rng);
    outcome.attempts_used = attempt + 1;
    auto parsed = parse_generation(gen, problem.answer, vocab);
    if (!parsed) continue;
    if (parsed->second == 1) {
      correct.push_back(parsed->first);
      if (stop_early) break;
    } else {
      outcome.incorrect_paths.push_back(parsed->first);
    }
  }
  if (correct.empty()) return outcome;  // dropped

  RpoExample example;
  example.problem_id = problem.id;
  example.attempts_used = outcome.attempts_used;
  switch (strategy.strategy) {
    case ReferenceStrategy::first_correct:
      example.reference_paths.push_back(correct.front());
      break;
    case ReferenceStrategy::random_correct: {
      RngStream pick = RngStream::derive(global_seed, {0x7069636BULL, problem.id});
      const auto idx = static_cast<size_t>(
          pick.uniform_int(0, static_cast<int64_t>(correct.size()) - 1));
      example.reference_paths.push_back(correct[idx]);
      break;
    }
    case ReferenceStrategy::multi_k: {
      std::vector<ReasoningPath> distinct;
      for (const auto& path : correct) {
        const bool dup = std::any_of(distinct.begin(), distinct.end(),
                                     [&](const ReasoningPath& p) { return p == path; });
        if (!dup) distinct.push_back(path);
        if (static_cast<int>(distinct.size()) == strategy.multi_k) break;
      }
      example.reference_paths = std::move(distinct);
      break;
    }
  }
  outcome.example = std::move(example);
  return outcome;
}

// ============================================================================
// Exploration stage
// ============================================================================

struct StepTrace {
  uint64_t problem_id = 0;
  size_t step_index = 1;
  int samples_used = 0;
  bool pair_formed = false;
};

/// For each step i of the reference path, sample continuations from the
/// shared prefix (Q, S_1..S_{i-1}) until one favorable and one unfavorable
/// branch are held, capped at 10 samples per step. Steps that fail to
/// produce a pair contribute nothing.
inline std::vector<BranchPair> explore_branch_pairs(const SampleFn& sample,
                                                    const Problem& problem,
                                                    const ReasoningPath& reference,
                                                    const Vocabulary& vocab,
                                                    uint64_t global_seed,
                                                    std::vector<StepTrace>* trace = nullptr) {
  require(!reference.steps.empty(), "explore_branch_pairs: empty reference path");
  require(verify(reference, problem.answer, vocab) == 1,
          "explore_branch_pairs: reference path does not verify");
  std::vector<BranchPair> pairs;
  const size_t n = reference.steps.size();
  for (size_t i = 1; i <= n; ++i) {
    const TokenSeq prefix = branch_prefix(problem, reference, i, vocab);
    std::optional<Branch> favorable, unfavorable;
    int samples = 0;
    for (int attempt = 0; attempt < kBranchSampleCap; ++attempt) {
      RngStream rng = RngStream::derive(
          global_seed, {0x6272616EULL, problem.id, static_cast<uint64_t>(i),
                        static_cast<uint64_t>(attempt)});
      const GenerationResult gen = sample(prefix, rng);
      ++samples;
      auto parsed = parse_generation(gen, problem.answer, vocab);
      if (!parsed) continue;
      Branch branch;
      branch.start_index = i;
      branch.steps = parsed->first.steps;
      branch.label = parsed->second;
      if (branch.label == 1 && !favorable) favorable = std::move(branch);
      else if (branch.label == 0 && !unfavorable) unfavorable = std::move(branch);
      if (favorable && unfavorable) break;
    }
    const bool formed = favorable && unfavorable;
    if (trace) trace->push_back({problem.id, i, samples, formed});
    if (formed) {
      BranchPair pair;
      pair.start_index = i;
      pair.favorable = std::move(*favorable);
      pair.unfavorable = std::move(*unfavorable);
      pairs.push_back(std::move(pair));
    }
  }
  return pairs;
}

// ============================================================================
// Dedup
// ============================================================================

/// Remove exact token-sequence duplicates, keeping the first occurrence.
template <typename T, typename KeyFn>
std::vector<T> dedup_by(const std::vector<T>& items, KeyFn&& key) {
  std::vector<T> out;
  std::set<decltype(key(items[0]))> seen;
  for (const auto& item : items) {
    if (seen.insert(key(item)).second) out.push_back(item);
  }
  return out;
}

inline std::vector<ReasoningPath> dedup(const std::vector<ReasoningPath>& paths) {
  return dedup_by(paths, [](const ReasoningPath& p) { return p.steps; });
}

inline std::vector<Branch> dedup(const std::vector<Branch>& branches) {
  return dedup_by(branches, [](const Branch& b) { return std::make_pair(b.start_index, b.steps); });
}

// ============================================================================
// Per-method datasets
// ============================================================================

struct SftItem {
  uint64_t problem_id = 0;
  ReasoningPath answer_statement;  // single final-template step
};

struct PathItem {
  uint64_t problem_id = 0;
  ReasoningPath path;
};

struct MethodDatasets {
  std::vector<SftItem> sft;                // all train problems
  std::vector<PathItem> rft;               // one correct path per viable problem
  std::vector<PreferencePair> pref_pairs;  // DPO / ORPO
  // Examples with at least one formed branch pair. A problem whose
  // reference path paired at no step stays in the RFT/reference pool
  // (counted in reference_but_no_pairs) but trains no pair terms.
  std::vector<RpoExample> rpo;
  size_t dropped_no_correct = 0;
  size_t reference_but_no_pairs = 0;
};

struct PipelineRecord {
  const Problem* problem = nullptr;
  GenerationOutcome generation;
  std::vector<BranchPair> pairs;
  std::vector<StepTrace> trace;
};

inline void audit_datasets(const MethodDatasets& ds,
                           const std::vector<const Problem*>& train_problems,
                           const Vocabulary& vocab);

/// Assemble every method's training set from the generation/exploration
/// artifacts, applying the fairness filters from the method definitions.
inline MethodDatasets build_method_datasets(const std::vector<PipelineRecord>& records,
                                            const Vocabulary& vocab) {
  require(!records.empty(), "build_method_datasets: empty train split");
  MethodDatasets out;
  for (const auto& rec : records) {
    const Problem& problem = *rec.problem;

    SftItem sft;
    sft.problem_id = problem.id;
    sft.answer_statement.source = PathSource::ground_truth;
    sft.answer_statement.steps = {problem.gt_steps.back()};
    out.sft.push_back(std::move(sft));

    if (!rec.generation.example) {
      out.dropped_no_correct += 1;
      continue;
    }
    const RpoExample& example = *rec.generation.example;

    PathItem rft;
    rft.problem_id = problem.id;
    rft.path = example.reference_paths.front();
    out.rft.push_back(std::move(rft));

    if (!rec.generation.incorrect_paths.empty()) {
      PreferencePair pair;
      pair.problem_id = problem.id;
      pair.accepted = example.reference_paths.front();
      pair.rejected = rec.generation.incorrect_paths.front();
      out.pref_pairs.push_back(std::move(pair));
    }

    if (rec.pairs.empty()) {
      out.reference_but_no_pairs += 1;
      continue;
    }
    RpoExample full = example;
    full.branch_pairs = rec.pairs;
    out.rpo.push_back(std::move(full));
  }

  // Re-check every label with an independent verify pass.
  std::vector<const Problem*> problems;
  for (const auto& rec : records) problems.push_back(rec.problem);
  audit_datasets(out, problems, vocab);
  return out;
}

/// Fairness and label audit; throws AuditError on any violation.
inline void audit_datasets(const MethodDatasets& ds,
                           const std::vector<const Problem*>& train_problems,
                           const Vocabulary& vocab) {
  std::map<uint64_t, const Problem*> by_id;
  for (const Problem* p : train_problems) by_id[p->id] = p;
  auto answer_of = [&](uint64_t id) -> const std::string& {
    auto it = by_id.find(id);
    require(it != by_id.end(), "audit: dataset references unknown problem");
    return it->second->answer;
  };

  require(ds.sft.size() == train_problems.size(), "audit: SFT must cover every train problem");
  for (const auto& item : ds.sft)
    require(item.answer_statement.steps.size() == 1, "audit: SFT item must have no steps");

  std::set<uint64_t> seen;
  for (const auto& item : ds.rft) {
    require(verify(item.path, answer_of(item.problem_id), vocab) == 1,
            "audit: RFT path does not verify");
    require(seen.insert(item.problem_id).second, "audit: duplicate RFT problem");
  }

  seen.clear();
  for (const auto& pair : ds.pref_pairs) {
    require(verify(pair.accepted, answer_of(pair.problem_id), vocab) == 1,
            "audit: accepted path must verify to 1");
    require(verify(pair.rejected, answer_of(pair.problem_id), vocab) == 0,
            "audit: rejected path must verify to 0");
    require(!(pair.accepted == pair.rejected), "audit: degenerate preference pair");
    require(seen.insert(pair.problem_id).second, "audit: duplicate preference problem");
  }

  seen.clear();
  for (const auto& example : ds.rpo) {
    require(!example.reference_paths.empty(), "audit: RPO example without reference path");
    require(!example.branch_pairs.empty(), "audit: RPO example without branch pairs");
    require(example.attempts_used <= kGenerationAttemptCap, "audit: generation cap exceeded");
    require(seen.insert(example.problem_id).second, "audit: duplicate RPO problem");
    const std::string& answer = answer_of(example.problem_id);
    const auto distinct = dedup(example.reference_paths);
    require(distinct.size() == example.reference_paths.size(),
            "audit: duplicate reference paths");
    for (const auto& ref : example.reference_paths)
      require(verify(ref, answer, vocab) == 1, "audit: reference path must verify to 1");
    const size_t n = example.reference_paths.front().steps.size();
    std::set<size_t> step_seen;
    for (const auto& pair : example.branch_pairs) {
      require(pair.start_index >= 1 && pair.start_index <= n, "audit: pair index out of range");
      require(pair.favorable.start_index == pair.start_index &&
                  pair.unfavorable.start_index == pair.start_index,
              "audit: pair branches disagree on start index");
      require(step_seen.insert(pair.start_index).second,
              "audit: more than one pair per step index");
      ReasoningPath fav{pair.favorable.steps, PathSource::model_sampled};
      ReasoningPath unf{pair.unfavorable.steps, PathSource::model_sampled};
      require(verify(fav, answer, vocab) == 1, "audit: favorable branch must verify to 1");
      require(verify(unf, answer, vocab) == 0, "audit: unfavorable branch must verify to 0");
      require(!pair.favorable.same_tokens(pair.unfavorable), "audit: identical pair branches");
    }
  }

  require(ds.rpo.size() <= ds.rft.size() && ds.rft.size() <= ds.sft.size(),
          "audit: filter chain must be monotone (|RPO| <= |RFT| <= |SFT|)");
}

}  // namespace rpo
