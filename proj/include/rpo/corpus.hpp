#pragma once

/**
 * Corpus construction: disjoint seed/train/eval splits of generated
 * problems, plus the problems.jsonl serialization.
 *
 * Disjointness is by construction: chain signatures (operand sequence +
 * operator sequence) are unique corpus-wide, so the seed split shares
 * neither ids nor signatures with train/eval. Per-problem streams derive
 * from (seed, id), making generation order-independent.
 */

#include <filesystem>
#include <string>
#include <unordered_set>
#include <vector>

#include "rpo/io.hpp"
#include "rpo/problem.hpp"

namespace rpo {

enum class Split { seed, train, eval };

inline const char* split_name(Split s) {
  switch (s) {
    case Split::seed: return "seed";
    case Split::train: return "train";
    case Split::eval: return "eval";
  }
  return "?";
}

inline Split split_from_name(const std::string& name) {
  if (name == "seed") return Split::seed;
  if (name == "train") return Split::train;
  if (name == "eval") return Split::eval;
  throw UsageError("unknown split name: " + name);
}

struct CorpusConfig {
  uint64_t seed = 1;
  size_t total = 2000;
  long long bound = 9999;
  int operand_max = 9;
  // Depth mixture over 1..6; covers all four step-count buckets.
  std::vector<double> depth_weights = {0.10, 0.18, 0.20, 0.20, 0.17, 0.15};
  double train_frac = 0.70;
  double seed_frac = 0.15;  // remainder is eval
};

struct Corpus {
  std::vector<Problem> problems;           // id order
  std::vector<Split> splits;               // parallel to problems
  CorpusConfig config;

  std::vector<const Problem*> split_problems(Split s) const {
    std::vector<const Problem*> out;
    for (size_t i = 0; i < problems.size(); ++i)
      if (splits[i] == s) out.push_back(&problems[i]);
    return out;
  }
};

/// Generate `total` problems with corpus-unique signatures and assign
/// splits by a seeded shuffle of ids.
inline Corpus generate_corpus(const CorpusConfig& cfg, const Vocabulary& vocab) {
  require(!cfg.depth_weights.empty(), "corpus: empty depth mixture");
  Corpus corpus;
  corpus.config = cfg;
  std::unordered_set<std::string> seen_signatures;

  GenConfig gen;
  gen.bound = cfg.bound;
  gen.operand_max = cfg.operand_max;
  gen.first_operand_min = -cfg.operand_max;
  gen.first_operand_max = cfg.operand_max;

  for (uint64_t id = 0; corpus.problems.size() < cfg.total; ++id) {
    RngStream stream = RngStream::derive(cfg.seed, {0x70726F62ULL, id});
    const int depth = 1 + stream.categorical(cfg.depth_weights);
    Problem problem;
    bool fresh = false;
    for (int attempt = 0; attempt < 200 && !fresh; ++attempt) {
      problem = generate_problem(stream, depth, cfg.bound, vocab, gen);
      fresh = seen_signatures.insert(problem.signature).second;
    }
    require(fresh, "corpus: signature space exhausted for depth " + std::to_string(depth));
    problem.id = id;
    corpus.problems.push_back(std::move(problem));
  }

  // Split assignment: seeded permutation of indices.
  RngStream split_stream = RngStream::derive(cfg.seed, {0x73706C69ULL});
  const auto perm = split_stream.permutation(cfg.total);
  const size_t n_train = static_cast<size_t>(cfg.train_frac * static_cast<double>(cfg.total));
  const size_t n_seed = static_cast<size_t>(cfg.seed_frac * static_cast<double>(cfg.total));
  corpus.splits.assign(cfg.total, Split::eval);
  for (size_t k = 0; k < cfg.total; ++k) {
    if (k < n_train) corpus.splits[perm[k]] = Split::train;
    else if (k < n_train + n_seed) corpus.splits[perm[k]] = Split::seed;
  }
  return corpus;
}

// ============================================================================
// problems.jsonl
// ============================================================================

inline void save_corpus(const Corpus& corpus, const std::filesystem::path& path,
                        const Vocabulary& vocab) {
  std::vector<Json> rows;
  rows.reserve(corpus.problems.size());
  for (size_t i = 0; i < corpus.problems.size(); ++i) {
    const Problem& p = corpus.problems[i];
    Json row;
    row["id"] = p.id;
    row["question"] = vocab.decode(p.question);
    row["answer"] = p.answer;
    Json steps = Json::array();
    for (const auto& s : p.gt_steps) steps.push_back(vocab.decode(s));
    row["gt_steps"] = steps;
    row["depth"] = p.depth;
    row["split"] = split_name(corpus.splits[i]);
    rows.push_back(std::move(row));
  }
  write_jsonl(path, rows);
}

inline Corpus load_corpus(const std::filesystem::path& path, const Vocabulary& vocab) {
  Corpus corpus;
  for (const auto& row : read_jsonl(path)) {
    Problem p;
    p.id = row.at("id").get<uint64_t>();
    p.question = vocab.encode(row.at("question").get<std::string>());
    p.answer = row.at("answer").get<std::string>();
    for (const auto& s : row.at("gt_steps")) p.gt_steps.push_back(vocab.encode(s.get<std::string>()));
    p.depth = row.at("depth").get<int>();
    corpus.problems.push_back(std::move(p));
    corpus.splits.push_back(split_from_name(row.at("split").get<std::string>()));
  }
  return corpus;
}

/// Re-verify every stored answer with the independent evaluator.
inline void audit_corpus(const Corpus& corpus, const Vocabulary& vocab) {
  for (const auto& p : corpus.problems) {
    const std::string evaluated = evaluate_question(p.question, vocab);
    require(evaluated == p.answer,
            "corpus audit: problem " + std::to_string(p.id) + " answer mismatch (" +
                evaluated + " vs " + p.answer + ")");
    require(p.gt_steps.size() == static_cast<size_t>(p.depth) + 1,
            "corpus audit: step count mismatch for problem " + std::to_string(p.id));
    require(extract_answer(p.gt_steps.back(), vocab) == p.answer,
            "corpus audit: final step does not contain the answer");
  }
}

}  // namespace rpo
