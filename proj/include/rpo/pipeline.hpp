#pragma once

/**
 * End-to-end generation + exploration over the train split, and the
 * JSONL artifact layer (refpaths / pairs / prefpairs / exploration trace
 * / dataset-size report).
 *
 * Problems are independent work items; workers fan out with per-problem
 * streams and a single collector writes files in problem-id order, so
 * output bytes are identical for any worker count. Datasets reloaded
 * from disk are re-verified by an independent audit pass.
 */

#include <filesystem>
#include <string>
#include <vector>

#include "rpo/corpus.hpp"
#include "rpo/explorer.hpp"
#include "rpo/io.hpp"
#include "rpo/threadpool.hpp"
#include "rpo/version.hpp"

namespace rpo {

struct PipelineConfig {
  uint64_t seed = 1;
  double temperature = 0.5;
  int max_new_tokens = 160;
  StrategyConfig strategy;
  int workers = 1;
};

struct PipelineResult {
  std::vector<PipelineRecord> records;  // problem-id order, one per train problem
  MethodDatasets datasets;
};

/// Run generation then exploration for every train problem.
inline PipelineResult run_pipeline(const ModelParams& base,
                                   const std::vector<const Problem*>& train_problems,
                                   const Vocabulary& vocab, const PipelineConfig& cfg) {
  require(!train_problems.empty(), "pipeline: empty train split");
  SampleConfig sample_cfg;
  sample_cfg.temperature = cfg.temperature;
  sample_cfg.max_new_tokens = cfg.max_new_tokens;
  const SampleFn sampler = model_sampler(base, sample_cfg, vocab);

  PipelineResult result;
  result.records.resize(train_problems.size());
  parallel_for(train_problems.size(), cfg.workers, [&](size_t i) {
    PipelineRecord rec;
    rec.problem = train_problems[i];
    rec.generation =
        generate_reference_paths(sampler, *rec.problem, vocab, cfg.strategy, cfg.seed);
    if (rec.generation.example) {
      rec.pairs = explore_branch_pairs(sampler, *rec.problem,
                                       rec.generation.example->reference_paths.front(), vocab,
                                       cfg.seed, &rec.trace);
    }
    result.records[i] = std::move(rec);
  });
  result.datasets = build_method_datasets(result.records, vocab);
  return result;
}

// ============================================================================
// Artifacts
// ============================================================================

namespace detail {

inline Json path_to_json(const std::vector<TokenSeq>& steps, const Vocabulary& vocab) {
  Json out = Json::array();
  for (const auto& s : steps) out.push_back(vocab.decode(s));
  return out;
}

inline std::vector<TokenSeq> path_from_json(const Json& steps, const Vocabulary& vocab) {
  std::vector<TokenSeq> out;
  for (const auto& s : steps) out.push_back(vocab.encode(s.get<std::string>()));
  return out;
}

}  // namespace detail

inline void write_pipeline_artifacts(const PipelineResult& result, const PipelineConfig& cfg,
                                     const std::filesystem::path& dir, const Vocabulary& vocab) {
  ensure_dir(dir);

  std::vector<Json> refpaths, pairs, prefpairs, trace, gen_trace;
  for (const auto& rec : result.records) {
    {
      Json row;
      row["problem_id"] = rec.problem->id;
      row["attempts_used"] = rec.generation.attempts_used;
      row["kept"] = rec.generation.example.has_value();
      gen_trace.push_back(std::move(row));
    }
    if (rec.generation.example) {
      const RpoExample& ex = *rec.generation.example;
      Json row;
      row["problem_id"] = ex.problem_id;
      row["strategy"] = strategy_name(cfg.strategy);
      Json paths = Json::array();
      for (const auto& path : ex.reference_paths)
        paths.push_back(detail::path_to_json(path.steps, vocab));
      row["reference_paths"] = paths;
      row["attempts_used"] = ex.attempts_used;
      refpaths.push_back(std::move(row));
    }
    for (const auto& pair : rec.pairs) {
      Json row;
      row["problem_id"] = rec.problem->id;
      row["step_index"] = pair.start_index;
      row["favorable"] = detail::path_to_json(pair.favorable.steps, vocab);
      row["unfavorable"] = detail::path_to_json(pair.unfavorable.steps, vocab);
      pairs.push_back(std::move(row));
    }
    for (const auto& t : rec.trace) {
      Json row;
      row["problem_id"] = t.problem_id;
      row["step_index"] = t.step_index;
      row["samples"] = t.samples_used;
      row["formed"] = t.pair_formed;
      trace.push_back(std::move(row));
    }
  }
  for (const auto& pref : result.datasets.pref_pairs) {
    Json row;
    row["problem_id"] = pref.problem_id;
    row["accepted"] = detail::path_to_json(pref.accepted.steps, vocab);
    row["rejected"] = detail::path_to_json(pref.rejected.steps, vocab);
    prefpairs.push_back(std::move(row));
  }

  write_jsonl(dir / "refpaths.jsonl", refpaths);
  write_jsonl(dir / "pairs.jsonl", pairs);
  write_jsonl(dir / "prefpairs.jsonl", prefpairs);
  write_jsonl(dir / "explore_trace.jsonl", trace);
  write_jsonl(dir / "gen_trace.jsonl", gen_trace);

  Json report;
  report["counts"]["sft"] = result.datasets.sft.size();
  report["counts"]["rft"] = result.datasets.rft.size();
  report["counts"]["dpo_orpo_pairs"] = result.datasets.pref_pairs.size();
  report["counts"]["rpo"] = result.datasets.rpo.size();
  report["dropped_no_correct"] = result.datasets.dropped_no_correct;
  report["reference_but_no_pairs"] = result.datasets.reference_but_no_pairs;
  report["config"]["seed"] = cfg.seed;
  report["config"]["temperature"] = cfg.temperature;
  report["config"]["max_new_tokens"] = cfg.max_new_tokens;
  report["config"]["strategy"] = strategy_name(cfg.strategy);
  report["config"]["generation_cap"] = kGenerationAttemptCap;
  report["config"]["branch_sample_cap"] = kBranchSampleCap;
  report["config"]["version"] = kCodeVersion;
  write_json(dir / "datasets.report.json", report);
}

/// Rebuild the method datasets from artifacts; every label is re-checked
/// by the audit pass before anything trains on it.
inline MethodDatasets load_pipeline_artifacts(const std::filesystem::path& dir,
                                              const std::vector<const Problem*>& train_problems,
                                              const Vocabulary& vocab) {
  std::map<uint64_t, const Problem*> by_id;
  for (const Problem* p : train_problems) by_id[p->id] = p;

  MethodDatasets ds;
  for (const Problem* p : train_problems) {
    SftItem sft;
    sft.problem_id = p->id;
    sft.answer_statement.source = PathSource::ground_truth;
    sft.answer_statement.steps = {p->gt_steps.back()};
    ds.sft.push_back(std::move(sft));
  }

  std::map<uint64_t, RpoExample> examples;
  for (const auto& row : read_jsonl(dir / "refpaths.jsonl")) {
    RpoExample ex;
    ex.problem_id = row.at("problem_id").get<uint64_t>();
    ex.attempts_used = row.at("attempts_used").get<int>();
    for (const auto& path : row.at("reference_paths")) {
      ReasoningPath rp;
      rp.source = PathSource::model_sampled;
      rp.steps = detail::path_from_json(path, vocab);
      ex.reference_paths.push_back(std::move(rp));
    }
    require(by_id.count(ex.problem_id) != 0, "artifacts reference unknown problem");
    examples[ex.problem_id] = std::move(ex);
  }

  for (const auto& row : read_jsonl(dir / "pairs.jsonl")) {
    const uint64_t id = row.at("problem_id").get<uint64_t>();
    auto it = examples.find(id);
    require(it != examples.end(), "pairs.jsonl references a problem without a reference path");
    BranchPair pair;
    pair.start_index = row.at("step_index").get<size_t>();
    pair.favorable.start_index = pair.start_index;
    pair.favorable.steps = detail::path_from_json(row.at("favorable"), vocab);
    pair.favorable.label = 1;
    pair.unfavorable.start_index = pair.start_index;
    pair.unfavorable.steps = detail::path_from_json(row.at("unfavorable"), vocab);
    pair.unfavorable.label = 0;
    it->second.branch_pairs.push_back(std::move(pair));
  }

  for (auto& [id, ex] : examples) {
    PathItem item;
    item.problem_id = id;
    item.path = ex.reference_paths.front();
    ds.rft.push_back(std::move(item));
    if (ex.branch_pairs.empty()) ds.reference_but_no_pairs += 1;
    else ds.rpo.push_back(ex);
  }
  ds.dropped_no_correct = train_problems.size() - examples.size();

  for (const auto& row : read_jsonl(dir / "prefpairs.jsonl")) {
    PreferencePair pref;
    pref.problem_id = row.at("problem_id").get<uint64_t>();
    pref.accepted.steps = detail::path_from_json(row.at("accepted"), vocab);
    pref.rejected.steps = detail::path_from_json(row.at("rejected"), vocab);
    ds.pref_pairs.push_back(std::move(pref));
  }

  audit_datasets(ds, train_problems, vocab);
  return ds;
}

}  // namespace rpo
