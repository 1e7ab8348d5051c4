#pragma once

/**
 * Seeded training loops for every method, base-model pretraining, and
 * the evaluation suite (greedy accuracy, step-count buckets, numeric
 * literal overlap P/R/F1).
 *
 * Training is single-writer: per-example gradients may be computed on a
 * worker pool, but they are summed in example order and applied by one
 * optimizer, so checkpoints are byte-identical for any worker count.
 * The gradient-accumulation unit for the combined objective is one
 * example (its reference term plus all of its pair terms together).
 */

#include <array>
#include <cmath>
#include <map>
#include <string>
#include <vector>

#include "rpo/corpus.hpp"
#include "rpo/encoding.hpp"
#include "rpo/explorer.hpp"
#include "rpo/io.hpp"
#include "rpo/model.hpp"
#include "rpo/objective.hpp"
#include "rpo/sampler.hpp"
#include "rpo/threadpool.hpp"
#include "rpo/version.hpp"

namespace rpo {

enum class Method { sft, rft, dpo, orpo, rpo };

inline const char* method_name(Method m) {
  switch (m) {
    case Method::sft: return "sft";
    case Method::rft: return "rft";
    case Method::dpo: return "dpo";
    case Method::orpo: return "orpo";
    case Method::rpo: return "rpo";
  }
  return "?";
}

inline Method method_from_name(const std::string& name) {
  for (Method m : {Method::sft, Method::rft, Method::dpo, Method::orpo, Method::rpo})
    if (name == method_name(m)) return m;
  throw UsageError("unknown method: " + name);
}

struct RunConfig {
  Method method = Method::rpo;
  uint64_t seed = 1;
  double lambda = 0.3;
  double temperature = 0.5;
  PairObjective pair_objective = PairObjective::odds_ratio;
  StrategyConfig reference_strategy;
  double dp_beta = 0.1;
  bool length_normalize = true;
  double lr = 1e-3;
  double weight_decay = 0.0;
  double grad_clip = 1.0;  // global-norm clip; 0 disables
  int batch_size = 8;
  int epochs = 3;
  int max_new_tokens = 160;
  int generation_cap = kGenerationAttemptCap;
  int branch_sample_cap = kBranchSampleCap;

  ObjectiveConfig objective() const {
    ObjectiveConfig cfg;
    cfg.lambda = lambda;
    cfg.pair_objective = pair_objective;
    cfg.dp_beta = dp_beta;
    cfg.length_normalize = length_normalize;
    return cfg;
  }

  /// Resolved-config echo embedded in every artifact. Worker count is an
  /// execution detail, deliberately not part of the echo so outputs are
  /// byte-identical across worker counts.
  Json echo() const {
    Json j;
    j["method"] = method_name(method);
    j["seed"] = seed;
    j["lambda"] = lambda;
    j["temperature"] = temperature;
    j["pair_objective"] = pair_objective_name(pair_objective);
    j["reference_strategy"] = strategy_name(reference_strategy);
    j["dp_beta"] = dp_beta;
    j["length_normalize"] = length_normalize;
    j["lr"] = lr;
    j["weight_decay"] = weight_decay;
    j["grad_clip"] = grad_clip;
    j["batch_size"] = batch_size;
    j["epochs"] = epochs;
    j["max_new_tokens"] = max_new_tokens;
    j["generation_cap"] = generation_cap;
    j["branch_sample_cap"] = branch_sample_cap;
    j["version"] = kCodeVersion;
    return j;
  }
};

struct EpochMetrics {
  int epoch = 0;
  double mean_l_ref = 0.0;
  double mean_l_exp = 0.0;
  double mean_total = 0.0;
  double grad_norm = 0.0;
};

struct TrainResult {
  ModelParams params;
  OptimState optim;
  std::vector<EpochMetrics> metrics;
};

// ============================================================================
// Training
// ============================================================================

namespace detail {

struct ProblemIndex {
  std::map<uint64_t, const Problem*> by_id;

  explicit ProblemIndex(const std::vector<const Problem*>& problems) {
    for (const Problem* p : problems) by_id[p->id] = p;
  }

  const Problem& at(uint64_t id) const {
    auto it = by_id.find(id);
    require(it != by_id.end(), "unknown problem id " + std::to_string(id));
    return *it->second;
  }
};

}  // namespace detail

/// Train one method over its dataset. Deterministic given the seed; the
/// dataset must have been built (and audited) by build_method_datasets.
inline TrainResult train(const ModelParams& base, const MethodDatasets& datasets,
                         const std::vector<const Problem*>& train_problems,
                         const Vocabulary& vocab, const RunConfig& cfg, int workers = 1) {
  // Data-fairness audit at training time; violations abort.
  audit_datasets(datasets, train_problems, vocab);
  const detail::ProblemIndex index(train_problems);
  const ObjectiveConfig objective = cfg.objective();

  size_t n_items = 0;
  switch (cfg.method) {
    case Method::sft: n_items = datasets.sft.size(); break;
    case Method::rft: n_items = datasets.rft.size(); break;
    case Method::dpo:
    case Method::orpo: n_items = datasets.pref_pairs.size(); break;
    case Method::rpo: n_items = datasets.rpo.size(); break;
  }
  require(n_items > 0, std::string("train: empty dataset for method ") + method_name(cfg.method));

  TrainResult result;
  result.params = base;
  OptimConfig optim_cfg;
  optim_cfg.lr = cfg.lr;
  optim_cfg.weight_decay = cfg.weight_decay;
  result.optim = init_optimizer(result.params, optim_cfg);

  // DPO keeps a frozen snapshot of the pre-training-start policy.
  const ModelParams ref_params = base;

  auto example_loss = [&](size_t item, Gradients& grads) -> LossBreakdown {
    Tape tape;
    LossGraph graph;
    switch (cfg.method) {
      case Method::sft: {
        const SftItem& it = datasets.sft[item];
        graph = sft_loss(tape, result.params, index.at(it.problem_id), it.answer_statement, vocab);
        break;
      }
      case Method::rft: {
        const PathItem& it = datasets.rft[item];
        graph = rft_loss(tape, result.params, index.at(it.problem_id), it.path, vocab);
        break;
      }
      case Method::dpo: {
        const PreferencePair& it = datasets.pref_pairs[item];
        graph = dpo_loss(tape, result.params, ref_params, index.at(it.problem_id), it, vocab,
                         objective);
        break;
      }
      case Method::orpo: {
        const PreferencePair& it = datasets.pref_pairs[item];
        graph = orpo_loss(tape, result.params, index.at(it.problem_id), it, vocab, objective);
        break;
      }
      case Method::rpo: {
        const RpoExample& it = datasets.rpo[item];
        graph = rpo_loss(tape, result.params, index.at(it.problem_id), it, vocab, objective);
        break;
      }
    }
    tape.backward(graph.loss);
    grads.accumulate_from(result.params, tape);
    return graph.breakdown;
  };

  auto item_problem_id = [&](size_t item) -> uint64_t {
    switch (cfg.method) {
      case Method::sft: return datasets.sft[item].problem_id;
      case Method::rft: return datasets.rft[item].problem_id;
      case Method::dpo:
      case Method::orpo: return datasets.pref_pairs[item].problem_id;
      case Method::rpo: return datasets.rpo[item].problem_id;
    }
    return 0;
  };

  std::vector<Gradients> slot_grads;
  std::vector<LossBreakdown> slot_breakdowns(static_cast<size_t>(cfg.batch_size));
  for (int i = 0; i < cfg.batch_size; ++i) slot_grads.push_back(Gradients::zeros_like(base));
  Gradients batch_grads = Gradients::zeros_like(base);

  for (int epoch = 0; epoch < cfg.epochs; ++epoch) {
    RngStream shuffle = RngStream::derive(cfg.seed, {0x73687566ULL, static_cast<uint64_t>(epoch)});
    const auto perm = shuffle.permutation(n_items);

    EpochMetrics metrics;
    metrics.epoch = epoch;
    size_t n_batches = 0;

    for (size_t start = 0; start < n_items; start += static_cast<size_t>(cfg.batch_size)) {
      const size_t batch = std::min(static_cast<size_t>(cfg.batch_size), n_items - start);
      parallel_for(batch, workers, [&](size_t k) {
        slot_grads[k].set_zero();
        slot_breakdowns[k] = example_loss(perm[start + k], slot_grads[k]);
      });

      batch_grads.set_zero();
      for (size_t k = 0; k < batch; ++k) {
        const LossBreakdown& bd = slot_breakdowns[k];
        if (!std::isfinite(bd.total))
          throw AuditError("train: non-finite loss on problem " +
                           std::to_string(item_problem_id(perm[start + k])));
        batch_grads.add(slot_grads[k]);
        metrics.mean_l_ref += bd.l_ref;
        metrics.mean_l_exp += bd.l_exp;
        metrics.mean_total += bd.total;
      }
      batch_grads.scale(1.0 / static_cast<double>(batch));
      const double norm = batch_grads.norm();
      if (cfg.grad_clip > 0.0 && norm > cfg.grad_clip)
        batch_grads.scale(cfg.grad_clip / norm);
      metrics.grad_norm += norm;
      ++n_batches;
      optimizer_step(result.params, batch_grads, result.optim);
    }

    metrics.mean_l_ref /= static_cast<double>(n_items);
    metrics.mean_l_exp /= static_cast<double>(n_items);
    metrics.mean_total /= static_cast<double>(n_items);
    metrics.grad_norm /= static_cast<double>(n_batches);
    result.metrics.push_back(metrics);

    require(result.params.all_finite(), "train: non-finite parameters after epoch " +
                                            std::to_string(epoch));
  }
  return result;
}

// ============================================================================
// Pretraining
// ============================================================================

struct PretrainConfig {
  ModelConfig model;
  uint64_t seed = 1;
  double lr = 1e-3;
  double weight_decay = 0.1;
  double grad_clip = 1.0;
  int batch_size = 8;
  int epochs = 300;
  int max_new_tokens = 160;
  double sanity_threshold = 0.5;  // greedy accuracy on depth-1 eval problems
};

/// Next-token training on question -> ground-truth solution sequences
/// from the seed split (loss masked to solution tokens). Fails with a
/// diagnostic when the depth-1 sanity accuracy is not reached.
inline ModelParams pretrain_base(const std::vector<const Problem*>& seed_problems,
                                 const std::vector<const Problem*>& eval_problems,
                                 const Vocabulary& vocab, const PretrainConfig& cfg,
                                 int workers = 1, std::vector<EpochMetrics>* metrics_out = nullptr) {
  require(!seed_problems.empty(), "pretrain_base: empty seed corpus");

  MethodDatasets ds;
  std::vector<const Problem*> problems;
  for (const Problem* p : seed_problems) {
    PathItem item;
    item.problem_id = p->id;
    item.path = render_solution(*p);
    ds.rft.push_back(std::move(item));
    SftItem sft;
    sft.problem_id = p->id;
    sft.answer_statement.steps = {p->gt_steps.back()};
    ds.sft.push_back(std::move(sft));
    problems.push_back(p);
  }

  RunConfig run;
  run.method = Method::rft;  // same masked-NLL kernel over gt paths
  run.seed = cfg.seed;
  run.lr = cfg.lr;
  run.weight_decay = cfg.weight_decay;
  run.grad_clip = cfg.grad_clip;
  run.batch_size = cfg.batch_size;
  run.epochs = cfg.epochs;

  const ModelParams init = init_model(cfg.model, cfg.seed);
  TrainResult result = train(init, ds, problems, vocab, run, workers);
  if (metrics_out) *metrics_out = result.metrics;

  int depth1 = 0, correct = 0;
  for (const Problem* p : eval_problems) {
    if (p->depth != 1) continue;
    ++depth1;
    const GenerationResult gen =
        greedy_decode(result.params, prompt_tokens(*p, vocab), cfg.max_new_tokens, vocab);
    auto parsed = parse_generation(gen, p->answer, vocab);
    if (parsed && parsed->second == 1) ++correct;
  }
  require(depth1 > 0, "pretrain_base: no depth-1 problems in the eval split");
  const double accuracy = static_cast<double>(correct) / static_cast<double>(depth1);
  if (accuracy <= cfg.sanity_threshold)
    throw AuditError("pretrain_base: depth-1 greedy accuracy " + std::to_string(accuracy) +
                     " below sanity threshold " + std::to_string(cfg.sanity_threshold) +
                     " after " + std::to_string(cfg.epochs) + " epochs");
  return result.params;
}

// ============================================================================
// Evaluation
// ============================================================================

struct PrfScore {
  double precision = 0.0;
  double recall = 0.0;
  double f1 = 0.0;
};

/// Overlap of canonical integer-literal multisets between a generated
/// path and the ground-truth path. Both empty -> (1,1,1); one empty ->
/// (0,0,0). All literals count, including the answer statement's.
inline PrfScore inter_prf(const ReasoningPath& generated, const ReasoningPath& ground_truth,
                          const Vocabulary& vocab) {
  require(!generated.steps.empty() && !ground_truth.steps.empty(), "inter_prf: empty path");
  auto literals = [&](const ReasoningPath& path) {
    std::map<std::string, int> counts;
    size_t total = 0;
    for (const auto& step : path.steps)
      for (const auto& lit : detail::integer_literals(step, vocab)) {
        counts[lit] += 1;
        ++total;
      }
    return std::make_pair(counts, total);
  };
  const auto [gen_counts, gen_total] = literals(generated);
  const auto [gt_counts, gt_total] = literals(ground_truth);
  if (gen_total == 0 && gt_total == 0) return {1.0, 1.0, 1.0};
  if (gen_total == 0 || gt_total == 0) return {0.0, 0.0, 0.0};
  size_t overlap = 0;
  for (const auto& [lit, count] : gen_counts) {
    auto it = gt_counts.find(lit);
    if (it != gt_counts.end()) overlap += static_cast<size_t>(std::min(count, it->second));
  }
  PrfScore score;
  score.precision = static_cast<double>(overlap) / static_cast<double>(gen_total);
  score.recall = static_cast<double>(overlap) / static_cast<double>(gt_total);
  score.f1 = (score.precision + score.recall) > 0.0
                 ? 2.0 * score.precision * score.recall / (score.precision + score.recall)
                 : 0.0;
  return score;
}

inline const std::array<const char*, 4>& bucket_labels() {
  static const std::array<const char*, 4> labels = {"1-2", "3-4", "5-6", "7+"};
  return labels;
}

inline int bucket_of(size_t gt_steps) {
  if (gt_steps <= 2) return 0;
  if (gt_steps <= 4) return 1;
  if (gt_steps <= 6) return 2;
  return 3;
}

struct ProblemRecord {
  uint64_t id = 0;
  std::vector<std::string> predicted_steps;
  int verdict = 0;
  int gt_depth = 0;
  size_t gt_step_count = 0;
  size_t predicted_step_count = 0;
  PrfScore prf;
};

struct EvalReport {
  double accuracy = 0.0;
  size_t n_eval = 0;
  std::map<std::string, double> per_bucket;   // bucket label -> accuracy
  std::map<std::string, size_t> bucket_sizes;
  double inter_precision = 0.0;
  double inter_recall = 0.0;
  double inter_f1 = 0.0;
  std::vector<ProblemRecord> records;
};

/// Greedy-decode every eval problem, verify, and aggregate.
inline EvalReport evaluate_accuracy(const ModelParams& params,
                                    const std::vector<const Problem*>& eval_problems,
                                    const Vocabulary& vocab, int max_new_tokens = 160,
                                    int workers = 1) {
  require(!eval_problems.empty(), "evaluate_accuracy: empty eval split");
  EvalReport report;
  report.n_eval = eval_problems.size();
  report.records.resize(eval_problems.size());

  parallel_for(eval_problems.size(), workers, [&](size_t i) {
    const Problem& problem = *eval_problems[i];
    ProblemRecord rec;
    rec.id = problem.id;
    rec.gt_depth = problem.depth;
    rec.gt_step_count = problem.gt_steps.size();
    const GenerationResult gen =
        greedy_decode(params, prompt_tokens(problem, vocab), max_new_tokens, vocab);
    const auto parsed = parse_generation(gen, problem.answer, vocab);
    if (parsed) {
      rec.verdict = parsed->second;
      rec.predicted_step_count = parsed->first.steps.size();
      for (const auto& step : parsed->first.steps) rec.predicted_steps.push_back(vocab.decode(step));
      rec.prf = inter_prf(parsed->first, render_solution(problem), vocab);
    } else {
      rec.verdict = 0;  // truncated or empty generation scores as incorrect
      rec.prf = {0.0, 0.0, 0.0};
    }
    report.records[i] = std::move(rec);
  });

  std::array<size_t, 4> bucket_n{};
  std::array<size_t, 4> bucket_correct{};
  for (const auto& rec : report.records) {
    report.accuracy += rec.verdict;
    report.inter_precision += rec.prf.precision;
    report.inter_recall += rec.prf.recall;
    report.inter_f1 += rec.prf.f1;
    const int b = bucket_of(rec.gt_step_count);
    bucket_n[static_cast<size_t>(b)] += 1;
    bucket_correct[static_cast<size_t>(b)] += static_cast<size_t>(rec.verdict);
  }
  const double n = static_cast<double>(report.n_eval);
  report.accuracy /= n;
  report.inter_precision /= n;
  report.inter_recall /= n;
  report.inter_f1 /= n;
  for (size_t b = 0; b < 4; ++b) {
    if (bucket_n[b] == 0) continue;
    report.per_bucket[bucket_labels()[b]] =
        static_cast<double>(bucket_correct[b]) / static_cast<double>(bucket_n[b]);
    report.bucket_sizes[bucket_labels()[b]] = bucket_n[b];
  }
  return report;
}

/// Per-bucket accuracy keyed by ground-truth step count, recomputed from
/// the per-problem records (bucket_weighted mean equals overall accuracy).
inline std::map<std::string, double> accuracy_by_steps(const EvalReport& report) {
  std::array<size_t, 4> n{};
  std::array<size_t, 4> correct{};
  for (const auto& rec : report.records) {
    const int b = bucket_of(rec.gt_step_count);
    n[static_cast<size_t>(b)] += 1;
    correct[static_cast<size_t>(b)] += static_cast<size_t>(rec.verdict);
  }
  std::map<std::string, double> out;
  for (size_t b = 0; b < 4; ++b)
    if (n[b] > 0) out[bucket_labels()[b]] = static_cast<double>(correct[b]) / static_cast<double>(n[b]);
  return out;
}

// ============================================================================
// Report serialization
// ============================================================================

inline Json eval_report_json(const EvalReport& report, const RunConfig& cfg) {
  Json j;
  j["accuracy"] = report.accuracy;
  j["n_eval"] = report.n_eval;
  j["per_bucket"] = report.per_bucket;
  j["bucket_sizes"] = report.bucket_sizes;
  j["inter_precision"] = report.inter_precision;
  j["inter_recall"] = report.inter_recall;
  j["inter_f1"] = report.inter_f1;
  j["config"] = cfg.echo();
  return j;
}

inline void write_records(const EvalReport& report, const std::filesystem::path& path) {
  std::vector<Json> rows;
  rows.reserve(report.records.size());
  for (const auto& rec : report.records) {
    Json row;
    row["id"] = rec.id;
    row["predicted_steps"] = rec.predicted_steps;
    row["verdict"] = rec.verdict;
    row["gt_depth"] = rec.gt_depth;
    row["gt_step_count"] = rec.gt_step_count;
    row["predicted_step_count"] = rec.predicted_step_count;
    row["inter_precision"] = rec.prf.precision;
    row["inter_recall"] = rec.prf.recall;
    row["inter_f1"] = rec.prf.f1;
    rows.push_back(std::move(row));
  }
  write_jsonl(path, rows);
}

inline void write_metrics(const std::vector<EpochMetrics>& metrics, const RunConfig& cfg,
                          const std::filesystem::path& path) {
  std::vector<Json> rows;
  for (const auto& m : metrics) {
    Json row;
    row["epoch"] = m.epoch;
    row["method"] = method_name(cfg.method);
    row["seed"] = cfg.seed;
    row["mean_l_ref"] = m.mean_l_ref;
    row["mean_l_exp"] = m.mean_l_exp;
    row["mean_total"] = m.mean_total;
    row["grad_norm"] = m.grad_norm;
    rows.push_back(std::move(row));
  }
  write_jsonl(path, rows);
}

}  // namespace rpo
