#include <doctest.h>

#include <memory>

#include "rpo/explorer.hpp"

using namespace rpo;

namespace {

const Vocabulary& vocab() {
  static Vocabulary v;
  return v;
}

Problem make_problem(uint64_t id, int depth = 2, uint64_t seed = 71) {
  RngStream rng = RngStream::derive(seed, {id});
  Problem p = generate_problem(rng, depth, 9999, vocab());
  p.id = id;
  return p;
}

GenerationResult correct_generation(const Problem& p) {
  return {flatten_path(render_solution(p), vocab()), true};
}

GenerationResult wrong_generation(const Problem& p, const std::string& wrong_tail) {
  ReasoningPath path = render_solution(p);
  path.steps.back() = vocab().encode(wrong_tail);
  return {flatten_path(path, vocab()), true};
}

/// Stub emitting a fixed cyclic schedule of generations.
SampleFn scripted(std::vector<GenerationResult> schedule) {
  auto at = std::make_shared<size_t>(0);
  return [schedule = std::move(schedule), at](const TokenSeq&, RngStream&) {
    const GenerationResult& out = schedule[*at % schedule.size()];
    ++*at;
    return out;
  };
}

}  // namespace

TEST_CASE("generation keeps the first correct path and stops sampling") {
  const Problem p = make_problem(1);
  const auto outcome = generate_reference_paths(scripted({correct_generation(p)}), p, vocab(),
                                                StrategyConfig{}, 5);
  REQUIRE(outcome.example.has_value());
  CHECK(outcome.attempts_used == 1);
  CHECK(outcome.example->reference_paths.size() == 1);
  CHECK(verify(outcome.example->reference_paths[0], p.answer, vocab()) == 1);
  CHECK(outcome.incorrect_paths.empty());
}

TEST_CASE("a never-correct model is dropped after exactly 10 attempts") {
  const Problem p = make_problem(2);
  const auto outcome = generate_reference_paths(
      scripted({wrong_generation(p, "so the answer is 8 8 8 8")}), p, vocab(), StrategyConfig{}, 5);
  CHECK(!outcome.example.has_value());
  CHECK(outcome.attempts_used == 10);
  CHECK(outcome.incorrect_paths.size() == 10);
}

TEST_CASE("first_correct records the incorrect paths drawn before the hit") {
  const Problem p = make_problem(3);
  const auto outcome = generate_reference_paths(
      scripted({wrong_generation(p, "so the answer is 8 8 8 8"),
                wrong_generation(p, "so the answer is 9 9 9 9"), correct_generation(p)}),
      p, vocab(), StrategyConfig{}, 5);
  REQUIRE(outcome.example.has_value());
  CHECK(outcome.attempts_used == 3);
  CHECK(outcome.incorrect_paths.size() == 2);
}

TEST_CASE("multi:3 with exactly two distinct correct paths keeps both") {
  const Problem p = make_problem(4);
  // Build a second distinct correct path (extra duplicated first step).
  ReasoningPath alt = render_solution(p);
  alt.steps.insert(alt.steps.begin(), alt.steps.front());
  const GenerationResult alt_gen{flatten_path(alt, vocab()), true};

  StrategyConfig strategy;
  strategy.strategy = ReferenceStrategy::multi_k;
  strategy.multi_k = 3;
  const auto outcome = generate_reference_paths(
      scripted({correct_generation(p), wrong_generation(p, "so the answer is 8 8 8 8"), alt_gen,
                correct_generation(p)}),
      p, vocab(), strategy, 5);
  REQUIRE(outcome.example.has_value());
  CHECK(outcome.attempts_used == 10);  // multi_k always draws the full budget
  CHECK(outcome.example->reference_paths.size() == 2);
}

TEST_CASE("random_correct draws the full budget then picks one correct path") {
  const Problem p = make_problem(5);
  StrategyConfig strategy;
  strategy.strategy = ReferenceStrategy::random_correct;
  const auto outcome = generate_reference_paths(
      scripted({correct_generation(p), wrong_generation(p, "so the answer is 8 8 8 8")}), p,
      vocab(), strategy, 5);
  REQUIRE(outcome.example.has_value());
  CHECK(outcome.attempts_used == 10);
  CHECK(outcome.example->reference_paths.size() == 1);
  CHECK(verify(outcome.example->reference_paths[0], p.answer, vocab()) == 1);
}

TEST_CASE("truncated generations never become stored paths") {
  const Problem p = make_problem(6);
  GenerationResult truncated = correct_generation(p);
  truncated.tokens.pop_back();  // drop <eos>
  truncated.hit_eos = false;
  const auto outcome =
      generate_reference_paths(scripted({truncated}), p, vocab(), StrategyConfig{}, 5);
  CHECK(!outcome.example.has_value());
  CHECK(outcome.incorrect_paths.empty());
  CHECK(outcome.attempts_used == 10);
}

TEST_CASE("exploration forms a pair in two samples with an alternating stub") {
  const Problem p = make_problem(7, 2);
  const ReasoningPath reference = render_solution(p);
  std::vector<StepTrace> trace;
  const auto pairs = explore_branch_pairs(
      scripted({wrong_generation(p, "so the answer is 8 8 8 8"), correct_generation(p)}), p,
      reference, vocab(), 5, &trace);
  CHECK(pairs.size() == reference.steps.size());
  REQUIRE(trace.size() == reference.steps.size());
  for (const auto& t : trace) {
    CHECK(t.samples_used == 2);
    CHECK(t.pair_formed);
  }
  for (const auto& pair : pairs) {
    CHECK(pair.favorable.label == 1);
    CHECK(pair.unfavorable.label == 0);
    CHECK(pair.favorable.start_index == pair.start_index);
  }
}

TEST_CASE("an always-correct model forms no pairs (one-sided sampling)") {
  const Problem p = make_problem(8, 1);
  const ReasoningPath reference = render_solution(p);
  std::vector<StepTrace> trace;
  const auto pairs =
      explore_branch_pairs(scripted({correct_generation(p)}), p, reference, vocab(), 5, &trace);
  CHECK(pairs.empty());
  for (const auto& t : trace) {
    CHECK(t.samples_used == 10);
    CHECK(!t.pair_formed);
  }
}

TEST_CASE("pair count never exceeds the number of reference steps") {
  const Problem p = make_problem(9, 3);
  const ReasoningPath reference = render_solution(p);
  const auto pairs = explore_branch_pairs(
      scripted({correct_generation(p), wrong_generation(p, "so the answer is 8 8 8 8")}), p,
      reference, vocab(), 5);
  CHECK(pairs.size() <= reference.steps.size());
}

TEST_CASE("dedup keeps first occurrences in stable order") {
  ReasoningPath a, b;
  a.steps = {vocab().encode("1 + 1 = 2")};
  b.steps = {vocab().encode("2 + 2 = 4")};
  CHECK(dedup(std::vector<ReasoningPath>{a, a, b}).size() == 2);
  CHECK(dedup(std::vector<ReasoningPath>{}).empty());

  RngStream rng(3);
  for (int trial = 0; trial < 10000; ++trial) {
    std::vector<ReasoningPath> paths;
    const int n = static_cast<int>(rng.uniform_int(0, 6));
    for (int i = 0; i < n; ++i) {
      ReasoningPath p;
      p.steps = {{static_cast<Token>(rng.uniform_int(4, 8))}};
      paths.push_back(p);
    }
    const auto out = dedup(paths);
    // No duplicates in the output.
    for (size_t i = 0; i < out.size(); ++i)
      for (size_t j = i + 1; j < out.size(); ++j) CHECK(!(out[i] == out[j]));
    // Output is a subsequence of the input.
    size_t at = 0;
    for (const auto& o : out) {
      while (at < paths.size() && !(paths[at] == o)) ++at;
      CHECK(at < paths.size());
      ++at;
    }
  }
}

TEST_CASE("dataset builder applies the fairness filters") {
  std::vector<Problem> problems;
  for (uint64_t id = 0; id < 6; ++id) problems.push_back(make_problem(100 + id, 1 + id % 3));

  std::vector<PipelineRecord> records;
  for (size_t i = 0; i < problems.size(); ++i) {
    PipelineRecord rec;
    rec.problem = &problems[i];
    if (i == 0) {
      // Dropped: no correct path at all.
      rec.generation = generate_reference_paths(
          scripted({wrong_generation(problems[i], "so the answer is 8 8 8 8")}), problems[i],
          vocab(), StrategyConfig{}, 5);
    } else if (i == 1) {
      // Correct on the first draw: no incorrect path, so no preference pair;
      // pairs explored successfully.
      rec.generation = generate_reference_paths(scripted({correct_generation(problems[i])}),
                                                problems[i], vocab(), StrategyConfig{}, 5);
      rec.pairs = explore_branch_pairs(
          scripted({wrong_generation(problems[i], "so the answer is 8 8 8 8"),
                    correct_generation(problems[i])}),
          problems[i], rec.generation.example->reference_paths[0], vocab(), 5, &rec.trace);
    } else if (i == 2) {
      // Reference found but no pair forms anywhere: stays in RFT, not RPO.
      rec.generation = generate_reference_paths(scripted({correct_generation(problems[i])}),
                                                problems[i], vocab(), StrategyConfig{}, 5);
      rec.pairs = explore_branch_pairs(scripted({correct_generation(problems[i])}), problems[i],
                                       rec.generation.example->reference_paths[0], vocab(), 5,
                                       &rec.trace);
    } else {
      // Incorrect draw first, then correct: viable for every method.
      rec.generation = generate_reference_paths(
          scripted({wrong_generation(problems[i], "so the answer is 8 8 8 8"),
                    correct_generation(problems[i])}),
          problems[i], vocab(), StrategyConfig{}, 5);
      rec.pairs = explore_branch_pairs(
          scripted({wrong_generation(problems[i], "so the answer is 8 8 8 8"),
                    correct_generation(problems[i])}),
          problems[i], rec.generation.example->reference_paths[0], vocab(), 5, &rec.trace);
    }
    records.push_back(std::move(rec));
  }

  const MethodDatasets ds = build_method_datasets(records, vocab());
  CHECK(ds.sft.size() == 6);
  CHECK(ds.rft.size() == 5);         // all but the dropped one
  CHECK(ds.pref_pairs.size() == 3);  // only problems with an incorrect draw
  CHECK(ds.rpo.size() == 4);         // the pairless problem stays in the RFT pool only
  CHECK(ds.dropped_no_correct == 1);
  CHECK(ds.reference_but_no_pairs == 1);
  CHECK(ds.rpo.size() <= ds.rft.size());
  CHECK(ds.rft.size() <= ds.sft.size());
}

TEST_CASE("the dataset audit rejects label violations") {
  std::vector<Problem> problems = {make_problem(200, 1)};
  std::vector<PipelineRecord> records;
  PipelineRecord rec;
  rec.problem = &problems[0];
  rec.generation = generate_reference_paths(scripted({correct_generation(problems[0])}),
                                            problems[0], vocab(), StrategyConfig{}, 5);
  rec.pairs = explore_branch_pairs(
      scripted({wrong_generation(problems[0], "so the answer is 8 8 8 8"),
                correct_generation(problems[0])}),
      problems[0], rec.generation.example->reference_paths[0], vocab(), 5);
  records.push_back(std::move(rec));

  MethodDatasets ds = build_method_datasets(records, vocab());
  // Corrupt a label: favorable branch that does not verify.
  ds.rpo[0].branch_pairs[0].favorable.steps.back() = vocab().encode("so the answer is 8 8 8 8");
  CHECK_THROWS_AS(audit_datasets(ds, {&problems[0]}, vocab()), AuditError);
}
