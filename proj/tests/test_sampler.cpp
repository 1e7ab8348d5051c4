#include <doctest.h>

#include <set>

#include "rpo/sampler.hpp"
#include "rpo/threadpool.hpp"

using namespace rpo;

namespace {

const Vocabulary& vocab() {
  static Vocabulary v;
  return v;
}

ModelConfig small_config() {
  ModelConfig cfg;
  cfg.vocab_size = vocab().size();
  cfg.d_model = 16;
  cfg.n_blocks = 1;
  cfg.context_len = 64;
  cfg.mlp_hidden = 32;
  return cfg;
}

ModelParams generic_model(uint64_t seed) {
  ModelParams p = init_model(small_config(), seed);
  RngStream rng = RngStream::derive(seed, {0xFEEDULL});
  p.for_each_param([&](const std::string&, Mat& m) {
    for (Eigen::Index r = 0; r < m.rows(); ++r)
      for (Eigen::Index c = 0; c < m.cols(); ++c) m(r, c) += 0.2 * rng.normal();
  });
  return p;
}

}  // namespace

TEST_CASE("uniform model decodes token id 0 under the lowest-id tie break") {
  const ModelParams p = init_model(small_config(), 1);  // zero head: all logits equal
  const GenerationResult out = greedy_decode(p, {5, 6}, 8, vocab());
  CHECK(out.tokens.size() == 8);
  CHECK(!out.hit_eos);
  for (Token t : out.tokens) CHECK(t == 0);
}

TEST_CASE("sampling at T -> 0+ reproduces greedy decoding") {
  const ModelParams p = generic_model(11);
  SampleConfig cfg;
  cfg.temperature = 1e-6;
  cfg.max_new_tokens = 24;
  RngStream prefix_rng(3);
  for (int trial = 0; trial < 100; ++trial) {
    TokenSeq prefix;
    const int len = 1 + static_cast<int>(prefix_rng.uniform_int(0, 4));
    for (int i = 0; i < len; ++i)
      prefix.push_back(static_cast<Token>(prefix_rng.uniform_int(4, vocab().size() - 1)));
    RngStream rng = RngStream::derive(99, {static_cast<uint64_t>(trial)});
    const GenerationResult sampled = sample_continuation(p, prefix, cfg, vocab(), rng);
    const GenerationResult greedy = greedy_decode(p, prefix, cfg.max_new_tokens, vocab());
    CHECK(sampled.tokens == greedy.tokens);
  }
}

TEST_CASE("a one-hot next-token distribution samples the sure token at any T") {
  ModelParams p = init_model(small_config(), 2);
  const Token sure = vocab().id_of("7");
  p.b_out(0, sure) = 50.0;  // softmax mass ~1 on `sure` for any T <= 1
  for (double temperature : {0.1, 0.5, 1.0}) {
    SampleConfig cfg;
    cfg.temperature = temperature;
    cfg.max_new_tokens = 1;
    RngStream rng = RngStream::derive(7, {static_cast<uint64_t>(temperature * 1000)});
    const GenerationResult out = sample_continuation(p, {0, 1}, cfg, vocab(), rng);
    REQUIRE(out.tokens.size() == 1);
    CHECK(out.tokens[0] == sure);
  }
}

TEST_CASE("per-call stream isolation: identical output at 1 and 8 workers") {
  const ModelParams p = generic_model(21);
  SampleConfig cfg;
  cfg.max_new_tokens = 16;
  const TokenSeq prefix = {0, 10, 4};

  auto run = [&](int workers) {
    std::vector<TokenSeq> out(12);
    parallel_for(out.size(), workers, [&](size_t i) {
      RngStream rng = RngStream::derive(1234, {i});
      out[i] = sample_continuation(p, prefix, cfg, vocab(), rng).tokens;
    });
    return out;
  };
  CHECK(run(1) == run(8));
}

TEST_CASE("memorizing model reproduces its sequence greedily") {
  // Overfit one short sequence, then check exact greedy reproduction.
  ModelParams p = generic_model(31);
  const TokenSeq seq = vocab().encode("<q> 4 + 3 ; <a> so the answer is 7 <eos>");
  OptimConfig adam;
  adam.lr = 3e-3;
  OptimState state = init_optimizer(p, adam);
  for (int step = 0; step < 300; ++step) {
    Tape tape;
    Var lp = build_logprob_graph(tape, p, seq, 1);
    Var loss = tape.affine(tape.mean(lp), -1.0, 0.0);
    tape.backward(loss);
    Gradients grads = Gradients::zeros_like(p);
    grads.accumulate_from(p, tape);
    optimizer_step(p, grads, state);
  }
  const GenerationResult out = greedy_decode(p, {seq[0]}, 32, vocab());
  CHECK(out.hit_eos);
  CHECK(out.tokens == TokenSeq(seq.begin() + 1, seq.end()));
}

TEST_CASE("verify applies canonical-integer equality on the last step") {
  const auto& v = vocab();
  ReasoningPath path;
  path.steps = {v.encode("so the answer is 3 0")};
  CHECK(verify(path, "30", v) == 1);
  path.steps = {v.encode("so the answer is 5 5")};
  CHECK(verify(path, "30", v) == 0);
  path.steps = {v.encode("so the answer is")};
  CHECK(verify(path, "30", v) == 0);
  path.steps = {v.encode("so the answer is 0 3 0")};
  CHECK(verify(path, "30", v) == 1);  // canonicalization strips the leading zero
  path.steps.clear();
  CHECK_THROWS_AS(verify(path, "30", v), AuditError);
}

TEST_CASE("verification soundness on generated problems") {
  RngStream stream(17);
  for (int i = 0; i < 40; ++i) {
    const Problem p = generate_problem(stream, 1 + i % 6, 9999, vocab());
    CHECK(verify(render_solution(p), p.answer, vocab()) == 1);
  }
}

TEST_CASE("distinct-sample diversity is non-decreasing in temperature") {
  for (uint64_t seed : {1ULL, 2ULL, 3ULL}) {
    const ModelParams p = generic_model(41 + seed);
    const TokenSeq prefix = {0, 8, 14, 4};
    std::vector<size_t> distinct_counts;
    for (double temperature : {0.1, 0.5, 1.0}) {
      SampleConfig cfg;
      cfg.temperature = temperature;
      cfg.max_new_tokens = 12;
      std::set<TokenSeq> outputs;
      for (int draw = 0; draw < 100; ++draw) {
        RngStream rng = RngStream::derive(seed * 1000 + draw, {static_cast<uint64_t>(temperature * 1e6)});
        outputs.insert(sample_continuation(p, prefix, cfg, vocab(), rng).tokens);
      }
      distinct_counts.push_back(outputs.size());
    }
    CHECK(distinct_counts[0] <= distinct_counts[1]);
    CHECK(distinct_counts[1] <= distinct_counts[2]);
  }
}
