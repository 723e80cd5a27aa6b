#include <catch2/catch_amalgamated.hpp>

#include "helpers.hpp"

using namespace loopnet;
using Catch::Approx;

namespace {

ModelConfig tiny_config() {
  ModelConfig cfg;
  cfg.vocab_size = 11;
  cfg.context_len = 8;
  cfg.d_model = 4;
  cfg.n_heads = 2;
  cfg.n_layers = 1;
  return cfg;
}

testutil::AttentionOracleParams oracle_params(const BlockParams<double>& p) {
  return {p.wq.data(), p.bq.data(), p.wk.data(), p.bk.data(),
          p.wv.data(), p.bv.data(), p.wo.data(), p.bo.data()};
}

double sample_std(const std::vector<float>& v) {
  double mean = 0.0;
  for (float x : v) {
    mean += x;
  }
  mean /= static_cast<double>(v.size());
  double var = 0.0;
  for (float x : v) {
    var += (x - mean) * (x - mean);
  }
  return std::sqrt(var / static_cast<double>(v.size() - 1));
}

}  // namespace

TEST_CASE("model config validation", "[blocks]") {
  ModelConfig cfg = tiny_config();
  REQUIRE_NOTHROW(cfg.validate());

  ModelConfig bad = cfg;
  bad.d_model = 6;  // not divisible by n_heads=2? it is; use heads 4
  bad.n_heads = 4;
  REQUIRE_THROWS_AS(bad.validate(), ConfigError);

  bad = cfg;
  bad.vocab_size = 0;
  REQUIRE_THROWS_AS(bad.validate(), ConfigError);

  bad = cfg;
  bad.context_len = 0;
  REQUIRE_THROWS_AS(bad.validate(), ConfigError);

  bad = cfg;
  bad.dropout = 0.1;  // deterministic build: nonzero dropout is refused
  REQUIRE_THROWS_AS(bad.validate(), ConfigError);

  bad = cfg;
  bad.dropout = -0.5;
  REQUIRE_THROWS_AS(bad.validate(), ConfigError);
}

TEST_CASE("initialization is seed-deterministic with documented stats",
          "[blocks]") {
  ModelConfig cfg;
  cfg.vocab_size = 800;
  cfg.context_len = 64;
  cfg.d_model = 128;
  cfg.n_heads = 4;
  cfg.n_layers = 2;
  LoopConfig lc;

  auto [e1, b1] = init_params<float>(cfg, lc, 42);
  auto [e2, b2] = init_params<float>(cfg, lc, 42);
  REQUIRE(e1.token_embedding.data() == e2.token_embedding.data());
  REQUIRE(e1.position_embedding.data() == e2.position_embedding.data());
  REQUIRE(b1.size() == 2);
  for (size_t l = 0; l < b1.size(); ++l) {
    REQUIRE(b1[l].wq.data() == b2[l].wq.data());
    REQUIRE(b1[l].w_proj.data() == b2[l].w_proj.data());
  }
  auto [e3, b3] = init_params<float>(cfg, lc, 43);
  REQUIRE(e1.token_embedding.data() != e3.token_embedding.data());

  // token embedding: 800*128 = 102400 >= 1e5 draws from N(0, 0.02)
  REQUIRE(e1.token_embedding.size() >= 100000);
  const double std_tok = sample_std(e1.token_embedding.data());
  REQUIRE(std_tok > 0.019);
  REQUIRE(std_tok < 0.021);

  for (float v : b1[0].bq.data()) {
    REQUIRE(v == 0.0f);
  }
  for (float v : b1[0].b_fc.data()) {
    REQUIRE(v == 0.0f);
  }
  for (float v : b1[0].ln1_gain.data()) {
    REQUIRE(v == 1.0f);
  }
  for (float v : e1.final_norm_gain.data()) {
    REQUIRE(v == 1.0f);
  }
  for (float v : e1.final_norm_bias.data()) {
    REQUIRE(v == 0.0f);
  }

  // residual-branch projections are shrunk by 1/sqrt(2 * n_layers)
  const double std_proj = sample_std(b1[0].wo.data());
  const double expect = 0.02 / std::sqrt(2.0 * 2.0);
  REQUIRE(std_proj == Approx(expect).epsilon(0.15));
}

TEST_CASE("attention matches the scalar oracle", "[blocks]") {
  ModelConfig cfg = tiny_config();  // d=4, heads=2
  LoopConfig lc;
  auto [e, blocks] = init_params<double>(cfg, lc, 7);
  Rng rng(99);

  for (int64_t t_len : {1, 3}) {
    auto x = Tensor<double>::randn({2, t_len, 4}, rng, 1.0);
    auto got = causal_self_attention<double>(nullptr, x, blocks[0], cfg);
    auto want =
        testutil::attention_oracle(x.data(), 2, t_len, 4, 2,
                                   oracle_params(blocks[0]));
    REQUIRE(got.shape() == std::vector<int64_t>{2, t_len, 4});
    for (size_t i = 0; i < want.size(); ++i) {
      REQUIRE(std::abs(got.data()[i] - want[i]) < 1e-10);
    }
  }
}

TEST_CASE("attention past positions ignore future tokens bit-exactly",
          "[blocks]") {
  ModelConfig cfg = tiny_config();
  LoopConfig lc;
  auto [e, blocks] = init_params<double>(cfg, lc, 3);
  Rng rng(5);
  auto x = Tensor<double>::randn({1, 5, 4}, rng, 1.0);
  auto base = causal_self_attention<double>(nullptr, x, blocks[0], cfg);

  auto x2 = x.clone();
  for (int64_t j = 0; j < 4; ++j) {
    x2.data()[static_cast<size_t>(4 * 4 + j)] += 100.0;  // perturb t=4 only
  }
  auto bumped = causal_self_attention<double>(nullptr, x2, blocks[0], cfg);
  for (int64_t t = 0; t < 4; ++t) {
    for (int64_t j = 0; j < 4; ++j) {
      const size_t i = static_cast<size_t>(t * 4 + j);
      REQUIRE(bumped.data()[i] == base.data()[i]);
    }
  }
  // and the perturbed position itself does change
  bool changed = false;
  for (int64_t j = 0; j < 4; ++j) {
    changed |= bumped.data()[static_cast<size_t>(4 * 4 + j)] !=
               base.data()[static_cast<size_t>(4 * 4 + j)];
  }
  REQUIRE(changed);
}

TEST_CASE("block with zeroed residual projections is the identity",
          "[blocks]") {
  ModelConfig cfg = tiny_config();
  LoopConfig lc;
  auto [e, blocks] = init_params<double>(cfg, lc, 11);
  auto& p = blocks[0];
  std::fill(p.wo.data().begin(), p.wo.data().end(), 0.0);
  std::fill(p.bo.data().begin(), p.bo.data().end(), 0.0);
  std::fill(p.w_proj.data().begin(), p.w_proj.data().end(), 0.0);
  std::fill(p.b_proj.data().begin(), p.b_proj.data().end(), 0.0);

  Rng rng(12);
  auto x = Tensor<double>::randn({2, 3, 4}, rng, 1.0);
  auto y = transformer_block<double>(nullptr, x, p, cfg);
  REQUIRE(y.data() == x.data());
}

TEST_CASE("embedding adds positions and enforces the context window",
          "[blocks]") {
  ModelConfig cfg = tiny_config();
  LoopConfig lc;
  auto [e, blocks] = init_params<double>(cfg, lc, 4);

  ITensor tokens = ITensor::zeros({2, 3});
  tokens.data = {1, 5, 2, 0, 10, 3};
  auto h = embed_tokens<double>(nullptr, e, tokens, cfg.context_len);
  REQUIRE(h.shape() == std::vector<int64_t>{2, 3, 4});
  for (int64_t b = 0; b < 2; ++b) {
    for (int64_t t = 0; t < 3; ++t) {
      const int64_t id = tokens.data[static_cast<size_t>(b * 3 + t)];
      for (int64_t j = 0; j < 4; ++j) {
        const double want =
            e.token_embedding.data()[static_cast<size_t>(id * 4 + j)] +
            e.position_embedding.data()[static_cast<size_t>(t * 4 + j)];
        REQUIRE(h.data()[static_cast<size_t>((b * 3 + t) * 4 + j)] == want);
      }
    }
  }

  ITensor too_long = ITensor::zeros({1, 9});  // context_len is 8
  REQUIRE_THROWS_AS(embed_tokens<double>(nullptr, e, too_long, cfg.context_len),
                    ContractError);
}

TEST_CASE("tied head shares storage and gradient flows through both paths",
          "[blocks]") {
  ModelConfig cfg = tiny_config();
  cfg.tie_embeddings = true;
  LoopConfig lc;
  auto [e, blocks] = init_params<double>(cfg, lc, 21);
  REQUIRE(e.head.same_storage(e.token_embedding));

  std::vector<NamedTensor<double>> named;
  e.collect(named);
  for (const auto& nt : named) {
    REQUIRE(nt.name != "output_head");
  }

  ITensor tokens = ITensor::zeros({1, 3});
  tokens.data = {2, 7, 2};
  ITensor targets = ITensor::zeros({1, 3});
  targets.data = {7, 2, 4};

  auto forward = [&](Tape<double>* tape) {
    auto h = embed_tokens<double>(tape, e, tokens, cfg.context_len);
    h = transformer_block<double>(tape, h, blocks[0], cfg);
    auto logits = lm_head<double>(tape, h, e);
    return softmax_cross_entropy<double>(tape, logits, targets);
  };

  Tape<double> tape;
  auto loss = forward(&tape);
  e.token_embedding.zero_grad();
  tape.backward(loss);

  // finite differences see both the embedding use and the head use of the
  // shared matrix; backprop must accumulate the same total.
  Rng pick(33);
  for (int trial = 0; trial < 8; ++trial) {
    const size_t i =
        static_cast<size_t>(pick.bounded(
            static_cast<uint64_t>(e.token_embedding.size())));
    double* slot = &e.token_embedding.data()[i];
    const double fd = testutil::finite_diff(
        [&] { return forward(nullptr).item(); }, slot, 1e-6);
    const double bp = e.token_embedding.grad()[i];
    const double rel =
        std::abs(fd - bp) / std::max({std::abs(fd), std::abs(bp), 1e-8});
    INFO("entry " << i << ": fd " << fd << " vs backprop " << bp);
    REQUIRE(rel < 1e-5);
  }

  ModelConfig untied = cfg;
  untied.tie_embeddings = false;
  auto [e2, blocks2] = init_params<double>(untied, lc, 21);
  REQUIRE_FALSE(e2.head.same_storage(e2.token_embedding));
  named.clear();
  e2.collect(named);
  bool saw_head = false;
  for (const auto& nt : named) {
    saw_head |= nt.name == "output_head";
  }
  REQUIRE(saw_head);
}

TEST_CASE("per-block parameter count is 12 d^2 + 13 d", "[blocks]") {
  for (int64_t d : {8, 64}) {
    ModelConfig cfg;
    cfg.vocab_size = 11;
    cfg.context_len = 8;
    cfg.d_model = d;
    cfg.n_heads = 4;
    cfg.n_layers = 1;
    LoopConfig lc;
    auto [e, blocks] = init_params<double>(cfg, lc, 1);
    std::vector<NamedTensor<double>> named;
    blocks[0].collect("blocks.0.", named);
    int64_t total = 0;
    for (const auto& nt : named) {
      total += nt.tensor.size();
    }
    REQUIRE(total == 12 * d * d + 13 * d);
  }
}
