#include <doctest.h>

#include <cmath>
#include <functional>

#include "support.hpp"
#include "tspnet/errors.hpp"

using namespace tspnet;
using testing::random_matrix;

namespace {

DecoderParams make_decoder(std::size_t vocab, Rng& rng, std::size_t layers = 2) {
  DecoderConfig cfg;
  cfg.vocab_size = vocab;
  cfg.model_dim = 8;
  cfg.layers = layers;
  cfg.heads = 2;
  cfg.ff_dim = 16;
  cfg.max_length = 12;
  return DecoderParams::create(cfg, rng);
}

void fill(const Tensor& t, Real value) {
  Tensor c = t;
  std::fill(c.data().begin(), c.data().end(), value);
}

// Sharpens the output distribution so decoding makes non-trivial choices.
void scale_output(DecoderParams& p, Real factor) {
  Tensor w = p.output.weight;
  for (auto& v : w.data()) v *= factor;
}

}  // namespace

TEST_SUITE("teacher forcing") {
  TEST_CASE("shape and causality") {
    Rng rng(1);
    const auto p = make_decoder(9, rng);
    const Tensor memory = random_matrix(5, 8, rng);
    const std::vector<TokenId> a{kBosId, 4, 5, 6, 7, 8};
    const Tensor la = decode_train(memory, a, p);
    CHECK(la.rows() == 6);
    CHECK(la.cols() == 9);
    for (std::size_t t = 0; t + 1 < a.size(); ++t) {
      std::vector<TokenId> b = a;
      for (std::size_t u = t + 1; u < b.size(); ++u) b[u] = static_cast<TokenId>(4 + (b[u] + 3) % 5);
      const Tensor lb = decode_train(memory, b, p);
      for (std::size_t r = 0; r <= t; ++r) {
        for (std::size_t j = 0; j < 9; ++j) REQUIRE(std::memcmp(&la.data()[r * 9 + j], &lb.data()[r * 9 + j], sizeof(Real)) == 0);
      }
    }
  }

  TEST_CASE("zero weights leave the output bias") {
    Rng rng(2);
    auto p = make_decoder(7, rng);
    for (const auto& [name, t] : p.named_parameters()) fill(t, 0);
    Tensor bias = p.output.bias;
    for (std::size_t j = 0; j < 7; ++j) bias.data()[j] = static_cast<Real>(rng.normal());
    const std::vector<TokenId> in{kBosId, 4, 5};
    const Tensor logits = decode_train(Tensor::zeros({1, 8}), in, p);
    for (std::size_t r = 0; r < 3; ++r) {
      for (std::size_t j = 0; j < 7; ++j) CHECK(logits.at(r, j) == bias.data()[j]);
    }
  }

  TEST_CASE("input contract") {
    Rng rng(3);
    const auto p = make_decoder(7, rng);
    const Tensor memory = random_matrix(3, 8, rng);
    const std::vector<TokenId> no_bos{4, 5};
    CHECK_THROWS_AS(decode_train(memory, no_bos, p), PreconditionError);
    const std::vector<TokenId> unknown{kBosId, 7};
    CHECK_THROWS_AS(decode_train(memory, unknown, p), PreconditionError);
    const std::vector<TokenId> too_long(13, kBosId);
    CHECK_THROWS_AS(decode_train(memory, too_long, p), CapacityError);
    const std::vector<TokenId> ok{kBosId};
    CHECK_THROWS_AS(decode_train(random_matrix(3, 6, rng), ok, p), DimensionError);
  }

  TEST_CASE("configuration errors") {
    Rng rng(4);
    DecoderConfig cfg;
    cfg.vocab_size = 10;
    cfg.model_dim = 8;
    cfg.heads = 3;
    CHECK_THROWS_AS(DecoderParams::create(cfg, rng), ConfigError);
    cfg.heads = 2;
    cfg.vocab_size = 2;
    CHECK_THROWS_AS(DecoderParams::create(cfg, rng), ConfigError);
  }

  TEST_CASE("positions start sinusoidal") {
    Rng rng(5);
    const auto p = make_decoder(7, rng);
    CHECK(p.positions.at(0, 0) == 0);
    CHECK(p.positions.at(0, 1) == 1);
    CHECK(p.positions.at(3, 0) == doctest::Approx(std::sin(3.0)).epsilon(1e-15));
    CHECK(p.positions.requires_grad());
  }
}

TEST_SUITE("greedy") {
  TEST_CASE("forced end of sentence gives an empty translation") {
    Rng rng(6);
    auto p = make_decoder(8, rng);
    fill(p.output.weight, 0);
    p.output.bias.data()[kEosId] = 100;
    const auto r = greedy_decode(random_matrix(4, 8, rng), p, 10);
    CHECK(r.tokens.empty());
    CHECK(r.finished);
  }

  TEST_CASE("uniform model picks the lowest id and never emits pad or bos") {
    Rng rng(7);
    auto p = make_decoder(8, rng);
    fill(p.output.weight, 0);
    fill(p.output.bias, 0);
    const Tensor memory = random_matrix(4, 8, rng);
    const auto r = greedy_decode(memory, p, 10);
    CHECK(r.tokens.empty());
    CHECK(r.finished);
    p.output.bias.data()[kEosId] = -50;
    const auto s = greedy_decode(memory, p, 5);
    CHECK(s.tokens == std::vector<TokenId>(5, kUnkId));
    CHECK_FALSE(s.finished);
    const auto b = beam_decode(memory, p, {3, 5, 1});
    CHECK(b.tokens == std::vector<TokenId>(5, kUnkId));
  }

  TEST_CASE("deterministic and consistent with sequence scoring") {
    Rng rng(8);
    auto p = make_decoder(10, rng);
    scale_output(p, 4);
    const Tensor memory = random_matrix(6, 8, rng);
    const auto a = greedy_decode(memory, p, 8);
    const auto b = greedy_decode(memory, p, 8);
    CHECK(a.tokens == b.tokens);
    CHECK(a.log_prob == b.log_prob);
    std::vector<TokenId> cont = a.tokens;
    if (a.finished) cont.push_back(kEosId);
    CHECK(sequence_log_prob(memory, cont, p) == doctest::Approx(a.log_prob).epsilon(1e-12));
    CHECK(a.tokens.size() <= 8);
  }

  TEST_CASE("limits") {
    Rng rng(9);
    const auto p = make_decoder(8, rng);
    CHECK_THROWS_AS(greedy_decode(random_matrix(2, 8, rng), p, 0), PreconditionError);
    CHECK(greedy_decode(random_matrix(2, 8, rng), p, 100).tokens.size() <= 11);
    CHECK_THROWS_AS(sequence_log_prob(random_matrix(2, 8, rng), std::vector<TokenId>{}, p), PreconditionError);
  }
}

TEST_SUITE("beam search") {
  TEST_CASE("width one equals greedy") {
    for (std::uint64_t seed = 0; seed < 25; ++seed) {
      Rng rng(seed);
      auto p = make_decoder(9, rng);
      scale_output(p, static_cast<Real>(1 + seed % 5));
      const Tensor memory = random_matrix(1 + seed % 4, 8, rng);
      const auto g = greedy_decode(memory, p, 10);
      const auto b = beam_decode(memory, p, {1, 10, 0});
      REQUIRE(g.tokens == b.tokens);
      REQUIRE(g.finished == b.finished);
      REQUIRE(g.log_prob == b.log_prob);
    }
  }

  TEST_CASE("exhaustive width finds the optimum") {
    // Enumerate every finished continuation of at most max_len tokens.
    auto brute = [](const Tensor& memory, const DecoderParams& p, std::size_t max_len, Real alpha) {
      std::vector<TokenId> emittable;
      for (TokenId t = kEosId; t < static_cast<TokenId>(p.config.vocab_size); ++t) emittable.push_back(t);
      std::vector<TokenId> best;
      Real best_score = -1e300;
      std::vector<TokenId> prefix;
      std::function<void()> walk = [&] {
        std::vector<TokenId> done = prefix;
        done.push_back(kEosId);
        const Real lp = sequence_log_prob(memory, done, p);
        const Real score = alpha == 0 ? lp : lp / std::pow(static_cast<Real>(done.size()), alpha);
        if (score > best_score) {
          best_score = score;
          best = done;
        }
        if (prefix.size() + 1 >= max_len) return;
        for (TokenId t : emittable) {
          if (t == kEosId) continue;
          prefix.push_back(t);
          walk();
          prefix.pop_back();
        }
      };
      walk();
      return std::make_pair(best, best_score);
    };

    for (std::size_t vocab : {4u, 6u}) {
      for (Real alpha : {Real(0), Real(1)}) {
        for (std::uint64_t seed = 0; seed < 6; ++seed) {
          Rng rng(100 + seed);
          auto p = make_decoder(vocab, rng, 1);
          scale_output(p, 3);
          const Tensor memory = random_matrix(3, 8, rng);
          const auto [best, score] = brute(memory, p, 4, alpha);
          const auto r = beam_decode(memory, p, {256, 4, alpha});
          std::vector<TokenId> got = r.tokens;
          if (r.finished) got.push_back(kEosId);
          INFO("vocab ", vocab, " alpha ", alpha, " seed ", seed);
          CHECK(got == best);
          CHECK(r.score == doctest::Approx(score).epsilon(1e-10));
        }
      }
    }
  }

  TEST_CASE("wider beams never score worse on finished hypotheses") {
    for (std::uint64_t seed = 0; seed < 10; ++seed) {
      Rng rng(200 + seed);
      auto p = make_decoder(7, rng, 1);
      scale_output(p, 2);
      const Tensor memory = random_matrix(3, 8, rng);
      const auto narrow = beam_decode(memory, p, {1, 4, 0});
      const auto wide = beam_decode(memory, p, {200, 4, 0});
      if (narrow.finished && wide.finished) CHECK(wide.score >= narrow.score - 1e-12);
    }
  }

  TEST_CASE("length penalty is applied to the reported score") {
    Rng rng(11);
    auto p = make_decoder(8, rng);
    scale_output(p, 3);
    const Tensor memory = random_matrix(3, 8, rng);
    const auto r = beam_decode(memory, p, {4, 8, 1});
    const std::size_t len = r.tokens.size() + (r.finished ? 1 : 0);
    CHECK(r.score == doctest::Approx(r.log_prob / static_cast<Real>(len)).epsilon(1e-14));
  }

  TEST_CASE("invalid options") {
    Rng rng(12);
    const auto p = make_decoder(8, rng);
    const Tensor memory = random_matrix(3, 8, rng);
    CHECK_THROWS_AS(beam_decode(memory, p, {0, 4, 1}), PreconditionError);
    CHECK_THROWS_AS(beam_decode(memory, p, {2, 0, 1}), PreconditionError);
  }
}
