#include <doctest.h>

#include <cmath>

#include "support.hpp"
#include "tspnet/errors.hpp"
#include "tspnet/gradcheck.hpp"

using namespace tspnet;
using testing::random_matrix;

namespace {

constexpr EncoderMode kModes[] = {EncoderMode::single, EncoderMode::sequential, EncoderMode::joint,
                                  EncoderMode::pool,   EncoderMode::fc,         EncoderMode::nonrestrictive};

EncoderConfig small_config(EncoderMode mode, std::vector<std::size_t> widths = {4, 6, 8}, std::size_t dim = 8) {
  EncoderConfig c;
  c.input_dim = 5;
  c.model_dim = c.inter_dim = c.intra_dim = dim;
  c.widths = std::move(widths);
  c.stride = 2;
  c.max_positions = 32;
  c.mode = mode;
  return c;
}

void randomize(const Tensor& t, Rng& rng, double scale = 0.5) {
  Tensor copy = t;
  for (auto& v : copy.data()) v = static_cast<Real>(scale * rng.normal());
}

using Matrix = std::vector<std::vector<double>>;

Matrix to_matrix(const Tensor& t) {
  Matrix m(t.rows(), std::vector<double>(t.cols()));
  for (std::size_t i = 0; i < t.rows(); ++i) {
    for (std::size_t j = 0; j < t.cols(); ++j) m[i][j] = t.at(i, j);
  }
  return m;
}

Matrix mm(const Matrix& a, const Matrix& b) {
  Matrix out(a.size(), std::vector<double>(b[0].size(), 0.0));
  for (std::size_t i = 0; i < a.size(); ++i) {
    for (std::size_t k = 0; k < b.size(); ++k) {
      for (std::size_t j = 0; j < b[0].size(); ++j) out[i][j] += a[i][k] * b[k][j];
    }
  }
  return out;
}

// softmax(q kᵀ/√d) v for one query row.
std::vector<double> attend(const std::vector<double>& q, const Matrix& keys) {
  const double scale = 1.0 / std::sqrt(static_cast<double>(q.size()));
  std::vector<double> s(keys.size());
  double mx = -1e300;
  for (std::size_t j = 0; j < keys.size(); ++j) {
    s[j] = 0;
    for (std::size_t d = 0; d < q.size(); ++d) s[j] += q[d] * keys[j][d];
    s[j] *= scale;
    mx = std::max(mx, s[j]);
  }
  double z = 0;
  for (auto& v : s) z += (v = std::exp(v - mx));
  std::vector<double> out(keys[0].size(), 0.0);
  for (std::size_t j = 0; j < keys.size(); ++j) {
    for (std::size_t d = 0; d < out.size(); ++d) out[d] += s[j] / z * keys[j][d];
  }
  return out;
}

std::vector<double> ffn(const FeedForward& f, const std::vector<double>& x) {
  const Matrix w1 = to_matrix(f.inner.weight), b1 = to_matrix(f.inner.bias);
  const Matrix w2 = to_matrix(f.outer.weight), b2 = to_matrix(f.outer.bias);
  std::vector<double> h(w1[0].size());
  for (std::size_t j = 0; j < h.size(); ++j) {
    double a = b1[0][j];
    for (std::size_t i = 0; i < x.size(); ++i) a += x[i] * w1[i][j];
    h[j] = 0.5 * a * (1 + std::erf(a / std::sqrt(2.0)));
  }
  std::vector<double> out(w2[0].size());
  for (std::size_t j = 0; j < out.size(); ++j) {
    out[j] = b2[0][j];
    for (std::size_t i = 0; i < h.size(); ++i) out[j] += h[i] * w2[i][j];
  }
  return out;
}

std::vector<Tensor> random_scales(const MultiScaleLayout& layout, std::size_t dim, Rng& rng) {
  std::vector<Tensor> out;
  for (std::size_t i = 0; i < layout.num_scales(); ++i) out.push_back(random_matrix(layout.pivot_count, dim, rng));
  return out;
}

std::vector<Neighborhood> surrounding_all(const MultiScaleLayout& layout) {
  std::vector<Neighborhood> out;
  for (std::size_t k = 0; k < layout.pivot_count; ++k) out.push_back(surrounding_neighborhood(layout, k));
  return out;
}

std::vector<Neighborhood> extended_all(const MultiScaleLayout& layout) {
  std::vector<Neighborhood> out;
  for (std::size_t k = 0; k < layout.pivot_count; ++k) out.push_back(extended_surrounding_neighborhood(layout, k));
  return out;
}

FeatureSequence constant_video(std::size_t frames, std::size_t dim, Rng& rng) {
  FeatureSequence seq{"const", frames, dim, {}};
  std::vector<float> f(dim);
  for (auto& v : f) v = static_cast<float>(rng.normal());
  for (std::size_t t = 0; t < frames; ++t) seq.data.insert(seq.data.end(), f.begin(), f.end());
  return seq;
}

}  // namespace

TEST_SUITE("positional encoding") {
  TEST_CASE("zero table is the identity") {
    Rng rng(1);
    const auto p = EncoderParams::create(small_config(EncoderMode::joint), rng);
    const auto layout = plan_layout(20, {4, 6, 8}, 2);
    const auto feats = random_scales(layout, 8, rng);
    const auto out = shared_positional_encode(feats, p);
    for (std::size_t i = 0; i < 3; ++i) CHECK(testing::bit_equal(out[i], feats[i]));
  }

  TEST_CASE("every scale receives the same row") {
    Rng rng(2);
    auto p = EncoderParams::create(small_config(EncoderMode::joint), rng);
    randomize(p.pos_table, rng);
    const auto layout = plan_layout(20, {4, 6, 8}, 2);
    std::vector<Tensor> zeros(3, Tensor::zeros({layout.pivot_count, 8}));
    const auto out = shared_positional_encode(zeros, p);
    for (std::size_t i = 0; i < 3; ++i) {
      for (std::size_t k = 0; k < layout.pivot_count; ++k) {
        for (std::size_t d = 0; d < 8; ++d) CHECK(out[i].at(k, d) == p.pos_table.at(k, d));
      }
    }
  }

  TEST_CASE("capacity") {
    Rng rng(3);
    auto cfg = small_config(EncoderMode::joint);
    cfg.max_positions = 4;
    const auto p = EncoderParams::create(cfg, rng);
    const Tensor f[] = {Tensor::zeros({5, 8})};
    CHECK_THROWS_AS(shared_positional_encode(f, p), CapacityError);
  }
}

TEST_SUITE("inter-scale aggregation") {
  TEST_CASE("single scale reduces to FFN of the projected pivot") {
    Rng rng(4);
    const auto p = EncoderParams::create(small_config(EncoderMode::sequential, {4}), rng);
    const auto layout = plan_layout(20, {4}, 2);
    const auto feats = random_scales(layout, 8, rng);
    const Tensor h = inter_scale_aggregate(feats, surrounding_all(layout), layout, p);
    const Tensor expected = p.inter_ffn(matmul(feats[0], p.w_g));
    for (std::size_t i = 0; i < h.numel(); ++i) CHECK(std::abs(h.data()[i] - expected.data()[i]) <= 1e-12);
  }

  TEST_CASE("identical members give their common value") {
    Rng rng(5);
    const auto p = EncoderParams::create(small_config(EncoderMode::sequential), rng);
    const auto layout = plan_layout(20, {4, 6, 8}, 2);
    const Tensor row = random_matrix(1, 8, rng);
    std::vector<Tensor> feats;
    for (int i = 0; i < 3; ++i) {
      std::vector<std::size_t> idx(layout.pivot_count, 0);
      feats.push_back(gather_rows(row, idx));
    }
    const Tensor h = inter_scale_aggregate(feats, surrounding_all(layout), layout, p);
    const Tensor expected = p.inter_ffn(matmul(row, p.w_g));
    for (std::size_t k = 0; k < layout.pivot_count; ++k) {
      for (std::size_t d = 0; d < 8; ++d) CHECK(h.at(k, d) == doctest::Approx(expected.at(0, d)).epsilon(1e-12));
    }
  }

  TEST_CASE("zero output map leaves the output bias") {
    Rng rng(6);
    auto p = EncoderParams::create(small_config(EncoderMode::sequential), rng);
    Tensor w2 = p.inter_ffn.outer.weight;
    std::fill(w2.data().begin(), w2.data().end(), Real(0));
    randomize(p.inter_ffn.outer.bias, rng);
    const auto layout = plan_layout(20, {4, 6, 8}, 2);
    const Tensor h = inter_scale_aggregate(random_scales(layout, 8, rng), surrounding_all(layout), layout, p);
    for (std::size_t k = 0; k < layout.pivot_count; ++k) {
      for (std::size_t d = 0; d < 8; ++d) CHECK(h.at(k, d) == p.inter_ffn.outer.bias.at(0, d));
    }
  }

  TEST_CASE("matches a dense per-pivot oracle") {
    Rng rng(7);
    const auto p = EncoderParams::create(small_config(EncoderMode::sequential), rng);
    const auto layout = plan_layout(16, {4, 6, 8}, 2);
    const auto feats = random_scales(layout, 8, rng);
    const auto nbs = surrounding_all(layout);
    AttentionTrace trace;
    const Tensor h = inter_scale_aggregate(feats, nbs, layout, p, &trace);
    const Matrix wg = to_matrix(p.w_g);
    for (std::size_t k = 0; k < layout.pivot_count; ++k) {
      Matrix z;
      for (const auto& m : nbs[k].members) z.push_back(mm({to_matrix(feats[m.scale])[m.index]}, wg)[0]);
      const auto expected = ffn(p.inter_ffn, attend(z[0], z));
      for (std::size_t d = 0; d < 8; ++d) CHECK(h.at(k, d) == doctest::Approx(expected[d]).epsilon(1e-11));
      REQUIRE(trace.weights[k].size() == nbs[k].members.size());
      double total = 0;
      for (Real w : trace.weights[k]) total += w;
      CHECK(total == doctest::Approx(1).epsilon(1e-12));
    }
  }

  TEST_CASE("neighborhood contract") {
    Rng rng(8);
    const auto p = EncoderParams::create(small_config(EncoderMode::sequential), rng);
    const auto layout = plan_layout(20, {4, 6, 8}, 2);
    const auto feats = random_scales(layout, 8, rng);
    auto nbs = surrounding_all(layout);
    CHECK_THROWS_AS(inter_scale_aggregate(feats, extended_all(layout), layout, p), PreconditionError);
    std::swap(nbs[0], nbs[1]);
    CHECK_THROWS_AS(inter_scale_aggregate(feats, nbs, layout, p), PreconditionError);
    nbs.pop_back();
    CHECK_THROWS_AS(inter_scale_aggregate(feats, nbs, layout, p), PreconditionError);
  }

  TEST_CASE("mask allows exactly the members") {
    const auto layout = plan_layout(20, {8, 12, 16}, 2);
    const auto nbs = surrounding_all(layout);
    const auto mask = neighborhood_mask(layout, nbs);
    CHECK(mask.rows == 7);
    CHECK(mask.cols == 21);
    std::size_t allowed = 0;
    for (std::size_t c = 0; c < 21; ++c) allowed += mask.allowed(6, c);
    CHECK(allowed == 9);
    CHECK(mask.allowed(6, layout.flat(2, 2)));
    CHECK_FALSE(mask.allowed(6, layout.flat(2, 1)));
  }
}

TEST_SUITE("intra-scale aggregation") {
  TEST_CASE("one row attends to itself") {
    Rng rng(9);
    const auto p = EncoderParams::create(small_config(EncoderMode::single), rng);
    const Tensor h = random_matrix(1, 8, rng);
    const Tensor o = intra_scale_aggregate(h, p.intra[0]);
    const Tensor expected = p.intra[0].ffn(matmul(h, p.intra[0].w_e));
    CHECK(testing::bit_equal(o, expected));
  }

  TEST_CASE("equal rows stay equal") {
    Rng rng(10);
    const auto p = EncoderParams::create(small_config(EncoderMode::single), rng);
    const Tensor row = random_matrix(1, 8, rng);
    const std::size_t idx[] = {0, 0, 0, 0};
    const Tensor o = intra_scale_aggregate(gather_rows(row, idx), p.intra[0]);
    for (std::size_t k = 1; k < 4; ++k) {
      for (std::size_t d = 0; d < 8; ++d) CHECK(o.at(k, d) == doctest::Approx(o.at(0, d)).epsilon(1e-13));
    }
  }

  TEST_CASE("dense oracle, three rows in two dimensions") {
    Rng rng(11);
    const auto p = EncoderParams::create(small_config(EncoderMode::single, {4}, 2), rng);
    const Tensor h = random_matrix(3, 2, rng);
    const Tensor o = intra_scale_aggregate(h, p.intra[0]);
    const Matrix e = mm(to_matrix(h), to_matrix(p.intra[0].w_e));
    for (std::size_t k = 0; k < 3; ++k) {
      const auto expected = ffn(p.intra[0].ffn, attend(e[k], e));
      for (std::size_t d = 0; d < 2; ++d) CHECK(o.at(k, d) == doctest::Approx(expected[d]).epsilon(1e-12));
    }
  }
}

TEST_SUITE("joint aggregation") {
  TEST_CASE("lone pivot") {
    Rng rng(12);
    const auto p = EncoderParams::create(small_config(EncoderMode::joint, {4}), rng);
    const auto layout = plan_layout(4, {4}, 2);
    const auto feats = random_scales(layout, 8, rng);
    const Tensor o = joint_aggregate(feats, extended_all(layout), layout, p);
    CHECK(testing::bit_equal(o, p.joint_ffn(matmul(feats[0], p.w_c))));
  }

  TEST_CASE("identical members") {
    Rng rng(13);
    const auto p = EncoderParams::create(small_config(EncoderMode::joint), rng);
    const auto layout = plan_layout(20, {4, 6, 8}, 2);
    const Tensor row = random_matrix(1, 8, rng);
    std::vector<Tensor> feats;
    for (int i = 0; i < 3; ++i) {
      std::vector<std::size_t> idx(layout.pivot_count, 0);
      feats.push_back(gather_rows(row, idx));
    }
    const Tensor o = joint_aggregate(feats, extended_all(layout), layout, p);
    const Tensor expected = p.joint_ffn(matmul(row, p.w_c));
    for (std::size_t k = 0; k < layout.pivot_count; ++k) {
      for (std::size_t d = 0; d < 8; ++d) CHECK(o.at(k, d) == doctest::Approx(expected.at(0, d)).epsilon(1e-12));
    }
  }

  TEST_CASE("row zero of full self-attention over the extended set") {
    Rng rng(14);
    const auto p = EncoderParams::create(small_config(EncoderMode::joint, {4, 6}), rng);
    const auto layout = plan_layout(6, {4, 6}, 2);
    REQUIRE(layout.pivot_count == 2);
    const auto feats = random_scales(layout, 8, rng);
    const auto nbs = extended_all(layout);
    const Tensor o = joint_aggregate(feats, nbs, layout, p);
    const Matrix wc = to_matrix(p.w_c);
    for (std::size_t k = 0; k < 2; ++k) {
      Matrix z;
      for (const auto& m : nbs[k].members) z.push_back(mm({to_matrix(feats[m.scale])[m.index]}, wc)[0]);
      // Full self-attention over Z*, then keep row 0 (the pivot).
      Matrix rows;
      for (const auto& q : z) rows.push_back(attend(q, z));
      const auto expected = ffn(p.joint_ffn, rows[0]);
      for (std::size_t d = 0; d < 8; ++d) CHECK(o.at(k, d) == doctest::Approx(expected[d]).epsilon(1e-12));
    }
  }

  TEST_CASE("rejects surrounding neighborhoods") {
    Rng rng(15);
    const auto p = EncoderParams::create(small_config(EncoderMode::joint), rng);
    const auto layout = plan_layout(20, {4, 6, 8}, 2);
    CHECK_THROWS_AS(joint_aggregate(random_scales(layout, 8, rng), surrounding_all(layout), layout, p),
                    PreconditionError);
  }
}

TEST_SUITE("encode") {
  TEST_CASE("memory is L x D in every mode") {
    for (auto mode : kModes) {
      Rng rng(16);
      auto cfg = small_config(mode, {8, 12, 16}, 32);
      const auto p = EncoderParams::create(cfg, rng);
      const auto seq = testing::random_features(20, 5, rng);
      const auto out = encode(seq, plan_layout_for(seq, cfg), p);
      CHECK(out.memory.rows() == 7);
      CHECK(out.memory.cols() == 32);
      CHECK(out.layout.pivot_count == 7);
    }
  }

  TEST_CASE("single mode on one scale is a one-layer self-attention encoder") {
    Rng rng(17);
    auto cfg = small_config(EncoderMode::single, {4});
    auto p = EncoderParams::create(cfg, rng);
    randomize(p.pos_table, rng);
    const auto seq = testing::random_features(20, 5, rng);
    const auto layout = plan_layout_for(seq, cfg);
    const Tensor x = add(p.input_proj(segment_feature_matrix(seq, layout, 0)), slice_rows(p.pos_table, 0, 9));
    const Tensor e = matmul(x, p.intra[0].w_e);
    const Tensor expected = p.intra[0].ffn(scaled_dot_attention(e, e, e));
    CHECK(testing::bit_equal(encode(seq, layout, p).memory, expected));
  }

  TEST_CASE("pool over identical scales equals encoding scale 0") {
    Rng rng(18);
    auto cfg = small_config(EncoderMode::pool);
    auto p = EncoderParams::create(cfg, rng);
    for (std::size_t i = 1; i < p.intra.size(); ++i) {
      std::copy(p.intra[0].w_e.data().begin(), p.intra[0].w_e.data().end(), p.intra[i].w_e.data().begin());
      NamedTensors src, dst;
      p.intra[0].ffn.collect("src", src);
      p.intra[i].ffn.collect("dst", dst);
      for (std::size_t t = 0; t < src.size(); ++t) {
        std::copy(src[t].second.data().begin(), src[t].second.data().end(), dst[t].second.data().begin());
      }
    }
    const auto seq = constant_video(20, 5, rng);
    const auto layout = plan_layout_for(seq, cfg);
    auto single_cfg = cfg;
    single_cfg.mode = EncoderMode::single;
    EncoderParams single = p;
    single.config = single_cfg;
    single.intra.resize(1);
    const Tensor a = encode(seq, layout, p).memory;
    const Tensor b = encode(seq, layout, single).memory;
    CHECK(testing::bit_equal(a, b));
  }

  TEST_CASE("attention traces") {
    Rng rng(19);
    const auto seq = testing::random_features(20, 5, rng);
    EncodeOptions opts;
    opts.keep_attention_trace = true;
    for (auto mode : kModes) {
      auto cfg = small_config(mode, {8, 12, 16});
      const auto p = EncoderParams::create(cfg, rng);
      const auto out = encode(seq, plan_layout_for(seq, cfg), p, opts);
      const bool attends = mode == EncoderMode::sequential || mode == EncoderMode::joint ||
                           mode == EncoderMode::nonrestrictive;
      REQUIRE(out.attention_trace.has_value() == attends);
      if (!attends) continue;
      const std::size_t expected = mode == EncoderMode::sequential ? 9 : mode == EncoderMode::joint ? 15 : 21;
      CHECK(out.attention_trace->weights[6].size() == expected);
      CHECK_FALSE(encode(seq, plan_layout_for(seq, cfg), p).attention_trace.has_value());
    }
  }

  TEST_CASE("only the blocks a mode uses are allocated") {
    Rng rng(20);
    auto names = [&](EncoderMode m) {
      std::vector<std::string> out;
      for (const auto& [n, t] : EncoderParams::create(small_config(m), rng).named_parameters()) out.push_back(n);
      return out;
    };
    auto has = [](const std::vector<std::string>& v, const std::string& prefix) {
      return std::any_of(v.begin(), v.end(), [&](const std::string& s) { return s.rfind(prefix, 0) == 0; });
    };
    const auto joint = names(EncoderMode::joint);
    CHECK(has(joint, "encoder.joint.w_c"));
    CHECK_FALSE(has(joint, "encoder.intra"));
    CHECK_FALSE(has(joint, "encoder.inter"));
    const auto pool = names(EncoderMode::pool);
    CHECK(has(pool, "encoder.intra2.w_e"));
    CHECK(has(names(EncoderMode::fc), "encoder.fc_agg"));
    CHECK(has(names(EncoderMode::nonrestrictive), "encoder.inter.w_g"));
  }

  TEST_CASE("errors") {
    Rng rng(21);
    const auto cfg = small_config(EncoderMode::joint);
    const auto p = EncoderParams::create(cfg, rng);
    const auto seq = testing::random_features(20, 5, rng);
    const auto wrong_dim = testing::random_features(20, 6, rng);
    CHECK_THROWS_AS(encode(wrong_dim, plan_layout_for(wrong_dim, cfg), p), DimensionError);
    CHECK_THROWS_AS(encode(seq, plan_layout(20, {4, 6, 8}, 1), p), PreconditionError);
    CHECK_THROWS_AS(encode(seq, plan_layout(21, {4, 6, 8}, 2), p), PreconditionError);
    const auto long_seq = testing::random_features(200, 5, rng);
    CHECK_THROWS_AS(encode(long_seq, plan_layout_for(long_seq, cfg), p), CapacityError);
    CHECK(encoder_mode_from_string("pool") == EncoderMode::pool);
    CHECK_THROWS_AS(encoder_mode_from_string("mean"), ConfigError);
  }

  TEST_CASE("dropout draws only when a generator is supplied") {
    Rng rng(22);
    auto cfg = small_config(EncoderMode::sequential);
    cfg.dropout = 0.3;
    const auto p = EncoderParams::create(cfg, rng);
    const auto seq = testing::random_features(20, 5, rng);
    const auto layout = plan_layout_for(seq, cfg);
    CHECK(testing::bit_equal(encode(seq, layout, p).memory, encode(seq, layout, p).memory));
    Rng a(1);
    EncodeOptions opts;
    opts.dropout_rng = &a;
    CHECK_FALSE(testing::bit_equal(encode(seq, layout, p, opts).memory, encode(seq, layout, p).memory));
  }
}

TEST_SUITE("end-to-end gradients") {
  TEST_CASE("toy model, every mode") {
    for (auto mode : kModes) {
      const auto report = model_gradcheck(mode, 5);
      INFO(to_string(mode), " worst ", report.worst_parameter);
      CHECK(report.max_rel_err < 1e-4);
    }
  }
}
