#include <cmath>
#include <cstring>
#include <random>

#include "icsml/layers.hpp"
#include "icsml/quantization.hpp"
#include "test_util.hpp"

using namespace icsml;

namespace {

bool same_bits(std::span<const float> a, std::span<const float> b) {
  return a.size() == b.size() && std::memcmp(a.data(), b.data(), a.size_bytes()) == 0;
}

// Sets `fraction` of the entries to exactly zero.
void zero_out(std::vector<float>& w, double fraction, std::uint64_t seed) {
  std::vector<std::size_t> idx(w.size());
  for (std::size_t i = 0; i < idx.size(); ++i) idx[i] = i;
  std::mt19937_64 rng(seed);
  std::shuffle(idx.begin(), idx.end(), rng);
  const auto k = static_cast<std::size_t>(std::llround(fraction * static_cast<double>(w.size())));
  for (std::size_t i = 0; i < k; ++i) w[idx[i]] = 0.0f;
}

SequentialModel float_layer(std::uint32_t in, std::uint32_t n, std::span<const float> w, std::span<const float> b,
                            SkipPolicy policy) {
  SequentialModel m(Arena(2 * in + n * (in + 2)));
  m.add_input(in);
  const auto d = m.add_dense(n, Activation::of(ActivationKind::ReLU));
  std::copy(w.begin(), w.end(), m.weights(d).begin());
  std::copy(b.begin(), b.end(), m.biases(d).begin());
  m.set_skip_policy(d, policy);
  m.seal();
  return m;
}

}  // namespace

TEST(MemoryFootprint, TableThreeTotals) {
  EXPECT_EQ(memory_footprint(512, 512, QuantScheme::Q8), (MemoryFootprint{262'144, 2048, 2052, 266'244, true}));
  EXPECT_EQ(memory_footprint(512, 512, QuantScheme::Q16), (MemoryFootprint{524'288, 2048, 2052, 528'388, true}));
  EXPECT_EQ(memory_footprint(512, 512, QuantScheme::Q32).total, 1'052'676u);
  const auto f32 = memory_footprint(512, 512, QuantScheme::F32);
  EXPECT_EQ(f32.total, 1'050'624u);
  EXPECT_FALSE(f32.has_scales);
  EXPECT_EQ(memory_footprint(1, 1, QuantScheme::Q8), (MemoryFootprint{1, 4, 8, 13, true}));
}

TEST(QuantScheme, BytesAndNames) {
  EXPECT_EQ(bytes_per_weight(QuantScheme::Q8), 1u);
  EXPECT_EQ(bytes_per_weight(QuantScheme::Q16), 2u);
  EXPECT_EQ(bytes_per_weight(QuantScheme::Q32), 4u);
  EXPECT_EQ(bytes_per_weight(QuantScheme::F32), 4u);
  EXPECT_EQ(scheme_iec_type(QuantScheme::Q8), "SINT");
  EXPECT_EQ(parse_scheme("q16"), QuantScheme::Q16);
}

TEST(QuantizeDense, RowExample) {
  const float w[] = {-1.0f, 0.5f, 1.0f}, b[] = {0.25f};
  const auto q = quantize_dense(w, b, 3, std::nullopt, QuantScheme::Q8, 2.0f);
  EXPECT_FLOAT_EQ(q.weight_scales[0], 1.0f / 127.0f);
  EXPECT_EQ(std::get<std::vector<std::int8_t>>(q.q_weights), (std::vector<std::int8_t>{-127, 64, 127}));
  EXPECT_FLOAT_EQ(q.input_scale, 2.0f / 127.0f);
  EXPECT_EQ(q.biases[0], 0.25f);
  EXPECT_EQ(q.scale_store().size(), 2u);
}

TEST(QuantizeDense, AllZeroRowGetsUnitScale) {
  for (auto scheme : {QuantScheme::Q8, QuantScheme::Q16, QuantScheme::Q32}) {
    const float w[] = {0, 0, 0, 0}, b[] = {0, 0};
    const auto q = quantize_dense(w, b, 2, std::nullopt, scheme, 1.0f);
    EXPECT_EQ(q.weight_scales, (std::vector<float>{1.0f, 1.0f}));
    for (std::size_t n = 0; n < 2; ++n)
      for (std::size_t i = 0; i < 2; ++i) EXPECT_EQ(q.weight(n, i), 0.0);
  }
}

TEST(QuantizeDense, RoundTripWithinHalfStep) {
  const auto w = testutil::random_floats(512 * 512, 1);
  const auto b = testutil::random_floats(512, 2);
  for (auto scheme : {QuantScheme::Q8, QuantScheme::Q16, QuantScheme::Q32}) {
    const auto q = quantize_dense(w, b, 512, std::nullopt, scheme, 1.0f);
    for (std::size_t n = 0; n < 512; ++n) {
      const double half = 0.5 * q.weight_scales[n];
      for (std::size_t i = 0; i < 512; ++i) {
        ASSERT_LE(std::fabs(q.weight(n, i) - w[n * 512 + i]), half * (1 + 1e-6)) << scheme_name(scheme);
      }
      EXPECT_GT(q.weight_scales[n], 0.0f);
    }
    std::visit([&](const auto& codes) {
      for (auto c : codes) ASSERT_LE(std::abs(static_cast<std::int64_t>(c)), q.qmax());
    }, q.q_weights);
  }
}

TEST(QuantizeDense, RejectsInvalidInputs) {
  const float w[] = {1, 2}, b[] = {0};
  EXPECT_ICSML_ERROR(quantize_dense(w, b, 2, std::nullopt, QuantScheme::F32, 1.0f), ErrorCode::UnsupportedKind);
  EXPECT_ICSML_ERROR(quantize_dense(w, b, 2, std::nullopt, QuantScheme::Q8, 0.0f), ErrorCode::ShapeMismatch);
  const float bad[] = {1, NAN};
  EXPECT_ICSML_ERROR(quantize_dense(bad, b, 2, std::nullopt, QuantScheme::Q8, 1.0f), ErrorCode::ShapeMismatch);
  const float s[] = {0.1f};  // N+1 scales required
  QuantCodes codes = std::vector<std::int8_t>{1, 2};
  EXPECT_ICSML_ERROR(make_quantized_dense(QuantScheme::Q8, 2, codes, b, s, std::nullopt), ErrorCode::ShapeMismatch);
  const float neg[] = {-0.1f, 0.1f};
  EXPECT_ICSML_ERROR(make_quantized_dense(QuantScheme::Q8, 2, codes, b, neg, std::nullopt), ErrorCode::ShapeMismatch);
}

TEST(QuantizedEval, ZeroInputGivesActivatedBiases) {
  const float w[] = {0.5f, -0.25f, 1.0f, 0.75f, -1.0f, 0.0f}, b[] = {0.3f, -0.7f};
  const auto q = quantize_dense(w, b, 3, Activation::of(ActivationKind::ReLU), QuantScheme::Q8, 1.0f);
  OpCounters c;
  const float x[] = {0, 0, 0};
  EXPECT_EQ(quantized_dense_eval(q, x, c), (std::vector<float>{0.3f, 0.0f}));
}

TEST(QuantizedEval, OpCountsMatchFloatAndQ8Figures) {
  const auto w = testutil::random_floats(512 * 512, 3);
  const auto b = testutil::random_floats(512, 4);
  const auto x = testutil::random_floats(512, 5);
  const auto q = quantize_dense(w, b, 512, Activation::of(ActivationKind::ReLU), QuantScheme::Q8, 1.0f);
  OpCounters c;
  quantized_dense_eval(q, x, c);
  EXPECT_EQ(c, (OpCounters{1024, 512, 262'144, 262'144, 0}));

  auto f = float_layer(512, 512, w, b, SkipPolicy::NoSkip);
  f.set_input(x);
  f.evaluate();
  EXPECT_EQ(f.counters(), (OpCounters{262'144, 262'656, 0, 0, 0}));
}

TEST(QuantizedEval, WithinErrorPropagationBound) {
  for (auto scheme : {QuantScheme::Q8, QuantScheme::Q16}) {
    const auto w = testutil::random_floats(64 * 64, 6);
    const auto b = testutil::random_floats(64, 7);
    const auto x = testutil::random_floats(64, 8);
    const auto q = quantize_dense(w, b, 64, std::nullopt, scheme, calibrate_input_max(x));
    OpCounters c;
    const auto got = quantized_dense_eval(q, x, c);
    for (std::size_t n = 0; n < 64; ++n) {
      double exact = b[n], bound = 0.0;
      for (std::size_t i = 0; i < 64; ++i) {
        exact += static_cast<double>(w[n * 64 + i]) * x[i];
        // |w'x' - wx| with |w' - w| <= sw/2 and |x' - x| <= sx/2.
        bound += std::fabs(w[n * 64 + i]) * q.input_scale / 2 + std::fabs(x[i]) * q.weight_scales[n] / 2 +
                 q.input_scale * q.weight_scales[n] / 4;
      }
      EXPECT_LE(std::fabs(got[n] - exact), bound + 1e-5) << scheme_name(scheme) << " row " << n;
    }
  }
}

TEST(QuantizedEval, InputsBeyondCalibrationClamp) {
  const float w[] = {1.0f}, b[] = {0.0f};
  const auto q = quantize_dense(w, b, 1, std::nullopt, QuantScheme::Q8, 1.0f);
  OpCounters c;
  const float x[] = {5.0f};
  EXPECT_NEAR(quantized_dense_eval(q, x, c)[0], 1.0f, 1e-6);
}

TEST(QuantizedEval, Q32UsesWideAccumulation) {
  std::vector<float> w(4096, 1.0f), b(1, 0.0f), x(4096, 1.0f);
  const auto q = quantize_dense(w, b, 4096, std::nullopt, QuantScheme::Q32, 1.0f);
  OpCounters c;
  // Each product is qmax^2 ~ 4.6e18; 4096 of them overflow 64 bits.
  EXPECT_NEAR(quantized_dense_eval(q, x, c)[0], 4096.0f, 4096.0f * 1e-6f);
}

TEST(SkipPolicies, QuantizedOutputsMatchNoSkipBitwise) {
  for (double sparsity : {0.0, 0.5, 0.9, 1.0}) {
    auto w = testutil::random_floats(128 * 96, 9);
    zero_out(w, sparsity, 10);
    const auto b = testutil::random_floats(96, 11);
    auto x = testutil::random_floats(128, 12);
    zero_out(x, 0.3, 13);
    const auto q = quantize_dense(w, b, 128, Activation::of(ActivationKind::ReLU), QuantScheme::Q8, 1.0f);
    std::size_t zero_codes = 0;
    for (auto c : std::get<std::vector<std::int8_t>>(q.q_weights)) zero_codes += c == 0;

    OpCounters none, zw, zwi;
    const auto ref = quantized_dense_eval(q, x, none, SkipPolicy::NoSkip);
    EXPECT_TRUE(same_bits(ref, quantized_dense_eval(q, x, zw, SkipPolicy::SkipZeroWeight)));
    EXPECT_TRUE(same_bits(ref, quantized_dense_eval(q, x, zwi, SkipPolicy::SkipZeroWeightOrInput)));
    EXPECT_EQ(zw.skipped, zero_codes);
    EXPECT_EQ(zw.int_mul + zw.skipped, 128u * 96u);
    EXPECT_GE(zwi.skipped, zw.skipped);
  }
}

TEST(SparseDense, AllZeroWeightsSkipEverything) {
  std::vector<float> w(64 * 32, 0.0f);
  const auto b = testutil::random_floats(32, 1);
  auto m = float_layer(64, 32, w, b, SkipPolicy::SkipZeroWeight);
  m.set_input(testutil::random_floats(64, 2));
  m.evaluate();
  EXPECT_EQ(m.counters().skipped, 64u * 32u);
  for (std::size_t n = 0; n < 32; ++n) EXPECT_EQ(m.output()[n], std::max(0.0f, b[n]));
}

TEST(SparseDense, DenseWeightsSkipNothing) {
  const auto w = testutil::random_floats(64 * 32, 3, 0.1f, 1.0f);
  const auto b = testutil::random_floats(32, 4);
  const auto x = testutil::random_floats(64, 5);
  auto plain = float_layer(64, 32, w, b, SkipPolicy::NoSkip);
  auto skip = float_layer(64, 32, w, b, SkipPolicy::SkipZeroWeight);
  plain.set_input(x);
  skip.set_input(x);
  plain.evaluate();
  skip.evaluate();
  EXPECT_TRUE(same_bits(plain.output(), skip.output()));
  EXPECT_EQ(skip.counters().skipped, 0u);
  EXPECT_EQ(skip.counters(), plain.counters());
}

TEST(SparseDense, NinetyPercentSparseMatchesDenseEval) {
  auto w = testutil::random_floats(256 * 128, 6);
  zero_out(w, 0.9, 7);
  const auto b = testutil::random_floats(128, 8);
  const auto x = testutil::random_floats(256, 9);
  auto plain = float_layer(256, 128, w, b, SkipPolicy::NoSkip);
  plain.set_input(x);
  plain.evaluate();
  for (auto policy : {SkipPolicy::SkipZeroWeight, SkipPolicy::SkipZeroWeightOrInput}) {
    auto skip = float_layer(256, 128, w, b, policy);
    skip.set_input(x);
    skip.evaluate();
    EXPECT_TRUE(same_bits(plain.output(), skip.output()));
    EXPECT_NEAR(static_cast<double>(skip.counters().skipped) / (256.0 * 128.0), 0.9, 1e-3);
  }
}

TEST(SparseDense, ChangingWeightsRebuildsTheIndex) {
  std::vector<float> w(8 * 4, 1.0f), b(4, 0.0f);
  auto m = float_layer(8, 4, w, b, SkipPolicy::SkipZeroWeight);
  std::fill(m.weights(1).begin(), m.weights(1).end(), 0.0f);
  m.set_input(std::vector<float>(8, 1.0f));
  m.evaluate();
  EXPECT_EQ(m.counters().skipped, 32u);
  EXPECT_EQ(m.output()[0], 0.0f);
}

TEST(QuantizedModel, ArgmaxMostlyPreservedOnClassifier) {
  // Random 3-class classifier, Q8 hidden layer vs float.
  SequentialModel fm(Arena(20'000));
  fm.add_input(64);
  const auto h = fm.add_dense(48, Activation::of(ActivationKind::ReLU));
  const auto o = fm.add_dense(3, std::nullopt);
  for (auto idx : {h, o}) {
    const auto w = testutil::random_floats(fm.layer(idx).weights.length, idx * 7);
    std::copy(w.begin(), w.end(), fm.weights(idx).begin());
  }
  const auto q = quantize_dense(fm, h, QuantScheme::Q8, 1.0f);
  SequentialModel qm(Arena(20'000));
  qm.add_input(64);
  qm.add_quantized_dense(q);
  const auto o2 = qm.add_dense(3, std::nullopt);
  std::copy(fm.weights(o).begin(), fm.weights(o).end(), qm.weights(o2).begin());
  int agree = 0;
  for (std::uint64_t s = 0; s < 200; ++s) {
    const auto x = testutil::random_floats(64, 1000 + s);
    fm.set_input(x);
    qm.set_input(x);
    fm.evaluate();
    qm.evaluate();
    const auto a = std::max_element(fm.output().begin(), fm.output().end()) - fm.output().begin();
    const auto c = std::max_element(qm.output().begin(), qm.output().end()) - qm.output().begin();
    agree += a == c;
  }
  EXPECT_GE(agree, 190);
}
