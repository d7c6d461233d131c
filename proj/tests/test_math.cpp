#include <algorithm>
#include <cmath>
#include <random>

#include <boost/multiprecision/cpp_int.hpp>

#include "icsml/math.hpp"
#include "test_util.hpp"

using namespace icsml;

TEST(Dot, HandExamples) {
  OpCounters c;
  const float a[] = {1, 2, 3}, b[] = {4, 5, 6}, z[] = {0, 0, 0};
  EXPECT_EQ(dot(a, b, c), 32.0f);
  EXPECT_EQ(dot(a, z, c), 0.0f);
  EXPECT_EQ(c.fp_mul, 6u);
  EXPECT_EQ(c.fp_add, 6u);
}

TEST(Dot, MatchesLeftToRightOracleBitwise) {
  for (std::uint64_t seed = 0; seed < 20; ++seed) {
    const auto a = testutil::random_floats(128, seed, -10, 10);
    const auto b = testutil::random_floats(128, seed + 1000, -10, 10);
    float oracle = 0.0f;
    for (std::size_t i = 0; i < a.size(); ++i) oracle = oracle + a[i] * b[i];
    OpCounters c;
    EXPECT_EQ(dot(a, b, c), oracle);
  }
}

TEST(Activate, ScalarExamples) {
  const auto relu = Activation::of(ActivationKind::ReLU);
  EXPECT_EQ(activate(relu, -1.0f), 0.0f);
  EXPECT_EQ(activate(relu, 2.5f), 2.5f);
  EXPECT_EQ(activate(Activation::of(ActivationKind::Sigmoid), 0.0f), 0.5f);
  EXPECT_EQ(activate(Activation::of(ActivationKind::Swish), 0.0f), 0.0f);
  EXPECT_EQ(activate(Activation::of(ActivationKind::Tanh), 0.0f), 0.0f);
  EXPECT_FLOAT_EQ(activate(Activation::of(ActivationKind::LeakyReLU, 0.1f), -2.0f), -0.2f);
  EXPECT_EQ(activate(Activation::of(ActivationKind::BinaryStep), 0.0f), 0.0f);
  EXPECT_EQ(activate(Activation::of(ActivationKind::BinaryStep), 1e-6f), 1.0f);
  EXPECT_FLOAT_EQ(activate(Activation::of(ActivationKind::ELU), -1.0f), std::expm1(-1.0f));
  EXPECT_ICSML_ERROR(activate(Activation::of(ActivationKind::Softmax), 1.0f), ErrorCode::UnsupportedKind);
}

TEST(Activate, DefaultAlphasAndValidation) {
  EXPECT_EQ(Activation::of(ActivationKind::ELU).alpha, 1.0f);
  EXPECT_EQ(Activation::of(ActivationKind::LeakyReLU).alpha, 0.01f);
  EXPECT_ICSML_ERROR(Activation::of(ActivationKind::LeakyReLU, -0.5f), ErrorCode::UnsupportedKind);
  EXPECT_ICSML_ERROR(Activation::of(ActivationKind::ELU, NAN), ErrorCode::UnsupportedKind);
}

TEST(Activate, MonotonicOnNonNegativeInputs) {
  auto xs = testutil::random_floats(500, 3, 0.0f, 20.0f);
  std::sort(xs.begin(), xs.end());
  for (auto kind : {ActivationKind::ReLU, ActivationKind::LeakyReLU, ActivationKind::Sigmoid, ActivationKind::Tanh,
                    ActivationKind::Swish}) {
    const auto act = Activation::of(kind);
    for (std::size_t i = 1; i < xs.size(); ++i) {
      EXPECT_LE(activate(act, xs[i - 1]), activate(act, xs[i])) << activation_name(kind);
    }
  }
}

TEST(Softmax, Examples) {
  for (float c : {-50.0f, 0.0f, 3.5f, 1e4f}) {
    const float x[] = {c, c, c, c};
    for (float y : softmax(x)) EXPECT_FLOAT_EQ(y, 0.25f);
  }
  const float two[] = {0.0f, std::log(3.0f)};
  const auto y = softmax(two);
  EXPECT_NEAR(y[0], 0.25f, 1e-7);
  EXPECT_NEAR(y[1], 0.75f, 1e-7);
  EXPECT_ICSML_ERROR(softmax(std::span<const float>{}), ErrorCode::EmptyVector);
}

TEST(Softmax, MatchesUnshiftedOracleAndSumsToOne) {
  for (std::uint64_t seed = 0; seed < 20; ++seed) {
    const auto x = testutil::random_floats(16, seed, -80.0f, 80.0f);
    const auto y = softmax(x);
    double total = 0.0;
    for (float v : x) total += std::exp(static_cast<double>(v));
    double sum = 0.0;
    for (std::size_t i = 0; i < x.size(); ++i) {
      EXPECT_NEAR(y[i], std::exp(static_cast<double>(x[i])) / total, 1e-6);
      sum += y[i];
      EXPECT_GE(y[i], 0.0f);
    }
    EXPECT_NEAR(sum, 1.0, 1e-6);
    const auto arg_x = std::max_element(x.begin(), x.end()) - x.begin();
    const auto arg_y = std::max_element(y.begin(), y.end()) - y.begin();
    EXPECT_EQ(arg_x, arg_y);
  }
}

TEST(Softmax, StrictlyPositiveWithinRange) {
  const auto x = testutil::random_floats(8, 5, -40.0f, 40.0f);
  for (float v : softmax(x)) EXPECT_GT(v, 0.0f);
}

TEST(IntDot, HandExamples) {
  OpCounters c;
  const std::int32_t a[] = {-127, 64}, b[] = {100, -2}, z[] = {0, 0};
  EXPECT_EQ(int_dot(std::span<const std::int32_t>(a), std::span<const std::int32_t>(b), c), -12'828);
  EXPECT_EQ(int_dot(std::span<const std::int32_t>(a), std::span<const std::int32_t>(z), c), 0);
  EXPECT_EQ(c.int_mul, 4u);
  EXPECT_EQ(c.int_add, 4u);
  EXPECT_EQ(c.fp_mul, 0u);
}

TEST(IntDot, EqualsArbitraryPrecisionOracle) {
  using boost::multiprecision::cpp_int;
  std::mt19937_64 rng(99);
  std::uniform_int_distribution<int> code(-127, 127);
  for (int trial = 0; trial < 20; ++trial) {
    std::vector<std::int8_t> a(512), b(512);
    for (auto& v : a) v = static_cast<std::int8_t>(code(rng));
    for (auto& v : b) v = static_cast<std::int8_t>(code(rng));
    cpp_int oracle = 0;
    for (std::size_t i = 0; i < a.size(); ++i) oracle += cpp_int(a[i]) * cpp_int(b[i]);
    OpCounters c;
    const auto got = int_dot<std::int64_t>(std::span<const std::int8_t>(a), std::span<const std::int8_t>(b), c);
    EXPECT_EQ(cpp_int(got), oracle);
  }
}

TEST(IntDot, WideAccumulatorForThirtyTwoBitCodes) {
  using boost::multiprecision::cpp_int;
  std::vector<std::int32_t> a(512, std::numeric_limits<std::int32_t>::max()), b(512, std::numeric_limits<std::int32_t>::max());
  cpp_int oracle = 0;
  for (std::size_t i = 0; i < a.size(); ++i) oracle += cpp_int(a[i]) * cpp_int(b[i]);
  OpCounters c;
  const __int128 got = int_dot<__int128>(std::span<const std::int32_t>(a), std::span<const std::int32_t>(b), c);
  cpp_int wide = static_cast<std::int64_t>(got >> 64);
  wide <<= 64;
  wide += static_cast<std::uint64_t>(got);
  EXPECT_EQ(wide, oracle);
}
