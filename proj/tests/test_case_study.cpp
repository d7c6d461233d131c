#include <cmath>
#include <cstring>
#include <deque>

#include "icsml/case_study.hpp"
#include "test_util.hpp"

using namespace icsml;
using namespace icsml::msf;

namespace {

SequentialModel bundled_detector() {
  return build_model(load_manifest(testutil::models_dir() / "msf_detector" / "manifest.json"));
}

// 400 -> 2 linear model with all weights zero.
SequentialModel constant_detector(float b0, float b1) {
  SequentialModel m(Arena(2000));
  m.add_input(kWindowSize);
  const auto d = m.add_dense(2, std::nullopt);
  m.biases(d)[0] = b0;
  m.biases(d)[1] = b1;
  m.seal();
  return m;
}

bool same_floats(std::span<const float> a, std::span<const float> b) {
  return a.size() == b.size() && std::memcmp(a.data(), b.data(), a.size_bytes()) == 0;
}

}  // namespace

TEST(Adc, RangeEndsAreExact) {
  EXPECT_EQ(adc_sample(80.0, kTb0Range), 80.0f);
  EXPECT_EQ(adc_sample(100.0, kTb0Range), 100.0f);
  EXPECT_EQ(adc_sample(-5.0, kTb0Range), 80.0f);
  EXPECT_EQ(adc_sample(1e9, kTb0Range), 100.0f);
  EXPECT_EQ(adc_sample(0.5, {0.0, 1.0}), 0.5f);
}

TEST(Adc, TwelveBitErrorBound) {
  for (int i = 0; i <= 10'000; ++i) {
    const double v = i / 10'000.0;
    EXPECT_LE(std::fabs(adc_sample(v, {0.0, 1.0}) - v), 1.0 / 8192.0 + 1e-9) << v;
  }
  for (int bits = 8; bits <= 16; ++bits) {
    const double half_step = 20.0 / std::ldexp(1.0, bits) / 2.0;
    for (int i = 0; i <= 997; ++i) {
      const double v = 80.0 + 20.0 * i / 997.0;
      EXPECT_LE(std::fabs(adc_sample(v, kTb0Range, bits) - v), half_step + 1e-5) << bits << " " << v;
    }
  }
}

TEST(Adc, BadConfiguration) {
  EXPECT_ICSML_ERROR(adc_sample(1.0, {0.0, 1.0}, 7), ErrorCode::ShapeMismatch);
  EXPECT_ICSML_ERROR(adc_sample(1.0, {0.0, 1.0}, 17), ErrorCode::ShapeMismatch);
  EXPECT_ICSML_ERROR(adc_sample(1.0, {1.0, 1.0}), ErrorCode::ShapeMismatch);
}

TEST(Features, MapRangesOntoUnitInterval) {
  EXPECT_EQ(detector_features(90.0f, 19.0f), (std::array<float, 2>{0.0f, 0.0f}));
  EXPECT_EQ(detector_features(80.0f, 17.0f), (std::array<float, 2>{-1.0f, -1.0f}));
  EXPECT_EQ(detector_features(100.0f, 21.0f), (std::array<float, 2>{1.0f, 1.0f}));
}

TEST(Window, PushExamples) {
  SlidingWindow w;
  EXPECT_EQ(w.fill, 0u);
  w = window_push(w, 1.0f, 2.0f);
  EXPECT_EQ(w.fill, 2u);
  EXPECT_EQ(w.contents[0], 1.0f);
  EXPECT_EQ(w.contents[1], 2.0f);
  for (int k = 1; k < 200; ++k) w.push(static_cast<float>(k), -static_cast<float>(k));
  EXPECT_TRUE(w.full());
  EXPECT_EQ(w.contents[0], 1.0f);
  w.push(500.0f, 600.0f);
  EXPECT_TRUE(w.full());
  EXPECT_EQ(w.contents[0], 1.0f);  // the pair (1, -1) pushed second is now oldest
  EXPECT_EQ(w.contents[1], -1.0f);
  EXPECT_EQ(w.contents[kWindowSize - 2], 500.0f);
  EXPECT_EQ(w.contents[kWindowSize - 1], 600.0f);
}

TEST(Window, MatchesNaiveLastFrames) {
  std::deque<std::pair<float, float>> recent;
  SlidingWindow w;
  const auto values = testutil::random_floats(2 * 1000, 31);
  for (std::size_t k = 0; k < 1000; ++k) {
    w.push(values[2 * k], values[2 * k + 1]);
    recent.emplace_back(values[2 * k], values[2 * k + 1]);
    if (recent.size() > kWindowSamples) recent.pop_front();
    ASSERT_EQ(w.fill, 2 * recent.size());
    for (std::size_t i = 0; i < recent.size(); ++i) {
      ASSERT_EQ(w.contents[2 * i], recent[i].first);
      ASSERT_EQ(w.contents[2 * i + 1], recent[i].second);
    }
  }
}

TEST(Plant, DeterministicForSeed) {
  SimulationConfig c;
  c.seed = 77;
  c.cycles = 800;
  c.attack = AttackSpec::make(AttackKind::SteamOscillation, 300);
  const auto a = simulate(c), b = simulate(c);
  EXPECT_TRUE(same_floats(a.sensors, b.sensors));
  EXPECT_TRUE(same_floats(a.ws, b.ws));
  c.seed = 78;
  EXPECT_FALSE(same_floats(a.sensors, simulate(c).sensors));
}

TEST(Plant, NoiselessEquilibriumAtNominalSteam) {
  PlantParams p;
  p.tb0_noise = p.wd_noise = p.disturbance_stddev = 0.0;
  Plant plant(p, 1);
  EXPECT_DOUBLE_EQ(p.ws_nominal(), 50.0);
  for (int k = 0; k < 1000; ++k) {
    const auto m = plant.step(p.ws_nominal());
    ASSERT_NEAR(m.tb0, p.tb0_nominal, 1e-9);
    ASSERT_NEAR(m.wd, p.wd_nominal, 1e-9);
  }
}

TEST(Plant, ActuatorAttackDivergesFromCleanRun) {
  SimulationConfig c;
  c.seed = 5;
  c.cycles = 700;
  const auto clean = simulate(c);
  c.attack = AttackSpec{AttackKind::ActuatorScaling, 436, 0.5};
  const auto attacked = simulate(c);
  const double threshold = 5.0 * PlantParams{}.tb0_noise;
  for (std::size_t k = 0; k < 436; ++k) {
    ASSERT_EQ(attacked.sensors[2 * k], clean.sensors[2 * k]) << k;
  }
  std::optional<std::size_t> diverged;
  for (std::size_t k = 436; k < 636 && !diverged; ++k) {
    if (std::fabs(attacked.sensors[2 * k] - clean.sensors[2 * k]) > threshold) diverged = k;
  }
  ASSERT_TRUE(diverged.has_value());
  EXPECT_LT(*diverged - 436, 200u);
}

TEST(Plant, LabelsFollowAttackStart) {
  SimulationConfig c;
  c.cycles = 700;
  c.attack = AttackSpec::make(AttackKind::FlowSensorOffset, 436);
  const auto t = simulate(c);
  ASSERT_EQ(t.labels.size(), 700u);
  for (std::size_t k = 0; k < 700; ++k) EXPECT_EQ(t.labels[k], k >= 436 ? 1 : 0) << k;
}

TEST(Detector, WindowNotFull) {
  auto m = constant_detector(1, 0);
  SlidingWindow w;
  EXPECT_ICSML_ERROR(detect(m, w), ErrorCode::WindowNotFull);
  for (std::size_t k = 0; k + 1 < kWindowSamples; ++k) w.push(0, 0);
  EXPECT_ICSML_ERROR(detect(m, w), ErrorCode::WindowNotFull);
  w.push(0, 0);
  EXPECT_NO_THROW(detect(m, w));
}

TEST(Detector, ConstantModels) {
  SlidingWindow w;
  for (std::size_t k = 0; k < kWindowSamples; ++k) w.push(0.3f, -0.2f);
  auto normal = constant_detector(1, 0);
  EXPECT_EQ(detect(normal, w).cls, DetectorClass::Normal);
  auto attack = constant_detector(0, 1);
  EXPECT_EQ(detect(attack, w).cls, DetectorClass::Attack);
  auto tie = constant_detector(0, 0);
  const auto d = detect(tie, w);
  EXPECT_EQ(d.cls, DetectorClass::Normal);
  EXPECT_EQ(d.probs[0], 0.5f);
}

TEST(Detector, SilentModelNeverFlags) {
  auto m = constant_detector(1, 0);
  SimulationConfig c;
  c.cycles = 700;
  c.attack = AttackSpec::make(AttackKind::ActuatorScaling, 436);
  const auto t = simulate(c, &m);
  EXPECT_FALSE(t.first_attack_cycle.has_value());
  EXPECT_EQ(t.attack_classifications, 0u);
  ASSERT_EQ(t.classes.size(), 700u);
  EXPECT_EQ(std::count(t.classes.begin(), t.classes.end(), -1), static_cast<long>(kWindowSamples - 1));
}

TEST(Detector, ReplayReproducesClosedLoopClassifications) {
  auto model = bundled_detector();
  SimulationConfig c;
  c.seed = 3;
  c.cycles = 900;
  c.attack = AttackSpec::make(AttackKind::TempSensorDrift, 436);
  const auto t = simulate(c, &model);
  const auto r = replay(model, t.sensors);
  EXPECT_EQ(r.classes, t.classes);
  EXPECT_EQ(r.first_attack_cycle, t.first_attack_cycle);
  EXPECT_EQ(r.inferences, 900u - (kWindowSamples - 1));
  const float ragged[] = {1, 2, 3};
  EXPECT_ICSML_ERROR(replay(model, ragged), ErrorCode::ShapeMismatch);
}

TEST(Detector, AttackAfterTraceEndChangesNothing) {
  auto model = bundled_detector();
  SimulationConfig c;
  c.seed = 9;
  c.cycles = 600;
  const auto clean = simulate(c, &model);
  c.attack = AttackSpec::make(AttackKind::ActuatorScaling, 600);
  const auto late = simulate(c, &model);
  EXPECT_TRUE(same_floats(clean.sensors, late.sensors));
  EXPECT_EQ(clean.classes, late.classes);
  EXPECT_EQ(clean.first_attack_cycle, late.first_attack_cycle);
  EXPECT_EQ(std::count(late.labels.begin(), late.labels.end(), 1), 0);
}

TEST(Detector, NonIntrusiveToControl) {
  auto model = bundled_detector();
  for (std::uint64_t seed : {1u, 2u}) {
    SimulationConfig c;
    c.seed = seed;
    c.cycles = 2000;
    c.attack = AttackSpec::make(AttackKind::SteamLoss, 1000);
    const auto without = simulate(c);
    const auto with = simulate(c, &model);
    EXPECT_TRUE(same_floats(without.ws, with.ws)) << seed;
    EXPECT_TRUE(same_floats(without.sensors, with.sensors)) << seed;
    EXPECT_EQ(with.overruns, 0u);
  }
}

TEST(Detector, BundledModelShape) {
  auto model = bundled_detector();
  EXPECT_EQ(model.input_size(), kWindowSize);
  EXPECT_EQ(model.output_size(), 2u);
  EXPECT_EQ(model.parameter_count(), 28'306u);
}

TEST(Detector, BundledModelMatchesExporterOutputs) {
  auto model = bundled_detector();
  const auto dir = testutil::models_dir() / "msf_detector";
  const auto inputs = binarr_load_vector<float>(dir / "reference_inputs.bin", 100 * kWindowSize);
  const auto expected = binarr_load_vector<float>(dir / "reference_outputs.bin", 100 * 2);
  for (std::size_t w = 0; w < 100; ++w) {
    model.set_input(std::span<const float>(inputs).subspan(w * kWindowSize, kWindowSize));
    model.evaluate();
    for (std::size_t j = 0; j < 2; ++j) EXPECT_NEAR(model.output()[j], expected[2 * w + j], 1e-5) << w;
  }
}

TEST(Dataset, SmallGeneration) {
  DatasetConfig cfg;
  cfg.attacked_episodes = 3;
  cfg.normal_episodes = 1;
  cfg.cycles_per_episode = 650;
  const auto eps = generate_dataset(cfg);
  ASSERT_EQ(eps.size(), 4u);
  for (std::size_t e = 0; e < 3; ++e) {
    ASSERT_TRUE(eps[e].attack.has_value());
    EXPECT_GE(eps[e].attack->start_cycle, cfg.start_min);
    EXPECT_LE(eps[e].attack->start_cycle, cfg.start_max);
  }
  EXPECT_FALSE(eps[3].attack.has_value());
  EXPECT_EQ(std::count(eps[3].trace.labels.begin(), eps[3].trace.labels.end(), 1), 0);
}
