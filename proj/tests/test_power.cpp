#include <gtest/gtest.h>

#include <cmath>
#include <fstream>
#include <random>

#include "skillsight/error.hpp"
#include "skillsight/power.hpp"
#include "oracles.hpp"
#include "power_oracle.hpp"

using namespace skillsight;
using namespace skillsight::power;

namespace {

Architecture load_config(const std::string& name) {
  return Architecture::load(std::filesystem::path(SKILLSIGHT_SOURCE_DIR) / "configs/arch" / name);
}

}  // namespace

TEST(CountMacs, SingleLinear) {
  Layer l;
  l.kind = LayerKind::kLinear;
  l.tokens = 16;
  l.in = 14;
  l.out = 128;
  EXPECT_EQ(count_macs(l), 28672);
}

TEST(CountMacs, NormAndElementwiseAreFree) {
  Layer n;
  n.kind = LayerKind::kNorm;
  n.tokens = 10;
  n.width = 32;
  EXPECT_EQ(count_macs(n), 0);
  n.kind = LayerKind::kElementwise;
  EXPECT_EQ(count_macs(n), 0);
}

TEST(CountMacs, MatchesGemmOracleOnRandomArchitectures) {
  std::mt19937_64 rng(11);
  for (int trial = 0; trial < 20; ++trial) {
    Architecture a;
    const int n = std::uniform_int_distribution<int>(1, 6)(rng);
    for (int i = 0; i < n; ++i) a.layers.push_back(oracle::random_layer(rng));
    EXPECT_EQ(count_macs(a), oracle::oracle_macs(a)) << a.to_json().dump();
  }
}

TEST(CountMacs, AdditiveOverComposition) {
  std::mt19937_64 rng(5);
  for (int trial = 0; trial < 20; ++trial) {
    Architecture a, b, ab;
    for (int i = 0; i < 3; ++i) a.layers.push_back(oracle::random_layer(rng));
    for (int i = 0; i < 2; ++i) b.layers.push_back(oracle::random_layer(rng));
    ab.layers = a.layers;
    ab.layers.insert(ab.layers.end(), b.layers.begin(), b.layers.end());
    EXPECT_EQ(count_macs(ab), count_macs(a) + count_macs(b));
    EXPECT_EQ(estimate_bytes(ab), estimate_bytes(a) + estimate_bytes(b));
  }
}

TEST(EstimateBytes, SingleLinearRule) {
  Layer l;
  l.kind = LayerKind::kLinear;
  l.tokens = 16;
  l.in = 14;
  l.out = 128;
  EXPECT_EQ(estimate_bytes(l), 4 * (16 * 14 + 16 * 128 + 14 * 128 + 128));
  l.bias = false;
  EXPECT_EQ(estimate_bytes(l), 4 * (16 * 14 + 16 * 128 + 14 * 128));
}

TEST(EstimateBytes, RepeatScales) {
  Layer l;
  l.kind = LayerKind::kAttentionBlock;
  l.tokens = 9;
  l.width = 16;
  l.ffn = 64;
  l.heads = 2;
  const Count one = estimate_bytes(l);
  l.repeat = 3;
  EXPECT_EQ(estimate_bytes(l), 3 * one);
}

TEST(ArchitectureJson, RoundTripAndErrors) {
  const auto a = load_config("timesformer_base.json");
  EXPECT_EQ(Architecture::from_json(a.to_json()).to_json(), a.to_json());
  try {
    Layer::from_json({{"kind", "lstm"}});
    FAIL();
  } catch (const ConfigError& e) {
    EXPECT_NE(std::string(e.what()).find("lstm"), std::string::npos);
  }
  EXPECT_THROW(Layer::from_json({{"kind", "linear"}, {"tokens", 2}, {"in", 3}}), ConfigError);
  EXPECT_THROW(Layer::from_json({{"kind", "linear"}, {"tokens", 2}, {"in", 3}, {"out", 4}, {"colour", 1}}),
               ConfigError);
}

TEST(PowerMw, SensorOnlyConstants) {
  PowerProfile p;
  p.sensor_duty = {{"eye", 1.0}};
  EXPECT_DOUBLE_EQ(power_mw(p).total_mw(), 7.8);
  p.sensor_duty = {{"rgb", 1.0}};
  EXPECT_DOUBLE_EQ(power_mw(p).total_mw(), 35.0);
}

TEST(PowerMw, ComputeTerm) {
  PowerProfile p;
  p.macs = 1e9;
  p.interval_s = 1.0;
  const auto b = power_mw(p);
  EXPECT_NEAR(b.total_mw(), 4.6, 1e-12);
  EXPECT_NEAR(b.compute_mw, 4.6, 1e-12);
  EXPECT_EQ(b.memory_mw, 0.0);
}

TEST(PowerMw, UnitConversion) {
  PowerConstants c;
  c.alpha_pj_per_mac = 1.0;
  PowerProfile p;
  p.macs = 1.0;
  p.interval_s = 1.0;
  EXPECT_NEAR(power_mw(p, c).compute_mw, 1e-9, 1e-24);
  c.beta_pj_per_byte = 1.0;
  p.macs = 0.0;
  p.bytes = 1.0;
  EXPECT_NEAR(power_mw(p, c).memory_mw, 1e-9, 1e-24);
}

TEST(PowerMw, Superposition) {
  std::mt19937_64 rng(3);
  std::uniform_real_distribution<double> u(0.0, 1.0);
  for (int trial = 0; trial < 50; ++trial) {
    PowerProfile a, b, s;
    a.macs = u(rng) * 1e9;
    b.macs = u(rng) * 1e9;
    a.bytes = u(rng) * 1e8;
    b.bytes = u(rng) * 1e8;
    a.interval_s = b.interval_s = s.interval_s = 0.5 + 10 * u(rng);
    a.sensor_duty = {{"eye", 0.5 * u(rng)}, {"imu", 0.5 * u(rng)}};
    b.sensor_duty = {{"eye", 0.5 * u(rng)}, {"imu", 0.5 * u(rng)}};
    s.macs = a.macs + b.macs;
    s.bytes = a.bytes + b.bytes;
    for (const auto& k : {"eye", "imu"}) s.sensor_duty[k] = a.sensor_duty[k] + b.sensor_duty[k];
    EXPECT_NEAR(power_mw(s).total_mw(), power_mw(a).total_mw() + power_mw(b).total_mw(), 1e-9);
  }
}

TEST(PowerMw, Errors) {
  PowerProfile p;
  p.sensor_duty = {{"lidar", 1.0}};
  EXPECT_THROW(power_mw(p), ConfigError);
  p.sensor_duty = {{"eye", 1.5}};
  EXPECT_THROW(power_mw(p), ConfigError);
  p.sensor_duty = {};
  p.interval_s = 0.0;
  EXPECT_THROW(power_mw(p), ConfigError);
}

TEST(PowerMw, FullScaleStudentInBand) {
  const auto p = power_mw(profile_for(load_config("student_full.json"), {{"eye", 1.0}}, 8.0));
  EXPECT_GE(p.total_mw(), 8.5);
  EXPECT_LE(p.total_mw(), 10.5);
}

TEST(PowerReport, RatiosFromTableValues) {
  ReportEntry ts{"timesformer", {}, 60.0};
  ts.power.sensor_mw = 697.5;
  ReportEntry st{"student", {}, 70.0};
  st.power.sensor_mw = 9.5;
  const auto r = power_report({ts, st});
  EXPECT_NEAR(r.ratios.at("timesformer").at("student"), 697.5 / 9.5, 1e-12);
  EXPECT_NEAR(r.ratios.at("timesformer").at("student"), 73.4, 0.05);
  EXPECT_EQ(r.rows.front().name, "student");
}

TEST(PowerReport, WritesArtifacts) {
  oracle::TempDir dir("power");
  ReportEntry a{"a", {}, 50.0};
  a.power.compute_mw = 2.0;
  ReportEntry b{"b", {}, std::nullopt};
  b.power.compute_mw = 4.0;
  write_power_report(power_report({a, b}), dir.path() / "report.json");
  EXPECT_TRUE(std::filesystem::exists(dir.path() / "report.csv"));
  EXPECT_TRUE(std::filesystem::exists(dir.path() / "report.png"));
  std::ifstream in(dir.path() / "report.json");
  const auto j = nlohmann::json::parse(in);
  EXPECT_DOUBLE_EQ(j["power_ratios"]["b"]["a"].get<double>(), 2.0);
  EXPECT_TRUE(j["models"][1]["accuracy"].is_null());
}
