#include <gtest/gtest.h>

#include "bottlenet/bottleneck.hpp"
#include "bottlenet/cost.hpp"
#include "bottlenet/models.hpp"

using namespace bottlenet;

namespace {

const std::string kProfile = std::string(BOTTLENET_CONFIG_DIR) + "/reference_profile.json";

WirelessProfile net(double t_u, double alpha = 0.0, double beta = 0.0) { return {"test", t_u, alpha, beta}; }

/// t_mobile(j) = j, p = 1000, t_cloud(j) = M - j, all at K = 1.
DeviceProfile ramp_device(std::size_t m, LoadModel model = LoadModel::table) {
  DeviceProfile d;
  d.load_model = model;
  for (std::size_t j = 1; j <= m; ++j) {
    PartitionCosts p;
    p.j = j;
    p.label = "P" + std::to_string(j);
    p.t_mobile_ms = {{1.0, static_cast<double>(j)}};
    p.p_mobile_mw = {{1.0, 1000.0}};
    p.t_cloud_ms = {{1.0, static_cast<double>(m - j)}};
    p.d_bytes = 100 * j;
    d.partitions.push_back(p);
  }
  return d;
}

/// Clock that returns scripted timestamps; each timed call consumes two.
Clock scripted(std::vector<double> durations) {
  auto state = std::make_shared<std::pair<std::vector<double>, std::size_t>>(std::move(durations), 0);
  auto now = std::make_shared<double>(0.0);
  auto start = std::make_shared<bool>(true);
  return [state, now, start] {
    if (!*start) *now += state->first.at(state->second++);
    *start = !*start;
    return *now;
  };
}

}  // namespace

TEST(Uplink, ReferenceExamples) {
  const auto doc = load_profile(kProfile);
  const auto& g3 = doc.network("3G");
  EXPECT_NEAR(uplink_time_ms(316, g3), 2.298, 0.0005);
  EXPECT_EQ(uplink_time_ms(316, g3), 316.0 * 8.0 / (1.1 * 1e6) * 1e3);
  EXPECT_EQ(uplink_time_ms(0, g3), 0.0);
  const double cloud_only = uplink_time_ms(26766, g3);
  EXPECT_NEAR(cloud_only, 194.7, 0.05);
  EXPECT_LE(cloud_only, 196.2);
}

TEST(Uplink, LinearInBytesInverseInThroughput) {
  Rng rng(1);
  for (int i = 0; i < 200; ++i) {
    const double d = std::floor(rng.uniform(0, 1e6));
    const double t = rng.uniform(0.1, 100);
    EXPECT_NEAR(uplink_time_ms(2 * d, net(t)), 2 * uplink_time_ms(d, net(t)), 1e-12 * uplink_time_ms(d, net(t)) + 1e-15);
    EXPECT_NEAR(uplink_time_ms(d, net(2 * t)), uplink_time_ms(d, net(t)) / 2, 1e-12 * uplink_time_ms(d, net(t)) + 1e-15);
  }
}

TEST(UplinkPower, TableRows) {
  const auto doc = load_profile(kProfile);
  EXPECT_DOUBLE_EQ(uplink_power_mw(doc.network("3G")), 1773.758);
  EXPECT_DOUBLE_EQ(uplink_power_mw(doc.network("4G")), 438.39 * 5.85 + 1288.04);
  EXPECT_DOUBLE_EQ(uplink_power_mw(doc.network("Wi-Fi")), 5479.1096);
  EXPECT_EQ(uplink_power_mw(net(3.0, 0.0, 42.5)), 42.5);
}

TEST(Wireless, Validation) {
  EXPECT_THROW(net(0.0).validate(), ProfileError);
  EXPECT_THROW(net(1.0, -1.0).validate(), ProfileError);
  EXPECT_THROW(net(1.0, 0.0, -1.0).validate(), ProfileError);
  EXPECT_NO_THROW(net(1.0).validate());
}

TEST(Profile, NetworkNamesAreForgiving) {
  const auto doc = load_profile(kProfile);
  EXPECT_EQ(doc.network("wifi").t_u_mbps, 18.88);
  EXPECT_EQ(doc.network("WI_FI").t_u_mbps, 18.88);
  EXPECT_EQ(doc.network("4g").t_u_mbps, 5.85);
  EXPECT_THROW(doc.network("5G"), ProfileError);
}

TEST(Profile, BundledProfileIsValid) {
  const auto doc = load_profile(kProfile);
  EXPECT_NO_THROW(doc.device.validate());
  EXPECT_EQ(doc.device.partitions.size(), 16u);
  EXPECT_EQ(doc.device.partition(1).d_bytes, 316u);
  EXPECT_EQ(doc.device.partition(16).d_bytes, 53u);
  ASSERT_TRUE(doc.device.cloud_only.has_value());
  EXPECT_EQ(doc.device.cloud_only->d_bytes, 26766u);
}

TEST(Profile, JsonRoundTrip) {
  const auto doc = load_profile(kProfile);
  const auto again = profile_from_json(profile_to_json(doc));
  ASSERT_EQ(again.device.partitions.size(), doc.device.partitions.size());
  for (std::size_t i = 0; i < doc.device.partitions.size(); ++i) {
    const auto& a = doc.device.partitions[i];
    const auto& b = again.device.partitions[i];
    EXPECT_EQ(a.j, b.j);
    EXPECT_EQ(a.label, b.label);
    EXPECT_EQ(a.t_mobile_ms, b.t_mobile_ms);
    EXPECT_EQ(a.t_cloud_ms, b.t_cloud_ms);
    EXPECT_EQ(a.d_bytes, b.d_bytes);
  }
  EXPECT_EQ(again.networks.size(), doc.networks.size());
}

TEST(Profile, RejectsMalformedInput) {
  EXPECT_THROW(profile_from_json(nlohmann::json::parse(R"({"device": 3})")), ProfileError);
  EXPECT_THROW(load_profile("/nonexistent/profile.json"), std::runtime_error);
  auto j = nlohmann::json::parse(R"({
    "device": {"partitions": [{"j": 1, "t_mobile_ms": {"1": 2, "2": 1}, "p_mobile_mw": 1, "t_cloud_ms": 1}]},
    "networks": [{"name": "x", "t_u_mbps": 1, "alpha_u": 0, "beta": 0}]})");
  EXPECT_THROW(profile_from_json(j).device.validate(), ProfileError);  // decreasing in K
  j = nlohmann::json::parse(R"({
    "device": {"partitions": [{"j": 1, "t_mobile_ms": {"one": 2}, "p_mobile_mw": 1, "t_cloud_ms": 1}]},
    "networks": []})");
  EXPECT_THROW(profile_from_json(j), ProfileError);
}

TEST(Device, MobileTimeMustNotDecreaseWithDepth) {
  DeviceProfile d = ramp_device(3);
  d.partitions[2].t_mobile_ms[1.0] = 0.5;
  EXPECT_THROW(d.validate(), ProfileError);
  d = ramp_device(3);
  d.partitions[1].p_mobile_mw[1.0] = -1;
  EXPECT_THROW(d.validate(), ProfileError);
}

TEST(Simulated, TablePassthrough) {
  const DeviceProfile d = ramp_device(5);
  const auto cp = measure_simulated(d, net(2.0, 10.0, 5.0), 1.0, 1.0);
  ASSERT_EQ(cp.rows.size(), 5u);
  for (const auto& r : cp.rows) {
    EXPECT_EQ(r.tm_ms, static_cast<double>(r.j));
    EXPECT_EQ(r.pm_mw, 1000.0);
    EXPECT_EQ(r.tc_ms, static_cast<double>(5 - r.j));
    EXPECT_EQ(r.d_bytes, 100 * r.j);
    EXPECT_EQ(r.tu_ms, uplink_time_ms(static_cast<double>(100 * r.j), net(2.0)));
    EXPECT_EQ(r.pu_mw, 25.0);
    EXPECT_EQ(r.latency_ms(), r.tm_ms + r.tu_ms + r.tc_ms);
    EXPECT_EQ(r.energy_uj(), r.tm_ms * r.pm_mw + r.tu_ms * r.pu_mw);
    EXPECT_GE(r.tu_ms, 0.0);
  }
}

TEST(Simulated, SizeOverridesAndMissingSizes) {
  DeviceProfile d = ramp_device(4);
  d.partitions[2].d_bytes.reset();
  try {
    measure_simulated(d, net(1.0), 1.0, 1.0);
    FAIL() << "expected ProfileError";
  } catch (const ProfileError& e) {
    EXPECT_NE(std::string(e.what()).find("j = 3"), std::string::npos) << e.what();
  }
  const auto cp = measure_simulated(d, net(1.0), 1.0, 1.0, {{3, 77}});
  EXPECT_EQ(cp.rows[2].d_bytes, 77u);
  const auto sub = measure_simulated(d, net(1.0), 1.0, 1.0, {}, std::vector<std::size_t>{1, 2});
  EXPECT_EQ(sub.rows.size(), 2u);
  EXPECT_THROW(measure_simulated(d, net(1.0), 1.0, 1.0, {}, std::vector<std::size_t>{1, 9}), ProfileError);
}

TEST(Simulated, LinearLoadScalesTimesOnly) {
  const DeviceProfile d = ramp_device(4, LoadModel::linear);
  const auto base = measure_simulated(d, net(1.0), 1.0, 1.0);
  const auto loaded = measure_simulated(d, net(1.0), 2.0, 3.5);
  for (std::size_t i = 0; i < base.rows.size(); ++i) {
    EXPECT_EQ(loaded.rows[i].tm_ms, 2.0 * base.rows[i].tm_ms);
    EXPECT_EQ(loaded.rows[i].tc_ms, 3.5 * base.rows[i].tc_ms);
    EXPECT_EQ(loaded.rows[i].pm_mw, base.rows[i].pm_mw);
    EXPECT_EQ(loaded.rows[i].tu_ms, base.rows[i].tu_ms);
  }
  EXPECT_THROW(measure_simulated(d, net(1.0), 0.5, 1.0), ProfileError);
}

TEST(Simulated, TableLoadNeedsDeclaredLevel) {
  DeviceProfile d = ramp_device(2);
  for (auto& p : d.partitions) p.t_cloud_ms[4.0] = p.t_cloud_ms[1.0] * 3;
  EXPECT_EQ(measure_simulated(d, net(1.0), 1.0, 4.0).rows[0].tc_ms, 3.0);
  EXPECT_THROW(measure_simulated(d, net(1.0), 1.0, 2.0), ProfileError);
}

TEST(Simulated, Baselines) {
  const auto doc = load_profile(kProfile);
  const auto cp = measure_simulated(doc.device, doc.network("3G"), 1.0, 1.0);
  ASSERT_TRUE(cp.mobile_only && cp.cloud_only);
  EXPECT_EQ(cp.mobile_only->tu_ms, 0.0);
  EXPECT_EQ(cp.cloud_only->d_bytes, 26766u);
  EXPECT_EQ(cp.cloud_only->tm_ms, 0.0);
}

TEST(Median, OrderStatistics) {
  EXPECT_EQ(median({3.0, 1.0, 2.0}), 2.0);
  EXPECT_EQ(median({4.0, 1.0, 3.0, 2.0}), 2.5);
  EXPECT_THROW(median({}), std::invalid_argument);
  EXPECT_EQ(median_size({5, 1, 9, 3}), 3u);
  EXPECT_EQ(median_size({7}), 7u);
}

TEST(Median, InjectedTimerNoise) {
  int calls = 0;
  const auto t = time_median([&] { ++calls; }, 2, 5, scripted({9.0, 1.0, 5.0, 3.0, 400.0}));
  EXPECT_EQ(calls, 7);
  EXPECT_EQ(t.samples_ms, (std::vector<double>{9.0, 1.0, 5.0, 3.0, 400.0}));
  EXPECT_EQ(t.median_ms, 5.0);
  EXPECT_THROW(time_median([] {}, 0, 0, steady_clock_ms()), std::invalid_argument);
}

TEST(Bench, MissingModelsListed) {
  const Dataset d = generate_dataset(GeneratorConfig{DatasetKind::shapes, 8, 12, 12, 1, 4, 1});
  NetworkGraph base = desk_net(d.sample_shape(), DeskNetConfig{}, 1);
  BottleneckConfig c;
  c.spatial = 2;
  c.channels = 1;
  NetworkGraph g = insert_bottleneck(base, c);
  std::map<std::size_t, NetworkGraph*> models{{1, &g}};
  try {
    measure_bench(models, {1, 2, 4}, d, net(1.0), 1.0, 1.0);
    FAIL() << "expected ProfileError";
  } catch (const ProfileError& e) {
    EXPECT_NE(std::string(e.what()).find("j = 2, 4"), std::string::npos) << e.what();
  }
}

TEST(Bench, TimesSlicesAndMeasuresSize) {
  const Dataset d = generate_dataset(GeneratorConfig{DatasetKind::shapes, 8, 12, 12, 1, 4, 1});
  NetworkGraph base = desk_net(d.sample_shape(), DeskNetConfig{}, 1);
  BottleneckConfig c;
  c.spatial = 2;
  c.channels = 1;
  NetworkGraph g = insert_bottleneck(base, c);
  BenchOptions opts;
  opts.repetitions = 3;
  opts.warmup = 1;
  opts.calibration = 5;
  opts.clock = scripted({2, 4, 3, 7, 8, 6});
  const auto cp = measure_bench({{1, &g}}, {1}, d, net(1.0, 0.0, 100.0), 2.0, 1.0, opts);
  ASSERT_EQ(cp.rows.size(), 1u);
  EXPECT_EQ(cp.rows[0].tm_ms, 3.0);
  EXPECT_EQ(cp.rows[0].tc_ms, 7.0);
  EXPECT_EQ(cp.rows[0].d_bytes, median_size(encoded_sizes(g, d, 5)));
  EXPECT_EQ(cp.rows[0].pu_mw, 100.0);
}
