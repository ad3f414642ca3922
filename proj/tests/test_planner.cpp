#include <gtest/gtest.h>

#include <limits>

#include "bottlenet/models.hpp"
#include "bottlenet/planner.hpp"

using namespace bottlenet;

namespace {

const std::string kProfile = std::string(BOTTLENET_CONFIG_DIR) + "/reference_profile.json";

CostRow row(std::size_t j, double tm, double pm, double tc, double tu, double pu, std::size_t d = 100) {
  CostRow r;
  r.j = j;
  r.label = "j" + std::to_string(j);
  r.tm_ms = tm;
  r.pm_mw = pm;
  r.tc_ms = tc;
  r.tu_ms = tu;
  r.pu_mw = pu;
  r.d_bytes = d;
  return r;
}

CostProfile random_profile(Rng& rng, std::size_t m) {
  CostProfile cp;
  cp.network = {"n", 1.0, 0.0, 1000.0};
  for (std::size_t j = 1; j <= m; ++j) {
    cp.rows.push_back(row(j, rng.uniform(0, 50), rng.uniform(100, 2000), rng.uniform(0, 50), rng.uniform(0, 50),
                          rng.uniform(100, 2000), rng.below(1000)));
  }
  return cp;
}

std::size_t rank_of(const PlanResult& p, std::size_t j) {
  double obj = 0;
  for (const auto& c : p.candidates) {
    if (c.cost.j == j) obj = c.objective;
  }
  std::size_t better = 0;
  for (const auto& c : p.candidates) better += c.objective < obj;
  return better;
}

Dataset tiny_shapes(std::size_t count, std::uint64_t seed) {
  GeneratorConfig g;
  g.count = count;
  g.height = 12;
  g.width = 12;
  g.seed = seed;
  return generate_dataset(g);
}

}  // namespace

TEST(Select, ReferenceDataPicksFirstBlockEverywhere) {
  const auto doc = load_profile(kProfile);
  for (const char* name : {"3G", "4G", "Wi-Fi"}) {
    const auto& net = doc.network(name);
    const auto cost = measure_simulated(doc.device, net, 1.0, 1.0);
    for (const auto& r : cost.rows) {
      const double expected = static_cast<double>(r.d_bytes) * 8.0 / net.t_u_mbps / 1e3;
      EXPECT_NEAR(r.tu_ms, expected, 1e-3 * expected) << name << " j=" << r.j;
    }
    for (Target t : {Target::latency, Target::energy}) {
      const auto plan = select(cost, t);
      EXPECT_EQ(plan.chosen_j, 1u) << name << " " << to_string(t);
      EXPECT_EQ(plan.chosen().cost.label, "RB1");
    }
  }
}

TEST(Select, HandComputedObjectives) {
  CostProfile cp;
  cp.rows = {row(1, 2.0, 1000.0, 3.0, 4.0, 500.0), row(2, 1.0, 800.0, 1.0, 10.0, 500.0)};
  const auto lat = select(cp, Target::latency);
  EXPECT_EQ(lat.candidates[0].objective, 9.0);
  EXPECT_EQ(lat.candidates[1].objective, 12.0);
  EXPECT_EQ(lat.chosen_j, 1u);
  const auto en = select(cp, Target::energy);
  EXPECT_EQ(en.candidates[0].objective, 2.0 * 1000.0 + 4.0 * 500.0);
  EXPECT_EQ(en.candidates[1].objective, 800.0 + 5000.0);
  EXPECT_EQ(en.chosen_j, 1u);
  EXPECT_EQ(en.candidates[0].cost.energy_mj(), 4.0);
}

TEST(Select, AllEqualGoesToFirst) {
  CostProfile cp;
  for (std::size_t j : {3, 1, 2}) cp.rows.push_back(row(j, 1, 1, 1, 1, 1));
  EXPECT_EQ(select(cp, Target::latency).chosen_j, 1u);
  EXPECT_EQ(select(cp, Target::energy).chosen_j, 1u);
}

TEST(Select, RejectsEmptyAndDuplicates) {
  CostProfile cp;
  EXPECT_THROW(select(cp, Target::latency), PlanError);
  cp.rows = {row(1, 1, 1, 1, 1, 1), row(1, 2, 1, 1, 1, 1)};
  EXPECT_THROW(select(cp, Target::latency), PlanError);
}

TEST(Select, ScaleInvariance) {
  Rng rng(1);
  for (int i = 0; i < 300; ++i) {
    CostProfile cp = random_profile(rng, 1 + rng.below(16));
    CostProfile scaled = cp;
    for (auto& r : scaled.rows) {
      r.tm_ms *= 7;
      r.tc_ms *= 7;
      r.tu_ms *= 7;
    }
    for (Target t : {Target::latency, Target::energy}) EXPECT_EQ(select(cp, t).chosen_j, select(scaled, t).chosen_j);
  }
  // Exact ties survive rescaling as well.
  CostProfile tie;
  tie.rows = {row(1, 0.1, 3, 0.2, 0.0, 1), row(2, 0.3, 3, 0.0, 0.0, 1)};
  CostProfile tie7 = tie;
  for (auto& r : tie7.rows) {
    r.tm_ms *= 7;
    r.tc_ms *= 7;
  }
  EXPECT_EQ(select(tie, Target::latency).chosen_j, 1u);
  EXPECT_EQ(select(tie7, Target::latency).chosen_j, 1u);
}

TEST(Select, SmallerPayloadNeverHurtsRank) {
  const auto doc = load_profile(kProfile);
  Rng rng(2);
  for (int i = 0; i < 200; ++i) {
    const auto& net = doc.networks[rng.below(doc.networks.size())];
    const std::size_t j = 1 + rng.below(16);
    const std::size_t d = *doc.device.partition(j).d_bytes;
    const std::size_t smaller = rng.below(d + 1);
    for (Target t : {Target::latency, Target::energy}) {
      const auto before = select(measure_simulated(doc.device, net, 1.0, 1.0), t);
      const auto after = select(measure_simulated(doc.device, net, 1.0, 1.0, {{j, smaller}}), t);
      EXPECT_LE(rank_of(after, j), rank_of(before, j));
      if (before.chosen_j == j) {
        EXPECT_EQ(after.chosen_j, j);
      }
    }
  }
}

TEST(Replan, CloudLoadPushesWorkToMobile) {
  const auto doc = load_profile(kProfile);
  const auto& net = doc.network("4G");
  const auto base = select(measure_simulated(doc.device, net, 1.0, 1.0), Target::latency);
  const auto same = replan(base, doc.device, net, 1.0, 1.0);
  EXPECT_EQ(plan_to_json(same), plan_to_json(base));
  const auto loaded = replan(base, doc.device, net, 1.0, 1e9);
  EXPECT_EQ(loaded.chosen_j, 16u);
  EXPECT_GE(loaded.chosen_j, base.chosen_j);
  EXPECT_EQ(loaded.k_cloud, 1e9);
}

TEST(Replan, InfiniteBandwidthLeavesComputeOnly) {
  const auto doc = load_profile(kProfile);
  WirelessProfile fast = doc.network("Wi-Fi");
  fast.t_u_mbps = 1e15;
  const auto base = select(measure_simulated(doc.device, doc.network("3G"), 1.0, 1.0), Target::latency);
  const auto plan = replan(base, doc.device, fast, 1.0, 1.0);
  std::size_t best = 0;
  double best_obj = std::numeric_limits<double>::infinity();
  for (const auto& p : doc.device.partitions) {
    const double obj = doc.device.t_mobile(p, 1.0) + doc.device.t_cloud(p, 1.0);
    if (obj < best_obj) {
      best_obj = obj;
      best = p.j;
    }
  }
  EXPECT_EQ(plan.chosen_j, best);
  for (const auto& c : plan.candidates) EXPECT_LT(c.cost.tu_ms, 1e-9);
}

TEST(Replan, ChosenPartitionMonotoneInCloudLoad) {
  const auto doc = load_profile(kProfile);
  for (const auto& net : doc.networks) {
    for (Target t : {Target::latency, Target::energy}) {
      auto plan = select(measure_simulated(doc.device, net, 1.0, 1.0), t);
      std::size_t prev = plan.chosen_j;
      for (int k = 1; k <= 100; ++k) {
        plan = replan(plan, doc.device, net, 1.0, k);
        EXPECT_GE(plan.chosen_j, prev) << net.name << " K=" << k;
        prev = plan.chosen_j;
      }
    }
  }
}

TEST(Sweep, BestEntryTieRules) {
  const std::vector<SweepEntry> table{{1, 1, 1, 20, 0.80, 120}, {1, 1, 2, 20, 0.90, 100}, {1, 2, 1, 20, 0.95, 100},
                                      {1, 2, 2, 20, 0.50, 60},  {2, 1, 1, 20, 0.99, 10}};
  auto b = best_entry(table, 1, 0.7);
  ASSERT_TRUE(b);
  EXPECT_EQ(b->s, 2u);
  EXPECT_EQ(b->c_prime, 1u);
  b = best_entry(table, 1, -std::numeric_limits<double>::infinity());
  EXPECT_EQ(b->d_bytes, 60u);
  EXPECT_FALSE(best_entry(table, 1, 0.99));
  EXPECT_FALSE(best_entry(table, 3, 0.0));
  // Enumeration oracle: no passing entry at the location beats the kept one.
  Rng rng(3);
  for (int trial = 0; trial < 200; ++trial) {
    std::vector<SweepEntry> t;
    for (int i = 0; i < 12; ++i) t.push_back({1, 1 + rng.below(3), 1 + rng.below(4), 20, rng.below(5) / 4.0, 10 + rng.below(4)});
    const double floor = rng.below(5) / 4.0;
    const auto kept = best_entry(t, 1, floor);
    for (const auto& e : t) {
      if (e.accuracy < floor) continue;
      ASSERT_TRUE(kept);
      EXPECT_TRUE(kept->d_bytes < e.d_bytes || (kept->d_bytes == e.d_bytes && kept->accuracy >= e.accuracy));
    }
  }
}

TEST(Sweep, BoundsValidation) {
  SweepBounds b;
  b.s_max = 0;
  EXPECT_THROW(b.validate(), std::invalid_argument);
  b = SweepBounds{};
  b.c_max = 0;
  EXPECT_THROW(b.validate(), std::invalid_argument);
  b = SweepBounds{};
  b.quality = 0;
  EXPECT_THROW(b.validate(), std::invalid_argument);
}

class SmallSweep : public ::testing::Test {
 protected:
  static void SetUpTestSuite() {
    const Dataset d = tiny_shapes(80, 2);
    auto s = split(d);
    train_ = new Dataset(s.train);
    test_ = new Dataset(s.test);
    DeskNetConfig net;
    net.widths = {4, 4, 4, 4, 4, 4};
    base_ = new NetworkGraph(desk_net(d.sample_shape(), net, 1));
    SweepBounds b;
    b.s_max = 2;
    b.c_max = 2;
    SweepOptions o;
    o.train.epochs = 1;
    o.train.batch_size = 16;
    o.calibration = 8;
    result_ = new SweepResult(train_sweep(*base_, *train_, *test_, b, -std::numeric_limits<double>::infinity(), 5, o));
  }
  static void TearDownTestSuite() {
    delete result_;
    delete base_;
    delete train_;
    delete test_;
  }
  static inline Dataset* train_ = nullptr;
  static inline Dataset* test_ = nullptr;
  static inline NetworkGraph* base_ = nullptr;
  static inline SweepResult* result_ = nullptr;
};

TEST_F(SmallSweep, UnconstrainedFloorKeepsSmallestPayload) {
  EXPECT_EQ(result_->table.size(), 4u * 2 * 2);
  ASSERT_EQ(result_->locations.size(), 4u);
  EXPECT_TRUE(result_->infeasible.empty());
  for (const auto& loc : result_->locations) {
    for (const auto& e : result_->table) {
      if (e.j == loc.j) {
        EXPECT_LE(loc.d_bytes, e.d_bytes);
      }
    }
    if (loc.j == 1) {
      // Only on the widest map does the element count dominate the codec's side information.
      EXPECT_EQ(loc.config.channels, 1u);
      EXPECT_EQ(loc.config.spatial, 2u);
    }
    ASSERT_TRUE(result_->models.count(loc.j));
    EXPECT_EQ(result_->models.at(loc.j).bottleneck()->config.location, loc.j - 1);
  }
}

TEST_F(SmallSweep, UnreachableFloorFails) {
  SweepBounds b;
  b.s_max = 1;
  b.c_max = 1;
  SweepOptions o;
  o.train.epochs = 1;
  o.calibration = 4;
  try {
    train_sweep(*base_, *train_, *test_, b, 1.5, 5, o);
    FAIL() << "expected PlanError";
  } catch (const PlanError& e) {
    EXPECT_NE(std::string(e.what()).find("epsilon"), std::string::npos);
  }
}

TEST_F(SmallSweep, SeededRetrainingIsIdentical) {
  // Re-training one (j, s, c') from its derived seed reproduces the stored model.
  const auto& loc = result_->locations.front();
  TrainConfig tc;
  tc.epochs = 1;
  tc.batch_size = 16;
  tc.seed = derive_seed(5, {loc.j, loc.config.spatial, loc.config.channels});
  BottleneckModel m = train_bottleneck_model(*base_, loc.config, *train_, *test_, TrainingMode::aware, tc);
  EXPECT_EQ(m.accuracy, loc.accuracy);
  auto pa = m.graph.parameters();
  auto pb = const_cast<NetworkGraph&>(result_->models.at(loc.j)).parameters();
  ASSERT_EQ(pa.size(), pb.size());
  for (std::size_t i = 0; i < pa.size(); ++i) EXPECT_EQ(*pa[i], *pb[i]);
}

TEST_F(SmallSweep, JsonRoundTripAndPlanFromSweep) {
  const auto back = sweep_from_json(sweep_to_json(*result_));
  EXPECT_EQ(back.table.size(), result_->table.size());
  ASSERT_EQ(back.locations.size(), result_->locations.size());
  for (std::size_t i = 0; i < back.locations.size(); ++i) {
    EXPECT_EQ(back.locations[i].config, result_->locations[i].config);
    EXPECT_EQ(back.locations[i].d_bytes, result_->locations[i].d_bytes);
  }

  const auto doc = load_profile(kProfile);
  std::map<std::size_t, std::size_t> sizes;
  std::vector<std::size_t> only;
  for (const auto& l : result_->locations) {
    sizes[l.j] = l.d_bytes;
    only.push_back(l.j);
  }
  const auto cost = measure_simulated(doc.device, doc.network("3G"), 1.0, 1.0, sizes, only);
  const auto plan = select(cost, Target::energy, locations_by_j(result_->locations));
  ASSERT_TRUE(plan.chosen().location);
  EXPECT_EQ(plan.chosen().location->d_bytes, plan.chosen().cost.d_bytes);
  const auto again = plan_from_json(plan_to_json(plan));
  EXPECT_EQ(plan_to_json(again), plan_to_json(plan));
}

TEST(Plan, JsonRejectsEmptyCandidates) {
  auto j = plan_to_json(select(CostProfile{{"n", 1, 0, 0}, 1, 1, {row(1, 1, 1, 1, 1, 1)}, {}, {}}, Target::latency));
  j["candidates"] = nlohmann::json::array();
  EXPECT_THROW(plan_from_json(j), PlanError);
}

TEST(Report, MirrorsTableLayout) {
  const auto doc = load_profile(kProfile);
  std::vector<PlanResult> plans;
  for (const auto& net : doc.networks) plans.push_back(select(measure_simulated(doc.device, net, 1.0, 1.0), Target::latency));
  const std::string text = render_report(plans);
  for (const char* needle : {"Layer", "RB1", "RB16", "Mobile-only", "Cloud-only", "Offloaded Data (B)", "Latency 3G (ms)",
                             "Energy Wi-Fi (mJ)", "316", "26766"}) {
    EXPECT_NE(text.find(needle), std::string::npos) << needle;
  }
  EXPECT_NE(text.find('*'), std::string::npos);
  const std::string csv = render_csv(plans);
  EXPECT_NE(csv.find("network"), std::string::npos);
  EXPECT_EQ(std::count(csv.begin(), csv.end(), '\n'), 1 + 3 * 18);
}
