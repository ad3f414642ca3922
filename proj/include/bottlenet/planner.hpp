#pragma once

// Partition planning: per-location bottleneck sweep, then latency- or
// energy-optimal location under a cost profile.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <functional>
#include <iomanip>
#include <limits>
#include <map>
#include <optional>
#include <sstream>
#include <stdexcept>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "bottlenet/bottleneck.hpp"
#include "bottlenet/checkpoint.hpp"
#include "bottlenet/cost.hpp"

namespace bottlenet {

class PlanError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

enum class Target { latency, energy };

inline const char* to_string(Target t) { return t == Target::latency ? "latency" : "energy"; }

inline Target target_from_string(std::string_view s) {
  if (s == "latency") return Target::latency;
  if (s == "energy") return Target::energy;
  throw std::invalid_argument("target must be latency|energy, got " + std::string(s));
}

struct SweepBounds {
  std::size_t s_max = 2;
  std::size_t c_max = 8;
  unsigned quality = 20;
  unsigned bits = 8;

  void validate() const {
    if (s_max < 1) throw std::invalid_argument("sweep: S_max must be >= 1");
    if (c_max < 1) throw std::invalid_argument("sweep: C'_max must be >= 1");
    codec::CodecParams{bits, quality}.validate();
  }
};

/// One trained (location, s, c') combination.
struct SweepEntry {
  std::size_t j = 0;  // 1-based location
  std::size_t s = 1;
  std::size_t c_prime = 1;
  unsigned quality = 20;
  double accuracy = 0.0;
  std::size_t d_bytes = 0;
};

struct LocationInfo {
  std::size_t j = 0;
  BottleneckConfig config;
  double accuracy = 0.0;
  std::size_t d_bytes = 0;
};

struct SweepResult {
  double floor = 0.0;
  std::vector<SweepEntry> table;
  std::vector<LocationInfo> locations;  // feasible locations only
  std::vector<std::size_t> infeasible;
  std::map<std::size_t, NetworkGraph> models;  // by j
};

/// Among entries at location j with accuracy >= floor: the smallest D, then
/// the higher accuracy, then the earlier entry.
inline std::optional<SweepEntry> best_entry(const std::vector<SweepEntry>& table, std::size_t j, double floor) {
  std::optional<SweepEntry> best;
  for (const auto& e : table) {
    if (e.j != j || !(e.accuracy >= floor)) continue;
    if (!best || e.d_bytes < best->d_bytes || (e.d_bytes == best->d_bytes && e.accuracy > best->accuracy)) best = e;
  }
  return best;
}

struct SweepOptions {
  TrainConfig train;
  std::size_t calibration = 32;
  std::function<void(const SweepEntry&)> on_entry;
};

/// Trains every (s, c') in [1, S_max] x [1, min(C'_max, c)] at every
/// partition point of `base`, then keeps the min-size passing model per
/// location. Each training is seeded from (seed, j, s, c').
inline SweepResult train_sweep(const NetworkGraph& base, const Dataset& train_set, const Dataset& test_set,
                               const SweepBounds& bounds, double floor, std::uint64_t seed,
                               const SweepOptions& opts = {}) {
  bounds.validate();
  if (train_set.empty() || test_set.empty()) throw DataError("sweep: empty dataset");
  const Dataset calib = train_set.subset(0, std::min(opts.calibration, train_set.count()));
  SweepResult result;
  result.floor = floor;
  std::map<std::size_t, std::map<std::pair<std::size_t, std::size_t>, NetworkGraph>> trained;
  const std::size_t locations = base.partition_points().size();
  for (std::size_t loc = 0; loc < locations; ++loc) {
    const std::size_t j = loc + 1;
    const Shape f = base.shape_after(base.partition_points()[loc]);
    for (std::size_t s = 1; s <= bounds.s_max; ++s) {
      for (std::size_t c = 1; c <= std::min(bounds.c_max, f.c); ++c) {
        BottleneckConfig cfg;
        cfg.location = loc;
        cfg.spatial = s;
        cfg.channels = c;
        cfg.bits = bounds.bits;
        cfg.quality = bounds.quality;
        TrainConfig tc = opts.train;
        tc.seed = derive_seed(seed, {j, s, c});
        BottleneckModel m = train_bottleneck_model(base, cfg, train_set, test_set, TrainingMode::aware, tc);
        SweepEntry e{j, s, c, bounds.quality, m.accuracy, median_size(encoded_sizes(m.graph, calib, calib.count()))};
        result.table.push_back(e);
        if (opts.on_entry) opts.on_entry(e);
        trained[j].emplace(std::make_pair(s, c), std::move(m.graph));
      }
    }
    if (auto best = best_entry(result.table, j, floor)) {
      NetworkGraph& model = trained[j].at({best->s, best->c_prime});
      result.locations.push_back({j, model.bottleneck()->config, best->accuracy, best->d_bytes});
      result.models.emplace(j, std::move(model));
    } else {
      result.infeasible.push_back(j);
    }
    trained.erase(j);
  }
  if (result.locations.empty()) {
    std::ostringstream os;
    os << "every location is infeasible at accuracy floor " << floor
       << "; raise epsilon or widen the sweep bounds (S_max, C'_max)";
    throw PlanError(os.str());
  }
  return result;
}

inline nlohmann::json sweep_to_json(const SweepResult& r) {
  nlohmann::json j;
  j["floor"] = r.floor;
  j["table"] = nlohmann::json::array();
  for (const auto& e : r.table) {
    j["table"].push_back({{"j", e.j},
                          {"s", e.s},
                          {"c_prime", e.c_prime},
                          {"quality", e.quality},
                          {"accuracy", e.accuracy},
                          {"d_bytes", e.d_bytes},
                          {"passes", e.accuracy >= r.floor}});
  }
  j["locations"] = nlohmann::json::array();
  for (const auto& l : r.locations) {
    j["locations"].push_back({{"j", l.j},
                              {"config", bottleneck_config_to_json(l.config)},
                              {"accuracy", l.accuracy},
                              {"d_bytes", l.d_bytes},
                              {"checkpoint", "model_j" + std::to_string(l.j) + ".bnmd"}});
  }
  j["infeasible"] = r.infeasible;
  return j;
}

/// Table and feasible locations (models are loaded separately).
inline SweepResult sweep_from_json(const nlohmann::json& j) {
  SweepResult r;
  r.floor = j.at("floor").get<double>();
  for (const auto& e : j.at("table")) {
    r.table.push_back({e.at("j").get<std::size_t>(), e.at("s").get<std::size_t>(), e.at("c_prime").get<std::size_t>(),
                       e.at("quality").get<unsigned>(), e.at("accuracy").get<double>(), e.at("d_bytes").get<std::size_t>()});
  }
  for (const auto& l : j.at("locations")) {
    r.locations.push_back({l.at("j").get<std::size_t>(), bottleneck_config_from_json(l.at("config")),
                           l.at("accuracy").get<double>(), l.at("d_bytes").get<std::size_t>()});
  }
  r.infeasible = j.value("infeasible", std::vector<std::size_t>{});
  return r;
}

struct Candidate {
  CostRow cost;
  double objective = 0.0;
  std::optional<LocationInfo> location;
};

struct PlanResult {
  Target target = Target::latency;
  WirelessProfile network;
  double k_mobile = 1.0;
  double k_cloud = 1.0;
  std::size_t chosen_j = 0;
  double objective = 0.0;
  std::vector<Candidate> candidates;  // ascending j
  std::optional<CostRow> mobile_only;
  std::optional<CostRow> cloud_only;

  const Candidate& chosen() const {
    for (const auto& c : candidates) {
      if (c.cost.j == chosen_j) return c;
    }
    throw PlanError("plan has no candidate for its chosen partition");
  }
};

inline double objective_of(const CostRow& r, Target t) { return t == Target::latency ? r.latency_ms() : r.energy_uj(); }

namespace detail {

// Objectives within a relative 1e-12 compare as tied, so common rescaling of
// all terms cannot flip a rounding-level tie.
inline bool strictly_less(double a, double b) {
  return a < b && (b - a) > 1e-12 * std::max(std::fabs(a), std::fabs(b));
}

}  // namespace detail

/// argmin of the target objective over the profile's partitions. Ties go to
/// the smaller j, then the smaller D. Sentinels are reported, never chosen.
inline PlanResult select(const CostProfile& cost, Target target,
                         const std::map<std::size_t, LocationInfo>& locations = {}) {
  if (cost.rows.empty()) throw PlanError("select: no feasible partition to choose from");
  PlanResult plan;
  plan.target = target;
  plan.network = cost.network;
  plan.k_mobile = cost.k_mobile;
  plan.k_cloud = cost.k_cloud;
  plan.mobile_only = cost.mobile_only;
  plan.cloud_only = cost.cloud_only;
  for (const auto& row : cost.rows) {
    Candidate c{row, objective_of(row, target), std::nullopt};
    if (auto it = locations.find(row.j); it != locations.end()) c.location = it->second;
    plan.candidates.push_back(std::move(c));
  }
  std::sort(plan.candidates.begin(), plan.candidates.end(), [](const auto& a, const auto& b) { return a.cost.j < b.cost.j; });
  for (std::size_t i = 1; i < plan.candidates.size(); ++i) {
    if (plan.candidates[i].cost.j == plan.candidates[i - 1].cost.j) {
      throw PlanError("select: partition j = " + std::to_string(plan.candidates[i].cost.j) + " listed twice");
    }
  }
  const Candidate* best = nullptr;
  for (const auto& c : plan.candidates) {
    // Candidates are unique per j and visited in ascending j, so a tie keeps
    // the earlier one.
    if (!best || detail::strictly_less(c.objective, best->objective)) best = &c;
  }
  plan.chosen_j = best->cost.j;
  plan.objective = best->objective;
  return plan;
}

inline std::map<std::size_t, LocationInfo> locations_by_j(const std::vector<LocationInfo>& v) {
  std::map<std::size_t, LocationInfo> m;
  for (const auto& l : v) m[l.j] = l;
  return m;
}

/// Profiles the stored per-location models again under new loads and network
/// and reselects; nothing is retrained.
inline PlanResult replan(const PlanResult& current, const DeviceProfile& device, const WirelessProfile& network,
                         double k_mobile, double k_cloud) {
  std::map<std::size_t, std::size_t> sizes;
  std::map<std::size_t, LocationInfo> locations;
  std::vector<std::size_t> only;
  for (const auto& c : current.candidates) {
    sizes[c.cost.j] = c.cost.d_bytes;
    only.push_back(c.cost.j);
    if (c.location) locations[c.cost.j] = *c.location;
  }
  const CostProfile cost = measure_simulated(device, network, k_mobile, k_cloud, sizes, only);
  return select(cost, current.target, locations);
}

namespace detail {

inline nlohmann::json cost_row_to_json(const CostRow& r) {
  return {{"j", r.j},
          {"label", r.label},
          {"d_bytes", r.d_bytes},
          {"tm_ms", r.tm_ms},
          {"pm_mw", r.pm_mw},
          {"tc_ms", r.tc_ms},
          {"tu_ms", r.tu_ms},
          {"pu_mw", r.pu_mw},
          {"latency_ms", r.latency_ms()},
          {"energy_mj", r.energy_mj()}};
}

inline CostRow cost_row_from_json(const nlohmann::json& j) {
  CostRow r;
  r.j = j.at("j").get<std::size_t>();
  r.label = j.value("label", std::string{});
  r.d_bytes = j.at("d_bytes").get<std::size_t>();
  r.tm_ms = j.at("tm_ms").get<double>();
  r.pm_mw = j.at("pm_mw").get<double>();
  r.tc_ms = j.at("tc_ms").get<double>();
  r.tu_ms = j.at("tu_ms").get<double>();
  r.pu_mw = j.at("pu_mw").get<double>();
  return r;
}

}  // namespace detail

inline nlohmann::json plan_to_json(const PlanResult& p) {
  nlohmann::json j;
  j["target"] = to_string(p.target);
  j["network"] = {{"name", p.network.name},
                  {"t_u_mbps", p.network.t_u_mbps},
                  {"alpha_u", p.network.alpha_u},
                  {"beta", p.network.beta}};
  j["k_mobile"] = p.k_mobile;
  j["k_cloud"] = p.k_cloud;
  j["chosen_j"] = p.chosen_j;
  j["objective"] = p.objective;
  j["candidates"] = nlohmann::json::array();
  for (const auto& c : p.candidates) {
    nlohmann::json row = detail::cost_row_to_json(c.cost);
    row["objective"] = c.objective;
    if (c.location) {
      row["accuracy"] = c.location->accuracy;
      row["config"] = bottleneck_config_to_json(c.location->config);
    }
    j["candidates"].push_back(row);
  }
  if (p.mobile_only) j["mobile_only"] = detail::cost_row_to_json(*p.mobile_only);
  if (p.cloud_only) j["cloud_only"] = detail::cost_row_to_json(*p.cloud_only);
  return j;
}

inline PlanResult plan_from_json(const nlohmann::json& j) {
  PlanResult p;
  try {
    p.target = target_from_string(j.at("target").get<std::string>());
    p.network = wireless_from_json(j.at("network"));
    p.k_mobile = j.at("k_mobile").get<double>();
    p.k_cloud = j.at("k_cloud").get<double>();
    p.chosen_j = j.at("chosen_j").get<std::size_t>();
    p.objective = j.at("objective").get<double>();
    for (const auto& row : j.at("candidates")) {
      Candidate c{detail::cost_row_from_json(row), row.at("objective").get<double>(), std::nullopt};
      if (row.contains("config")) {
        c.location = LocationInfo{c.cost.j, bottleneck_config_from_json(row["config"]), row.value("accuracy", 0.0),
                                  c.cost.d_bytes};
      }
      p.candidates.push_back(std::move(c));
    }
    if (j.contains("mobile_only")) p.mobile_only = detail::cost_row_from_json(j["mobile_only"]);
    if (j.contains("cloud_only")) p.cloud_only = detail::cost_row_from_json(j["cloud_only"]);
  } catch (const nlohmann::json::exception& e) {
    throw PlanError(std::string("plan document: ") + e.what());
  }
  if (p.candidates.empty()) throw PlanError("plan document has no candidates");
  p.chosen();
  return p;
}

namespace detail {

inline std::string fixed(double v, int prec) {
  std::ostringstream os;
  os << std::fixed << std::setprecision(prec) << v;
  return os.str();
}

}  // namespace detail

/// Fixed-width table: one column per partition (plus sentinels), rows for
/// offloaded data and per-network latency/energy. '*' marks each plan's choice.
inline std::string render_report(const std::vector<PlanResult>& plans) {
  if (plans.empty()) throw PlanError("report: no plans given");
  for (const auto& p : plans) {
    if (p.candidates.empty()) throw PlanError("report: plan has no candidates");
  }
  const PlanResult& first = plans.front();
  std::vector<std::string> header{"Layer"};
  for (const auto& c : first.candidates) header.push_back(c.cost.label);
  const bool mobile = first.mobile_only.has_value();
  const bool cloud = first.cloud_only.has_value();
  if (mobile) header.push_back("Mobile-only");
  if (cloud) header.push_back("Cloud-only");

  std::vector<std::vector<std::string>> rows{header};
  auto data_row = [&](const PlanResult& p, const std::string& title) {
    std::vector<std::string> r{title};
    for (const auto& c : p.candidates) r.push_back(std::to_string(c.cost.d_bytes));
    if (mobile) r.push_back(p.mobile_only ? std::to_string(p.mobile_only->d_bytes) : "-");
    if (cloud) r.push_back(p.cloud_only ? std::to_string(p.cloud_only->d_bytes) : "-");
    rows.push_back(std::move(r));
  };
  bool same_sizes = true;
  for (const auto& p : plans) {
    if (p.candidates.size() != first.candidates.size()) throw PlanError("report: plans cover different partitions");
    for (std::size_t i = 0; i < p.candidates.size(); ++i) {
      if (p.candidates[i].cost.j != first.candidates[i].cost.j) throw PlanError("report: plans cover different partitions");
      same_sizes = same_sizes && p.candidates[i].cost.d_bytes == first.candidates[i].cost.d_bytes;
    }
  }
  if (same_sizes) data_row(first, "Offloaded Data (B)");
  for (const auto& p : plans) {
    if (!same_sizes) data_row(p, "Offloaded Data " + p.network.name + " (B)");
    auto metric = [&](const std::string& title, auto value, Target t) {
      std::vector<std::string> r{title};
      for (const auto& c : p.candidates) {
        std::string cell = detail::fixed(value(c.cost), 1);
        if (p.target == t && c.cost.j == p.chosen_j) cell += "*";
        r.push_back(cell);
      }
      if (mobile) r.push_back(p.mobile_only ? detail::fixed(value(*p.mobile_only), 1) : "-");
      if (cloud) r.push_back(p.cloud_only ? detail::fixed(value(*p.cloud_only), 1) : "-");
      rows.push_back(std::move(r));
    };
    metric("Latency " + p.network.name + " (ms)", [](const CostRow& r) { return r.latency_ms(); }, Target::latency);
    metric("Energy " + p.network.name + " (mJ)", [](const CostRow& r) { return r.energy_mj(); }, Target::energy);
  }

  std::vector<std::size_t> width(header.size(), 0);
  for (const auto& r : rows) {
    for (std::size_t i = 0; i < r.size(); ++i) width[i] = std::max(width[i], r[i].size());
  }
  std::ostringstream os;
  for (std::size_t ri = 0; ri < rows.size(); ++ri) {
    const auto& r = rows[ri];
    os << std::left << std::setw(static_cast<int>(width[0])) << r[0];
    for (std::size_t i = 1; i < r.size(); ++i) os << "  " << std::right << std::setw(static_cast<int>(width[i])) << r[i];
    os << '\n';
    if (ri == 0) {
      std::size_t total = width[0];
      for (std::size_t i = 1; i < width.size(); ++i) total += 2 + width[i];
      os << std::string(total, '-') << '\n';
    }
  }
  os << '\n';
  for (const auto& p : plans) {
    const Candidate& c = p.chosen();
    os << "min-" << to_string(p.target) << " on " << p.network.name << " (K_mobile=" << p.k_mobile
       << ", K_cloud=" << p.k_cloud << "): " << c.cost.label << ", " << detail::fixed(c.cost.latency_ms(), 3) << " ms, "
       << detail::fixed(c.cost.energy_mj(), 3) << " mJ, " << c.cost.d_bytes << " B";
    if (c.location) {
      os << ", s=" << c.location->config.spatial << " c'=" << c.location->config.channels
         << " q=" << c.location->config.quality << " acc=" << detail::fixed(c.location->accuracy, 4);
    }
    os << '\n';
  }
  return os.str();
}

inline std::string render_csv(const std::vector<PlanResult>& plans) {
  if (plans.empty()) throw PlanError("report: no plans given");
  std::ostringstream os;
  os << std::setprecision(17);
  os << "network,target,j,label,d_bytes,tm_ms,pm_mw,tc_ms,tu_ms,pu_mw,latency_ms,energy_mj,chosen\n";
  auto line = [&](const PlanResult& p, const CostRow& r, bool chosen) {
    os << p.network.name << ',' << to_string(p.target) << ',' << r.j << ',' << r.label << ',' << r.d_bytes << ','
       << r.tm_ms << ',' << r.pm_mw << ',' << r.tc_ms << ',' << r.tu_ms << ',' << r.pu_mw << ',' << r.latency_ms() << ','
       << r.energy_mj() << ',' << (chosen ? 1 : 0) << '\n';
  };
  for (const auto& p : plans) {
    if (p.candidates.empty()) throw PlanError("report: plan has no candidates");
    for (const auto& c : p.candidates) line(p, c.cost, c.cost.j == p.chosen_j);
    if (p.mobile_only) line(p, *p.mobile_only, false);
    if (p.cloud_only) line(p, *p.cloud_only, false);
  }
  return os.str();
}

}  // namespace bottlenet
