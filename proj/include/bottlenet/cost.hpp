#pragma once

// Per-partition cost records: mobile compute, mobile power, cloud compute,
// uplink transfer. Times in ms, power in mW, energy in uJ (mW x ms).

#include <algorithm>
#include <cctype>
#include <chrono>
#include <cmath>
#include <cstdint>
#include <functional>
#include <map>
#include <optional>
#include <stdexcept>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "bottlenet/bottleneck.hpp"
#include "bottlenet/dataset.hpp"
#include "bottlenet/graph.hpp"

namespace bottlenet {

class ProfileError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

struct WirelessProfile {
  std::string name;
  double t_u_mbps = 1.0;  // uplink throughput
  double alpha_u = 0.0;   // mW per Mbps
  double beta = 0.0;      // mW

  void validate() const {
    if (!(t_u_mbps > 0.0) || !std::isfinite(t_u_mbps)) throw ProfileError("network " + name + ": t_u must be > 0");
    if (!(alpha_u >= 0.0) || !std::isfinite(alpha_u)) throw ProfileError("network " + name + ": alpha_u must be >= 0");
    if (!(beta >= 0.0) || !std::isfinite(beta)) throw ProfileError("network " + name + ": beta must be >= 0");
  }
};

inline double uplink_time_ms(double bytes, const WirelessProfile& net) {
  return bytes * 8.0 / (net.t_u_mbps * 1e6) * 1e3;
}

inline double uplink_power_mw(const WirelessProfile& net) { return net.alpha_u * net.t_u_mbps + net.beta; }

/// Lower-case with '-', '_' and spaces dropped: "Wi-Fi" and "wifi" compare equal.
inline std::string network_key(std::string_view name) {
  std::string k;
  for (char ch : name) {
    if (ch == '-' || ch == '_' || ch == ' ') continue;
    k.push_back(static_cast<char>(std::tolower(static_cast<unsigned char>(ch))));
  }
  return k;
}

enum class LoadModel { table, linear };

/// Values keyed by load level K.
using LoadTable = std::map<double, double>;

struct PartitionCosts {
  std::size_t j = 0;
  std::string label;
  LoadTable t_mobile_ms;
  LoadTable p_mobile_mw;
  LoadTable t_cloud_ms;
  std::optional<std::size_t> d_bytes;
};

/// Simulated device. With the linear load model only K = 1 is declared and
/// times scale as K * t(j, 1); power does not scale.
struct DeviceProfile {
  LoadModel load_model = LoadModel::table;
  std::vector<PartitionCosts> partitions;  // sorted by j, j = 1..M
  std::optional<PartitionCosts> mobile_only;
  std::optional<PartitionCosts> cloud_only;

  const PartitionCosts& partition(std::size_t j) const {
    for (const auto& p : partitions) {
      if (p.j == j) return p;
    }
    throw ProfileError("device profile has no partition j = " + std::to_string(j));
  }

  double lookup(const LoadTable& t, double k, bool scales, const std::string& what) const {
    if (t.empty()) return 0.0;
    if (load_model == LoadModel::linear) {
      if (!(k >= 1.0)) throw ProfileError(what + ": linear load model needs K >= 1, got " + std::to_string(k));
      auto it = t.find(1.0);
      if (it == t.end()) throw ProfileError(what + ": linear load model needs an entry for K = 1");
      return scales ? k * it->second : it->second;
    }
    auto it = t.find(k);
    if (it == t.end()) {
      std::string levels;
      for (const auto& [key, v] : t) levels += (levels.empty() ? "" : ", ") + std::to_string(key);
      throw ProfileError(what + ": load level K = " + std::to_string(k) + " not declared (have " + levels + ")");
    }
    return it->second;
  }

  double t_mobile(const PartitionCosts& p, double k) const { return lookup(p.t_mobile_ms, k, true, label_of(p, "t_mobile")); }
  double p_mobile(const PartitionCosts& p, double k) const { return lookup(p.p_mobile_mw, k, false, label_of(p, "p_mobile")); }
  double t_cloud(const PartitionCosts& p, double k) const { return lookup(p.t_cloud_ms, k, true, label_of(p, "t_cloud")); }

  void validate() const {
    auto check_table = [](const LoadTable& t, const std::string& what) {
      double prev = -1.0;
      for (const auto& [k, v] : t) {
        if (!(v >= 0.0) || !std::isfinite(v)) throw ProfileError(what + ": entries must be finite and >= 0");
        if (v < prev) throw ProfileError(what + ": entries must be non-decreasing in K");
        prev = v;
      }
    };
    auto check_part = [&](const PartitionCosts& p) {
      check_table(p.t_mobile_ms, label_of(p, "t_mobile"));
      check_table(p.p_mobile_mw, label_of(p, "p_mobile"));
      check_table(p.t_cloud_ms, label_of(p, "t_cloud"));
    };
    if (partitions.empty()) throw ProfileError("device profile declares no partitions");
    for (std::size_t i = 0; i < partitions.size(); ++i) {
      check_part(partitions[i]);
      if (i > 0 && partitions[i].j <= partitions[i - 1].j) throw ProfileError("partition j values must be strictly increasing");
      if (i == 0) continue;
      for (const auto& [k, v] : partitions[i].t_mobile_ms) {
        auto it = partitions[i - 1].t_mobile_ms.find(k);
        if (it != partitions[i - 1].t_mobile_ms.end() && v < it->second) {
          throw ProfileError(label_of(partitions[i], "t_mobile") + ": must be non-decreasing in j");
        }
      }
    }
    if (mobile_only) check_part(*mobile_only);
    if (cloud_only) check_part(*cloud_only);
  }

 private:
  static std::string label_of(const PartitionCosts& p, const std::string& what) {
    return what + " of " + (p.label.empty() ? "j=" + std::to_string(p.j) : p.label);
  }
};

/// Device and network settings loaded from a profile document.
struct ProfileDocument {
  DeviceProfile device;
  std::vector<WirelessProfile> networks;
  nlohmann::json reference = nlohmann::json::object();  // reported figures, carried through for reports

  const WirelessProfile& network(std::string_view name) const {
    const std::string key = network_key(name);
    for (const auto& n : networks) {
      if (network_key(n.name) == key) return n;
    }
    std::string known;
    for (const auto& n : networks) known += (known.empty() ? "" : ", ") + n.name;
    throw ProfileError("unknown network '" + std::string(name) + "' (profile has: " + known + ")");
  }
};

namespace detail {

inline LoadTable load_table_from_json(const nlohmann::json& j, const std::string& what) {
  LoadTable t;
  if (j.is_number()) {
    t[1.0] = j.get<double>();
    return t;
  }
  if (!j.is_object()) throw ProfileError(what + ": expected an object keyed by load level");
  for (const auto& [key, v] : j.items()) {
    std::size_t used = 0;
    double k = 0.0;
    try {
      k = std::stod(key, &used);
    } catch (const std::exception&) {
      used = 0;
    }
    if (used != key.size() || !(k > 0.0)) throw ProfileError(what + ": bad load level key '" + key + "'");
    t[k] = v.get<double>();
  }
  return t;
}

inline nlohmann::json load_table_to_json(const LoadTable& t) {
  nlohmann::json j = nlohmann::json::object();
  for (const auto& [k, v] : t) {
    std::string key = std::to_string(k);
    if (k == std::floor(k)) key = std::to_string(static_cast<long long>(k));
    j[key] = v;
  }
  return j;
}

inline PartitionCosts partition_from_json(const nlohmann::json& j, std::size_t fallback_j) {
  PartitionCosts p;
  p.j = j.value("j", fallback_j);
  p.label = j.value("label", std::string{});
  const std::string what = p.label.empty() ? "partition " + std::to_string(p.j) : p.label;
  if (j.contains("t_mobile_ms")) p.t_mobile_ms = load_table_from_json(j["t_mobile_ms"], what + " t_mobile_ms");
  if (j.contains("p_mobile_mw")) p.p_mobile_mw = load_table_from_json(j["p_mobile_mw"], what + " p_mobile_mw");
  if (j.contains("t_cloud_ms")) p.t_cloud_ms = load_table_from_json(j["t_cloud_ms"], what + " t_cloud_ms");
  if (j.contains("d_bytes")) p.d_bytes = j["d_bytes"].get<std::size_t>();
  return p;
}

inline nlohmann::json partition_to_json(const PartitionCosts& p) {
  nlohmann::json j;
  j["j"] = p.j;
  if (!p.label.empty()) j["label"] = p.label;
  j["t_mobile_ms"] = load_table_to_json(p.t_mobile_ms);
  j["p_mobile_mw"] = load_table_to_json(p.p_mobile_mw);
  j["t_cloud_ms"] = load_table_to_json(p.t_cloud_ms);
  if (p.d_bytes) j["d_bytes"] = *p.d_bytes;
  return j;
}

}  // namespace detail

inline WirelessProfile wireless_from_json(const nlohmann::json& j) {
  WirelessProfile n{j.at("name").get<std::string>(), j.at("t_u_mbps").get<double>(), j.at("alpha_u").get<double>(),
                    j.at("beta").get<double>()};
  n.validate();
  return n;
}

inline ProfileDocument profile_from_json(const nlohmann::json& j) {
  ProfileDocument doc;
  try {
    const auto& dev = j.at("device");
    const std::string model = dev.value("load_model", std::string("table"));
    if (model != "table" && model != "linear") throw ProfileError("load_model must be table|linear, got " + model);
    doc.device.load_model = model == "linear" ? LoadModel::linear : LoadModel::table;
    std::size_t idx = 1;
    for (const auto& p : dev.at("partitions")) doc.device.partitions.push_back(detail::partition_from_json(p, idx++));
    std::sort(doc.device.partitions.begin(), doc.device.partitions.end(),
              [](const auto& a, const auto& b) { return a.j < b.j; });
    if (dev.contains("mobile_only")) {
      doc.device.mobile_only = detail::partition_from_json(dev["mobile_only"], 0);
      if (doc.device.mobile_only->label.empty()) doc.device.mobile_only->label = "mobile-only";
    }
    if (dev.contains("cloud_only")) {
      doc.device.cloud_only = detail::partition_from_json(dev["cloud_only"], 0);
      if (doc.device.cloud_only->label.empty()) doc.device.cloud_only->label = "cloud-only";
    }
    for (const auto& n : j.at("networks")) doc.networks.push_back(wireless_from_json(n));
    if (doc.networks.empty()) throw ProfileError("profile declares no networks");
    doc.reference = j.value("reference", nlohmann::json::object());
  } catch (const nlohmann::json::exception& e) {
    throw ProfileError(std::string("profile document: ") + e.what());
  }
  doc.device.validate();
  return doc;
}

inline nlohmann::json profile_to_json(const ProfileDocument& doc) {
  nlohmann::json j;
  j["device"]["load_model"] = doc.device.load_model == LoadModel::linear ? "linear" : "table";
  j["device"]["partitions"] = nlohmann::json::array();
  for (const auto& p : doc.device.partitions) j["device"]["partitions"].push_back(detail::partition_to_json(p));
  if (doc.device.mobile_only) j["device"]["mobile_only"] = detail::partition_to_json(*doc.device.mobile_only);
  if (doc.device.cloud_only) j["device"]["cloud_only"] = detail::partition_to_json(*doc.device.cloud_only);
  j["networks"] = nlohmann::json::array();
  for (const auto& n : doc.networks) {
    j["networks"].push_back({{"name", n.name}, {"t_u_mbps", n.t_u_mbps}, {"alpha_u", n.alpha_u}, {"beta", n.beta}});
  }
  if (!doc.reference.empty()) j["reference"] = doc.reference;
  return j;
}

inline ProfileDocument load_profile(const std::string& path) {
  const auto bytes = read_file(path);
  nlohmann::json j;
  try {
    j = nlohmann::json::parse(bytes.begin(), bytes.end());
  } catch (const nlohmann::json::exception& e) {
    throw ProfileError(path + ": " + e.what());
  }
  return profile_from_json(j);
}

struct CostRow {
  std::size_t j = 0;
  std::string label;
  double tm_ms = 0.0;
  double pm_mw = 0.0;
  double tc_ms = 0.0;
  double tu_ms = 0.0;
  double pu_mw = 0.0;
  std::size_t d_bytes = 0;

  double latency_ms() const { return tm_ms + tu_ms + tc_ms; }
  double energy_uj() const { return tm_ms * pm_mw + tu_ms * pu_mw; }
  double energy_mj() const { return energy_uj() / 1000.0; }
};

struct CostProfile {
  WirelessProfile network;
  double k_mobile = 1.0;
  double k_cloud = 1.0;
  std::vector<CostRow> rows;
  std::optional<CostRow> mobile_only;
  std::optional<CostRow> cloud_only;
};

inline CostRow cost_row(const DeviceProfile& dev, const PartitionCosts& p, std::size_t d_bytes, const WirelessProfile& net,
                        double k_mobile, double k_cloud) {
  CostRow r;
  r.j = p.j;
  r.label = p.label.empty() ? "j" + std::to_string(p.j) : p.label;
  r.tm_ms = dev.t_mobile(p, k_mobile);
  r.pm_mw = dev.p_mobile(p, k_mobile);
  r.tc_ms = dev.t_cloud(p, k_cloud);
  r.d_bytes = d_bytes;
  r.tu_ms = uplink_time_ms(static_cast<double>(d_bytes), net);
  r.pu_mw = uplink_power_mw(net);
  return r;
}

/// Simulated measurement. `d_bytes` overrides the profile's per-partition
/// sizes; every listed partition needs a size from one of the two.
inline CostProfile measure_simulated(const DeviceProfile& dev, const WirelessProfile& net, double k_mobile, double k_cloud,
                                     const std::map<std::size_t, std::size_t>& d_bytes = {},
                                     std::optional<std::vector<std::size_t>> only = std::nullopt) {
  net.validate();
  CostProfile cp{net, k_mobile, k_cloud, {}, std::nullopt, std::nullopt};
  std::vector<std::size_t> missing;
  for (const auto& p : dev.partitions) {
    if (only && std::find(only->begin(), only->end(), p.j) == only->end()) continue;
    std::optional<std::size_t> d = p.d_bytes;
    if (auto it = d_bytes.find(p.j); it != d_bytes.end()) d = it->second;
    if (!d) {
      missing.push_back(p.j);
      continue;
    }
    cp.rows.push_back(cost_row(dev, p, *d, net, k_mobile, k_cloud));
  }
  if (only) {
    for (std::size_t j : *only) {
      if (std::none_of(dev.partitions.begin(), dev.partitions.end(), [&](const auto& p) { return p.j == j; })) {
        missing.push_back(j);
      }
    }
  }
  if (!missing.empty()) {
    std::sort(missing.begin(), missing.end());
    std::string list;
    for (std::size_t j : missing) list += (list.empty() ? "" : ", ") + std::to_string(j);
    throw ProfileError("no offloaded-data size or device entry for partition(s) j = " + list);
  }
  if (dev.mobile_only) {
    CostRow r = cost_row(dev, *dev.mobile_only, 0, net, k_mobile, k_cloud);
    r.tu_ms = 0.0;
    cp.mobile_only = r;
  }
  if (dev.cloud_only) cp.cloud_only = cost_row(dev, *dev.cloud_only, dev.cloud_only->d_bytes.value_or(0), net, k_mobile, k_cloud);
  return cp;
}

/// Median; even counts average the two middle samples.
inline double median(std::vector<double> v) {
  if (v.empty()) throw std::invalid_argument("median of an empty sample");
  const std::size_t mid = v.size() / 2;
  std::nth_element(v.begin(), v.begin() + static_cast<std::ptrdiff_t>(mid), v.end());
  if (v.size() % 2 == 1) return v[mid];
  const double hi = v[mid];
  const double lo = *std::max_element(v.begin(), v.begin() + static_cast<std::ptrdiff_t>(mid));
  return lo + (hi - lo) / 2.0;
}

/// Lower median for integer samples such as byte counts.
inline std::size_t median_size(std::vector<std::size_t> v) {
  if (v.empty()) throw std::invalid_argument("median of an empty sample");
  const std::size_t mid = (v.size() - 1) / 2;
  std::nth_element(v.begin(), v.begin() + static_cast<std::ptrdiff_t>(mid), v.end());
  return v[mid];
}

/// Milliseconds on some monotonic clock.
using Clock = std::function<double()>;

inline Clock steady_clock_ms() {
  return [] {
    using namespace std::chrono;
    return duration<double, std::milli>(steady_clock::now().time_since_epoch()).count();
  };
}

struct Timing {
  double median_ms = 0.0;
  std::vector<double> samples_ms;
};

/// Runs `fn` `warmup` times untimed, then `reps` timed runs.
inline Timing time_median(const std::function<void()>& fn, std::size_t warmup, std::size_t reps, const Clock& clock) {
  if (reps == 0) throw std::invalid_argument("time_median: repetitions must be >= 1");
  for (std::size_t i = 0; i < warmup; ++i) fn();
  Timing t;
  for (std::size_t i = 0; i < reps; ++i) {
    const double t0 = clock();
    fn();
    t.samples_ms.push_back(clock() - t0);
  }
  t.median_ms = median(t.samples_ms);
  return t;
}

struct BenchOptions {
  std::size_t warmup = 2;
  std::size_t repetitions = 5;
  std::size_t calibration = 32;  // samples used for the offloaded-data median
  double mobile_power_mw = 1000.0;
  Clock clock = steady_clock_ms();
};

/// Timed on this machine: mobile slice = layers through the codec encoder,
/// cloud slice = decoder through logits. Each graph must carry a bottleneck.
/// `models` maps j to its graph; every j in `expected` must be present.
inline CostProfile measure_bench(std::map<std::size_t, NetworkGraph*> models, const std::vector<std::size_t>& expected,
                                 const Dataset& calibration, const WirelessProfile& net, double k_mobile, double k_cloud,
                                 const BenchOptions& opts = {}) {
  net.validate();
  std::vector<std::size_t> missing;
  for (std::size_t j : expected) {
    if (!models.count(j) || models[j] == nullptr) missing.push_back(j);
  }
  if (!missing.empty()) {
    std::string list;
    for (std::size_t j : missing) list += (list.empty() ? "" : ", ") + std::to_string(j);
    throw ProfileError("missing trained model for partition(s) j = " + list);
  }
  if (calibration.empty()) throw DataError("bench: empty calibration set");
  CostProfile cp{net, k_mobile, k_cloud, {}, std::nullopt, std::nullopt};
  const Tensor x = calibration.input(0);
  for (std::size_t j : expected) {
    NetworkGraph& g = *models[j];
    const auto& b = g.bottleneck();
    if (!b) throw ProfileError("model for j = " + std::to_string(j) + " has no bottleneck unit");
    const CodecLayer* codec = g.codec_layer();
    std::vector<std::uint8_t> wire;
    auto mobile = [&] {
      const Tensor f = g.run(x, 0, b->codec_layer - 1, Mode::eval);
      wire = codec->encode_sample(f, 0).serialize();
    };
    auto cloud = [&] {
      const Tensor restored = codec->decode_sample(codec::EncodedFeature::parse(wire));
      g.run(restored, b->codec_layer + 1, g.size() - 1, Mode::eval);
    };
    mobile();
    CostRow r;
    r.j = j;
    r.label = "j" + std::to_string(j);
    r.tm_ms = time_median(mobile, opts.warmup, opts.repetitions, opts.clock).median_ms;
    r.tc_ms = time_median(cloud, opts.warmup, opts.repetitions, opts.clock).median_ms;
    r.pm_mw = opts.mobile_power_mw;
    r.d_bytes = median_size(encoded_sizes(g, calibration, opts.calibration));
    r.tu_ms = uplink_time_ms(static_cast<double>(r.d_bytes), net);
    r.pu_mw = uplink_power_mw(net);
    cp.rows.push_back(r);
  }
  return cp;
}

}  // namespace bottlenet
