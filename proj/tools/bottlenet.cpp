// bottlenet: dataset generation, bottleneck sweeps, planning, reports and
// the split-inference client/server.
//
// Exit codes: 0 success, 1 usage error, 2 data error, 3 runtime/network error.

#include <atomic>
#include <csignal>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <thread>

#include <CLI11.hpp>
#include <nlohmann/json.hpp>

#include "bottlenet/bottlenet.hpp"

namespace fs = std::filesystem;
using nlohmann::json;
using namespace bottlenet;

namespace {

enum Exit { ok = 0, usage = 1, data = 2, runtime = 3 };

class UsageError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// A required input produced by another command is missing.
class MissingArtifact : public std::runtime_error {
 public:
  MissingArtifact(const std::string& path, const std::string& producer)
      : std::runtime_error("missing " + path + "; create it with `bottlenet " + producer + "`") {}
};

void require_file(const std::string& path, const std::string& producer) {
  if (!fs::exists(path)) throw MissingArtifact(path, producer);
}

json read_json(const std::string& path, const std::string& producer) {
  require_file(path, producer);
  std::ifstream in(path);
  try {
    return json::parse(in);
  } catch (const json::parse_error& e) {
    throw DataError(path + ": " + e.what());
  }
}

void write_text(const std::string& path, const std::string& text) {
  if (const auto dir = fs::path(path).parent_path(); !dir.empty()) fs::create_directories(dir);
  std::ofstream out(path, std::ios::trunc);
  if (!out) throw DataError("cannot write " + path);
  out << text;
  if (!out) throw DataError("write failed for " + path);
}

std::string model_path(const std::string& dir, std::size_t j) {
  return (fs::path(dir) / ("model_j" + std::to_string(j) + ".bnm")).string();
}

/// Loads every model_j<J>.bnm in `dir`, keyed by J.
std::map<std::uint16_t, NetworkGraph> load_models(const std::string& dir) {
  if (!fs::is_directory(dir)) throw MissingArtifact(dir, "sweep --out " + dir);
  std::map<std::uint16_t, NetworkGraph> models;
  for (const auto& entry : fs::directory_iterator(dir)) {
    const std::string name = entry.path().filename().string();
    if (!name.starts_with("model_j") || entry.path().extension() != ".bnm") continue;
    const std::string digits = name.substr(7, name.size() - 7 - 4);
    if (digits.empty() || digits.find_first_not_of("0123456789") != std::string::npos) continue;
    models.emplace(static_cast<std::uint16_t>(std::stoul(digits)), load_checkpoint(entry.path().string()).graph);
  }
  if (models.empty()) throw MissingArtifact(dir + "/model_j*.bnm", "sweep --out " + dir);
  return models;
}

std::atomic<bool> g_stop{false};
void on_signal(int) { g_stop = true; }

/// Waits up to `wait_ms` for the server to accept connections.
void connect_with_wait(SplitClient& client, int wait_ms) {
  const auto deadline = std::chrono::steady_clock::now() + std::chrono::milliseconds(wait_ms);
  for (;;) {
    try {
      client.connect();
      return;
    } catch (const ConnectError&) {
      if (std::chrono::steady_clock::now() >= deadline) throw;
      std::this_thread::sleep_for(std::chrono::milliseconds(50));
    }
  }
}

/// Fills options left unset on the command line from a JSON object whose
/// keys are long option names.
void apply_overlay(CLI::App& sub, const json& overlay) {
  for (const auto& [key, value] : overlay.items()) {
    CLI::Option* opt = nullptr;
    try {
      opt = sub.get_option("--" + key);
    } catch (const CLI::OptionNotFound&) {
      throw UsageError("config file: unknown option '" + key + "' for " + sub.get_name());
    }
    if (opt->count() > 0) continue;
    if (value.is_array()) {
      for (const auto& v : value) opt->add_result(v.is_string() ? v.get<std::string>() : v.dump());
    } else {
      opt->add_result(value.is_string() ? value.get<std::string>() : value.dump());
    }
    opt->run_callback();
  }
}

/// Resolved value of every option of `sub`, for the run log.
json resolved(const CLI::App& sub) {
  json j = json::object();
  for (const CLI::Option* opt : sub.get_options()) {
    if (opt->get_lnames().empty() || opt->get_lnames().front() == "help") continue;
    const std::string name = opt->get_lnames().front();
    if (name == "config") continue;
    const auto& res = opt->results();
    if (!res.empty()) {
      j[name] = res.size() == 1 ? json(res.front()) : json(res);
    } else if (!opt->get_default_str().empty()) {
      j[name] = opt->get_default_str();
    } else if (opt->get_type_size() == 0) {
      j[name] = false;
    }
  }
  return j;
}

// ---------------------------------------------------------------------------

struct DatasetArgs {
  std::string kind = "shapes";
  std::size_t count = 1000, height = 28, width = 28, channels = 1, classes = 4;
  std::uint64_t seed = 1;
  std::string out;
};

int cmd_dataset(const DatasetArgs& a) {
  GeneratorConfig g;
  g.kind = dataset_kind_from_string(a.kind);
  g.count = a.count;
  g.height = a.height;
  g.width = a.width;
  g.channels = a.channels;
  g.num_classes = a.classes;
  g.seed = a.seed;
  const Dataset d = generate_dataset(g);
  if (const auto dir = fs::path(a.out).parent_path(); !dir.empty()) fs::create_directories(dir);
  save_dataset(d, a.out);
  std::cout << "wrote " << a.out << ": " << d.count() << " samples " << d.height << "x" << d.width << "x" << d.channels
            << ", " << d.num_classes << " classes\n";
  return ok;
}

struct SweepArgs {
  std::string graph, data, out;
  std::size_t smax = 2, cmax = 8, epochs = 10, batch = 32, calibration = 32;
  unsigned quality = 20, bits = 8;
  double epsilon = 0.02, lr = 0.05;
  std::uint64_t seed = 1;
};

int cmd_sweep(const SweepArgs& a) {
  const json graph_json = read_json(a.graph, "(graph description; see configs/desk_net.json)");
  require_file(a.data, "dataset --out " + a.data);
  const Dataset all = load_dataset(a.data);
  const auto parts = split(all);
  NetworkGraph base = graph_from_json(graph_json, derive_seed(a.seed, {0}));
  if (base.input_shape() != parts.train.sample_shape()) {
    throw DataError("graph input " + base.input_shape().str() + " does not match dataset samples " +
                    parts.train.sample_shape().str());
  }
  if (base.bottleneck()) throw DataError(a.graph + " already contains a bottleneck unit");

  TrainConfig tc;
  tc.epochs = a.epochs;
  tc.lr = a.lr;
  tc.batch_size = a.batch;
  tc.seed = derive_seed(a.seed, {1});
  const auto base_result = train(base, parts.train, parts.test, tc);
  const double floor = base_result.accuracy - a.epsilon;
  std::cerr << "base accuracy " << base_result.accuracy << ", accuracy floor " << floor << "\n";

  SweepBounds bounds{a.smax, a.cmax, a.quality, a.bits};
  SweepOptions opts;
  opts.train = tc;
  opts.calibration = a.calibration;
  opts.on_entry = [](const SweepEntry& e) {
    std::cerr << "  j=" << e.j << " s=" << e.s << " c'=" << e.c_prime << " acc=" << e.accuracy << " D=" << e.d_bytes
              << " B\n";
  };
  const SweepResult r = train_sweep(base, parts.train, parts.test, bounds, floor, a.seed, opts);

  fs::create_directories(a.out);
  save_checkpoint(base, (fs::path(a.out) / "base.bnm").string(), {{"accuracy", base_result.accuracy}});
  for (const auto& loc : r.locations) {
    save_checkpoint(r.models.at(loc.j), model_path(a.out, loc.j), {{"j", loc.j}, {"accuracy", loc.accuracy}});
  }
  json doc = sweep_to_json(r);
  doc["base_accuracy"] = base_result.accuracy;
  doc["epsilon"] = a.epsilon;
  write_text((fs::path(a.out) / "sweep.json").string(), doc.dump(2) + "\n");
  for (const auto& loc : r.locations) {
    std::cout << "j=" << loc.j << ": s=" << loc.config.spatial << " c'=" << loc.config.channels << " D=" << loc.d_bytes
              << " B acc=" << loc.accuracy << "\n";
  }
  for (auto j : r.infeasible) std::cout << "j=" << j << ": infeasible at floor " << floor << "\n";
  return ok;
}

struct PlanArgs {
  std::string profiles, network = "3g", target = "latency", sweep, out;
  double k_mobile = 1.0, k_cloud = 1.0;
};

PlanResult make_plan(const ProfileDocument& doc, const PlanArgs& a) {
  const auto& net = doc.network(a.network);
  const Target target = target_from_string(a.target);
  if (a.sweep.empty()) return select(measure_simulated(doc.device, net, a.k_mobile, a.k_cloud), target);
  const SweepResult sw = sweep_from_json(read_json(a.sweep, "sweep --out <dir>"));
  std::map<std::size_t, std::size_t> sizes;
  std::vector<std::size_t> only;
  for (const auto& l : sw.locations) {
    sizes[l.j] = l.d_bytes;
    only.push_back(l.j);
  }
  const auto cost = measure_simulated(doc.device, net, a.k_mobile, a.k_cloud, sizes, only);
  return select(cost, target, locations_by_j(sw.locations));
}

int cmd_plan(const PlanArgs& a) {
  const ProfileDocument doc = profile_from_json(read_json(a.profiles, "(profile document; see configs/reference_profile.json)"));
  if (a.k_mobile <= 0 || a.k_cloud <= 0) throw UsageError("load levels must be > 0");
  const PlanResult plan = make_plan(doc, a);
  const std::string text = plan_to_json(plan).dump(2) + "\n";
  if (a.out.empty()) {
    std::cout << text;
  } else {
    write_text(a.out, text);
    const auto& c = plan.chosen();
    std::cerr << "min-" << a.target << " on " << plan.network.name << ": " << c.cost.label << " ("
              << c.cost.latency_ms() << " ms, " << c.cost.energy_mj() << " mJ)\n";
  }
  return ok;
}

struct ReportArgs {
  std::vector<std::string> plans;
  std::string csv;
};

int cmd_report(const ReportArgs& a) {
  std::vector<PlanResult> plans;
  for (const auto& p : a.plans) plans.push_back(plan_from_json(read_json(p, "plan --out " + p)));
  if (plans.empty()) throw UsageError("report: no plans given");
  std::cout << render_report(plans);
  if (!a.csv.empty()) write_text(a.csv, render_csv(plans));
  return ok;
}

struct ServeArgs {
  std::string models, host = "127.0.0.1";
  std::uint16_t port = 0;
  std::optional<double> load_stub;
  std::size_t capacity = 4;
  int exit_after_ms = 0;
};

int cmd_serve(const ServeArgs& a) {
  Server::Options opts;
  opts.host = a.host;
  opts.port = a.port;
  opts.load_stub = a.load_stub;
  opts.capacity = a.capacity;
  auto models = load_models(a.models);
  std::string ids;
  for (const auto& [j, g] : models) ids += (ids.empty() ? "" : ",") + std::to_string(j);
  Server server(std::move(models), opts);
  std::signal(SIGPIPE, SIG_IGN);
  server.start();
  std::cout << "listening on " << a.host << ":" << server.port() << " partitions " << ids << std::endl;
  std::signal(SIGINT, on_signal);
  std::signal(SIGTERM, on_signal);
  const auto start = std::chrono::steady_clock::now();
  while (!g_stop) {
    if (a.exit_after_ms > 0 && std::chrono::steady_clock::now() - start >= std::chrono::milliseconds(a.exit_after_ms)) break;
    std::this_thread::sleep_for(std::chrono::milliseconds(20));
  }
  server.stop();
  std::cerr << "served " << server.requests_served() << " requests\n";
  return ok;
}

struct InferArgs {
  std::string server, input, models;
  std::uint16_t partition = 1;
  std::size_t index = 0;
  int wait_ms = 0;
};

int cmd_infer(const InferArgs& a) {
  require_file(a.input, "dataset --out " + a.input);
  const std::string path = model_path(a.models, a.partition);
  require_file(path, "sweep --out " + a.models);
  NetworkGraph model = load_checkpoint(path).graph;
  const Dataset d = load_dataset(a.input);
  if (a.index >= d.count()) throw DataError("sample index " + std::to_string(a.index) + " out of range");
  SplitClient client(parse_endpoint(a.server));
  connect_with_wait(client, a.wait_ms);
  const auto r = client.infer(model, d.input(a.index), a.partition);
  const auto best = std::max_element(r.logits.begin(), r.logits.end()) - r.logits.begin();
  json out{{"partition", a.partition},
           {"index", a.index},
           {"label", d.labels[a.index]},
           {"predicted", best},
           {"logits", r.logits},
           {"feature_bytes", r.timings.feature_bytes},
           {"mobile_ms", r.timings.mobile_ms},
           {"send_ms", r.timings.send_ms},
           {"round_trip_ms", r.timings.round_trip_ms}};
  std::cout << out.dump() << "\n";
  return ok;
}

struct MonitorArgs {
  std::string server, profiles, network = "3g", target = "latency", sweep;
  int period_ms = 1000;
  std::size_t count = 0;
  double k_mobile = 1.0;
};

int cmd_monitor(const MonitorArgs& a) {
  const ProfileDocument doc = profile_from_json(read_json(a.profiles, "(profile document; see configs/reference_profile.json)"));
  PlanArgs pa;
  pa.network = a.network;
  pa.target = a.target;
  pa.sweep = a.sweep;
  pa.k_mobile = a.k_mobile;
  PlanResult plan = make_plan(doc, pa);
  const auto& net = doc.network(a.network);
  ActivePartition active(static_cast<std::uint16_t>(plan.chosen_j));
  auto client = std::make_shared<SplitClient>(parse_endpoint(a.server), std::min(timeout_ms(), std::max(a.period_ms, 100)));
  LoadMonitor mon(
      server_sampler(client),
      [&](double k) {
        plan = replan(plan, doc.device, net, a.k_mobile, k);
        return static_cast<std::uint16_t>(plan.chosen_j);
      },
      active, {});
  std::signal(SIGINT, on_signal);
  std::signal(SIGTERM, on_signal);
  std::cout << "initial partition j=" << active.get() << std::endl;
  for (std::size_t n = 0; !g_stop && (a.count == 0 || n < a.count); ++n) {
    const bool swapped = mon.step();
    json line{{"sample", n}, {"partition", active.get()}, {"stale", mon.stale()}, {"swapped", swapped}};
    line["k_cloud"] = mon.last_k() ? json(*mon.last_k()) : json(nullptr);
    std::cout << line.dump() << std::endl;
    if (a.count == 0 || n + 1 < a.count) std::this_thread::sleep_for(std::chrono::milliseconds(a.period_ms));
  }
  if (mon.stale()) {
    std::cerr << "server " << a.server << " stopped answering; keeping partition j=" << active.get() << "\n";
    return runtime;
  }
  return ok;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Bottleneck split-computing toolkit"};
  app.require_subcommand(1);
  app.set_version_flag("--version", "bottlenet 0.1.0");
  std::string config_path;

  auto with_config = [&](CLI::App* sub) {
    sub->add_option("--config", config_path, "JSON file with option values (command-line flags win)");
  };

  DatasetArgs da;
  auto* ds = app.add_subcommand("dataset", "Generate a synthetic image dataset");
  ds->add_option("--kind", da.kind, "blobs | stripes | shapes")->capture_default_str()->check(CLI::IsMember({"blobs", "stripes", "shapes"}));
  ds->add_option("--count", da.count)->capture_default_str();
  ds->add_option("--height", da.height)->capture_default_str();
  ds->add_option("--width", da.width)->capture_default_str();
  ds->add_option("--channels", da.channels)->capture_default_str();
  ds->add_option("--classes", da.classes)->capture_default_str();
  ds->add_option("--seed", da.seed)->capture_default_str();
  ds->add_option("--out", da.out, "Output .bnds file")->required();
  with_config(ds);

  SweepArgs sa;
  auto* sw = app.add_subcommand("sweep", "Train bottleneck models over (location, s, c')");
  sw->add_option("--graph", sa.graph, "Base graph description (JSON)")->required();
  sw->add_option("--data", sa.data, "Dataset file")->required();
  sw->add_option("--out", sa.out, "Output directory")->required();
  sw->add_option("--smax", sa.smax)->capture_default_str();
  sw->add_option("--cmax", sa.cmax)->capture_default_str();
  sw->add_option("--quality", sa.quality)->capture_default_str();
  sw->add_option("--bits", sa.bits)->capture_default_str();
  sw->add_option("--epsilon", sa.epsilon, "Allowed accuracy drop below the base model")->capture_default_str();
  sw->add_option("--epochs", sa.epochs)->capture_default_str();
  sw->add_option("--lr", sa.lr)->capture_default_str();
  sw->add_option("--batch", sa.batch)->capture_default_str();
  sw->add_option("--calibration", sa.calibration, "Samples used to measure D_j")->capture_default_str();
  sw->add_option("--seed", sa.seed)->capture_default_str();
  with_config(sw);

  PlanArgs pa;
  auto* pl = app.add_subcommand("plan", "Choose the partition point for a network and load");
  pl->add_option("--profiles", pa.profiles, "Profile document (JSON)")->required();
  pl->add_option("--network", pa.network)->capture_default_str();
  pl->add_option("--target", pa.target)->capture_default_str()->check(CLI::IsMember({"latency", "energy"}));
  pl->add_option("--k-mobile", pa.k_mobile)->capture_default_str();
  pl->add_option("--k-cloud", pa.k_cloud)->capture_default_str();
  pl->add_option("--sweep", pa.sweep, "sweep.json whose D_j and locations replace the profile's");
  pl->add_option("--out", pa.out, "Write the plan here instead of stdout");
  with_config(pl);

  ReportArgs ra;
  auto* rp = app.add_subcommand("report", "Render plans as a table (and CSV)");
  rp->add_option("--plan", ra.plans, "Plan JSON (repeatable)")->required();
  rp->add_option("--csv", ra.csv, "Also write CSV here");
  with_config(rp);

  ServeArgs sva;
  auto* sv = app.add_subcommand("serve", "Serve cloud halves of the models in a sweep directory");
  sv->add_option("--models", sva.models, "Directory with model_j<J>.bnm files")->required();
  sv->add_option("--host", sva.host)->capture_default_str();
  sv->add_option("--port", sva.port, "0 picks a free port")->capture_default_str();
  sv->add_option("--load-stub", sva.load_stub, "Report this K_cloud instead of the live load");
  sv->add_option("--capacity", sva.capacity, "In-flight requests that double K_cloud")->capture_default_str();
  sv->add_option("--exit-after-ms", sva.exit_after_ms, "Stop after this long (0 = run until signalled)")->capture_default_str();
  with_config(sv);

  InferArgs ia;
  auto* inf = app.add_subcommand("infer", "Run one sample through the split model");
  inf->add_option("--server", ia.server, "HOST:PORT")->required();
  inf->add_option("--input", ia.input, "Dataset file")->required();
  inf->add_option("--partition", ia.partition)->required();
  inf->add_option("--models", ia.models, "Directory with the mobile halves (model_j<J>.bnm)")->required();
  inf->add_option("--index", ia.index, "Sample index in the dataset")->capture_default_str();
  inf->add_option("--wait-ms", ia.wait_ms, "Keep retrying the connection this long")->capture_default_str();
  with_config(inf);

  MonitorArgs ma;
  auto* mo = app.add_subcommand("monitor", "Poll server load and replan the active partition");
  mo->add_option("--server", ma.server, "HOST:PORT")->required();
  mo->add_option("--profiles", ma.profiles, "Profile document (JSON)")->required();
  mo->add_option("--period-ms", ma.period_ms)->capture_default_str();
  mo->add_option("--network", ma.network)->capture_default_str();
  mo->add_option("--target", ma.target)->capture_default_str()->check(CLI::IsMember({"latency", "energy"}));
  mo->add_option("--k-mobile", ma.k_mobile)->capture_default_str();
  mo->add_option("--sweep", ma.sweep, "sweep.json restricting the candidate partitions");
  mo->add_option("--count", ma.count, "Stop after this many pings (0 = run until signalled)")->capture_default_str();
  with_config(mo);

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    return app.exit(e) == 0 ? ok : usage;
  }

  CLI::App* sub = app.get_subcommands().front();
  try {
    if (!config_path.empty()) {
      std::ifstream in(config_path);
      if (!in) throw UsageError("cannot open config file " + config_path);
      json overlay;
      try {
        overlay = json::parse(in);
      } catch (const json::parse_error& e) {
        throw UsageError("config file " + config_path + ": " + e.what());
      }
      if (!overlay.is_object()) throw UsageError("config file must hold a JSON object");
      apply_overlay(*sub, overlay);
    }
    std::cerr << "bottlenet " << sub->get_name() << " " << resolved(*sub).dump() << "\n";

    const std::string name = sub->get_name();
    if (name == "dataset") return cmd_dataset(da);
    if (name == "sweep") return cmd_sweep(sa);
    if (name == "plan") return cmd_plan(pa);
    if (name == "report") return cmd_report(ra);
    if (name == "serve") return cmd_serve(sva);
    if (name == "infer") return cmd_infer(ia);
    if (name == "monitor") return cmd_monitor(ma);
    return usage;
  } catch (const UsageError& e) {
    std::cerr << "error: " << e.what() << "\n";
    return usage;
  } catch (const CLI::ParseError& e) {
    std::cerr << "error: " << e.what() << "\n";
    return usage;
  } catch (const MissingArtifact& e) {
    std::cerr << "error: " << e.what() << "\n";
    return data;
  } catch (const NetworkError& e) {
    std::cerr << "error: " << e.what() << "\n";
    return runtime;
  } catch (const DataError& e) {
    std::cerr << "error: " << e.what() << "\n";
    return data;
  } catch (const FormatError& e) {
    std::cerr << "error: " << e.what() << "\n";
    return data;
  } catch (const ProfileError& e) {
    std::cerr << "error: " << e.what() << "\n";
    return data;
  } catch (const PlanError& e) {
    std::cerr << "error: " << e.what() << "\n";
    return data;
  } catch (const std::invalid_argument& e) {
    std::cerr << "error: " << e.what() << "\n";
    return usage;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return runtime;
  }
}
