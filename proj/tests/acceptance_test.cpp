// Acceptance suite: one PASS/FAIL line per criterion, nonzero exit if any fail.

#include <sys/wait.h>

#include <algorithm>
#include <atomic>
#include <bitset>
#include <chrono>
#include <cstdio>
#include <functional>
#include <iostream>
#include <memory>
#include <random>
#include <sstream>
#include <string>
#include <thread>
#include <vector>

#include "flakeless/bench.hpp"
#include "flakeless/bit_layout.hpp"
#include "flakeless/generator.hpp"
#include "flakeless/identity.hpp"
#include "flakeless/metadata_http.hpp"
#include "flakeless/scenario.hpp"
#include "flakeless/service.hpp"
#include "flakeless/simulator.hpp"
#include "mock_metadata_server.hpp"

namespace {

using namespace flakeless;
using Clock = std::chrono::steady_clock;

struct Outcome {
  bool pass = false;
  std::string detail;
};

double seconds_since(Clock::time_point start) {
  return std::chrono::duration<double>(Clock::now() - start).count();
}

std::string fixed(double v, int digits = 1) {
  std::ostringstream out;
  out.setf(std::ios::fixed);
  out.precision(digits);
  out << v;
  return out.str();
}

Outcome virtual_ceiling() {
  const auto start = Clock::now();
  BenchOptions options;
  options.threads = 8;
  options.mode = BenchMode::kVirtual;
  const BenchReport standard = run_bench(options);
  options.layout = performance_layout();
  const BenchReport perf = run_bench(options);
  const double took = seconds_since(start);
  return {standard.total_ids == 64000 && perf.total_ids == 128000 && standard.duplicates == 0 &&
              perf.duplicates == 0 && took < 5.0,
          "standard=" + std::to_string(standard.total_ids) +
              " performance=" + std::to_string(perf.total_ids) + " in " + fixed(took, 2) + "s"};
}

Outcome wall_bench() {
  BenchOptions options;
  options.threads = 200;
  options.duration_seconds = 10;
  options.mode = BenchMode::kWall;
  const BenchReport r = run_bench(options);
  const bool soft = r.achieved_tps >= 45000.0;
  return {r.achieved_tps <= 64000.0 && r.duplicates == 0 && r.max_ids_per_ms <= 64,
          "measured " + fixed(r.achieved_tps) + " TPS (reference 57634, soft target 45000 " +
              (soft ? "met" : "missed") + "), duplicates=" + std::to_string(r.duplicates) +
              " max_ids_per_ms=" + std::to_string(r.max_ids_per_ms) +
              " threads=" + std::to_string(r.threads)};
}

Outcome service_load() {
  constexpr int kClients = 100;
  constexpr int kPerClient = 1000;
  const auto start = Clock::now();

  GeneratorConfig gen_config;
  gen_config.machine_id = 258;
  auto generator = std::make_shared<Generator>(gen_config, std::make_shared<WallClock>());
  ServiceConfig config;
  config.bind_address = "127.0.0.1";
  config.port = 0;
  IdService service(config, generator,
                    MachineIdentity{258, "10.0.1.2", Provider::kGenericFallback,
                                    Derivation::kRawOctets, {}});
  if (!service.bind()) return {false, "could not bind a local port"};
  service.start();

  std::vector<std::vector<std::uint64_t>> per_client(kClients);
  std::atomic<int> server_errors{0};
  std::atomic<int> transport_errors{0};
  std::vector<std::thread> clients;
  for (int c = 0; c < kClients; ++c) {
    clients.emplace_back([&, c] {
      httplib::Client client("127.0.0.1", service.port());
      client.set_keep_alive(true);
      client.set_tcp_nodelay(true);
      auto& ids = per_client[c];
      ids.reserve(kPerClient);
      for (int i = 0; i < kPerClient; ++i) {
        auto res = client.Get("/id");
        if (!res) {
          ++transport_errors;
          continue;
        }
        if (res->status >= 500) {
          ++server_errors;
          continue;
        }
        ids.push_back(std::stoull(res->body));
      }
    });
  }
  for (auto& t : clients) t.join();
  service.stop();

  std::uint64_t order_violations = 0;
  std::vector<std::uint64_t> all;
  for (const auto& ids : per_client) {
    for (std::size_t i = 1; i < ids.size(); ++i) {
      if (ids[i] <= ids[i - 1]) ++order_violations;
    }
    all.insert(all.end(), ids.begin(), ids.end());
  }
  std::sort(all.begin(), all.end());
  const auto distinct =
      static_cast<std::size_t>(std::unique(all.begin(), all.end()) - all.begin());
  const double took = seconds_since(start);
  return {all.size() == kClients * kPerClient && distinct == all.size() &&
              order_violations == 0 && server_errors == 0 && transport_errors == 0 && took < 60,
          std::to_string(distinct) + " distinct of " + std::to_string(all.size()) +
              ", per-client order violations=" + std::to_string(order_violations) +
              ", 5xx=" + std::to_string(server_errors.load()) +
              ", transport errors=" + std::to_string(transport_errors.load()) + " in " +
              fixed(took, 1) + "s"};
}

Outcome churn_collision_freedom() {
  const auto start = Clock::now();
  const ChurnScenario s =
      load_scenario(std::string(FLAKELESS_SCENARIO_DIR) + "/churn_acceptance.scn");
  const SimulationReport r = run_simulation(s);
  const double took = seconds_since(start);
  return {s.initial_nodes >= 100 && r.churn_events >= 1000 && s.ip_reuse_cooldown_ms >= 1 &&
              r.total_ids >= 5'000'000 && r.collision_count == 0 &&
              r.per_node_monotonicity_violations == 0 && r.cross_incarnation_violations == 0 &&
              took < 60,
          "nodes=" + std::to_string(s.initial_nodes) +
              " churn_events=" + std::to_string(r.churn_events) +
              " reused=" + std::to_string(r.addresses_reused) +
              " ids=" + std::to_string(r.total_ids) +
              " collisions=" + std::to_string(r.collision_count) +
              " monotonicity=" + std::to_string(r.per_node_monotonicity_violations) + " in " +
              fixed(took, 1) + "s"};
}

int cli_exit(const std::string& args) {
  const std::string cmd = "'" + std::string(FLAKELESS_CLI_PATH) + "' " + args + " >/dev/null 2>&1";
  const int status = std::system(cmd.c_str());
  return WIFEXITED(status) ? WEXITSTATUS(status) : -1;
}

Outcome negative_sensitivity() {
  const auto start = Clock::now();
  const std::string path = std::string(FLAKELESS_SCENARIO_DIR) + "/bad_ip_reuse.scn";
  const SimulationReport r = run_simulation(load_scenario(path));
  const int code = cli_exit("simulate --scenario '" + path + "'");
  const double took = seconds_since(start);
  return {r.collision_count > 0 && code == 4 && took < 10,
          "collisions=" + std::to_string(r.collision_count) + " of " +
              std::to_string(r.total_ids) + " ids, simulate exit=" + std::to_string(code)};
}

Outcome regression_boundary() {
  auto attempt = [](std::uint64_t offset, std::uint64_t& waits) {
    auto clock = std::make_shared<VirtualClock>(kDefaultEpochMillis + 1000);
    Generator gen(GeneratorConfig{}, clock);
    const std::uint64_t first = gen.next_id();
    clock->regress(offset);
    try {
      const std::uint64_t second = gen.next_id();
      waits = gen.stats().regression_waits;
      return second > first ? std::string("ok") : std::string("not increasing");
    } catch (const Error& e) {
      waits = gen.stats().regression_waits;
      return std::string(error_name(e.code()));
    }
  };
  std::uint64_t waits10 = 0;
  std::uint64_t waits11 = 0;
  const std::string at10 = attempt(10, waits10);
  const std::string at11 = attempt(11, waits11);
  return {at10 == "ok" && waits10 == 1 && at11 == "clock_moved_backwards",
          "10ms -> " + at10 + " (regression_waits=" + std::to_string(waits10) + "), 11ms -> " +
              at11};
}

Outcome sequence_overflow() {
  auto clock = std::make_shared<VirtualClock>(kDefaultEpochMillis + 500);
  clock->set_auto_advance(true);
  Generator gen(GeneratorConfig{}, clock);
  const BitLayout l = standard_layout();
  std::vector<IdParts> parts;
  for (int i = 0; i < 65; ++i) parts.push_back(decompose(l, gen.next_id()));
  bool first64 = true;
  for (std::uint64_t i = 0; i < 64; ++i) {
    first64 = first64 && parts[i].timestamp_offset == 500 && parts[i].sequence == i;
  }
  const IdParts& last = parts[64];
  return {first64 && last.timestamp_offset == 501 && last.sequence == 0,
          "ids 0-63 at ms 500 seq 0-63: " + std::string(first64 ? "yes" : "no") +
              ", 65th at ms " + std::to_string(last.timestamp_offset) + " seq " +
              std::to_string(last.sequence)};
}

Outcome lifespan() {
  const double standard = lifespan_years(standard_layout());
  const double perf = lifespan_years(performance_layout());
  return {std::abs(standard - 69.7) <= 0.1 && std::abs(perf - 34.8) <= 0.1,
          "41 bits=" + fixed(standard, 3) + "y 40 bits=" + fixed(perf, 3) + "y"};
}

Outcome resolver_matrix() {
  const auto start = Clock::now();
  testing::MockMetadataServer server;
  if (server.start() <= 0) return {false, "mock metadata server failed to start"};
  HttpMetadataClient client;

  ResolverConfig base;
  base.metadata_timeout = std::chrono::milliseconds(1000);
  base.endpoints.gcp_ip_url = server.gcp_url();
  base.endpoints.azure_ip_url = server.azure_url();
  base.env["ECS_CONTAINER_METADATA_URI_V4"] = server.ecs_url();
  base.interfaces = [] {
    return std::vector<InterfaceAddress>{{"lo", "127.0.0.1", true, true, true},
                                         {"eth0", "192.168.1.7", true, false, true}};
  };
  const testing::MockMetadataServer::Options mock;

  struct Case {
    const char* var;
    Provider expected;
    std::string ip;
  };
  const std::vector<Case> cases = {{"AWS_EXECUTION_ENV", Provider::kAwsEcs, mock.aws_ip},
                                   {"K_SERVICE", Provider::kGcpCloudRunOrGke, mock.gcp_ip},
                                   {"AZURE_HTTP_USER_AGENT", Provider::kAzureAks, mock.azure_ip},
                                   {nullptr, Provider::kGenericFallback, "192.168.1.7"}};
  bool ok = true;
  std::string detail;
  for (const Case& c : cases) {
    ResolverConfig config = base;
    if (c.var) config.env[c.var] = "1";
    try {
      const MachineIdentity id = resolve_machine_identity(config, client);
      const bool match =
          id.provider == c.expected && id.machine_id == worker_id_from_ip(c.ip) &&
          !id.fell_back_from;
      ok = ok && match;
      detail += std::string(provider_name(id.provider)) + "=" + std::to_string(id.machine_id) +
                (match ? " " : "(mismatch) ");
    } catch (const Error& e) {
      ok = false;
      detail += std::string(provider_name(c.expected)) + " threw " + e.what() + " ";
    }
  }
  server.stop();

  std::bitset<65536> seen;
  bool injective = true;
  for (int hi = 0; hi < 256; ++hi) {
    for (int lo = 0; lo < 256; ++lo) {
      const auto id =
          worker_id_from_ip("10.0." + std::to_string(hi) + "." + std::to_string(lo));
      injective = injective && !seen.test(id);
      seen.set(id);
    }
  }
  const double took = seconds_since(start);
  return {ok && injective && seen.all() && took < 30,
          detail + "| injective over 65536 pairs: " + (injective && seen.all() ? "yes" : "no")};
}

Outcome round_trips() {
  const auto start = Clock::now();
  const std::vector<BitLayout> layouts = {standard_layout(), performance_layout(),
                                          region_layout()};
  std::mt19937_64 rng(20240101);
  std::uint64_t mismatches = 0;
  constexpr int kTrials = 1'000'000;
  for (int i = 0; i < kTrials; ++i) {
    const BitLayout& l = layouts[static_cast<std::size_t>(i) % layouts.size()];
    const IdParts p{rng() & l.timestamp_mask(), rng() & l.region_mask(),
                    static_cast<std::uint16_t>(rng() & l.machine_mask()),
                    rng() & l.sequence_mask()};
    const std::uint64_t id = compose(l, p);
    // Arithmetic re-derivation independent of compose's shifts.
    const unsigned __int128 expected =
        static_cast<unsigned __int128>(p.timestamp_offset) *
            (static_cast<unsigned __int128>(1) << l.timestamp_shift()) +
        static_cast<unsigned __int128>(p.region) * (std::uint64_t{1} << l.region_shift()) +
        static_cast<unsigned __int128>(p.machine_id) * (std::uint64_t{1} << l.machine_shift()) +
        p.sequence;
    if (id != expected || !(decompose(l, id) == p)) ++mismatches;
  }
  const double took = seconds_since(start);
  return {mismatches == 0 && took < 30,
          std::to_string(kTrials) + " round trips, mismatches=" + std::to_string(mismatches) +
              " in " + fixed(took, 2) + "s"};
}

}  // namespace

int main() {
  const std::vector<std::pair<std::string, std::function<Outcome()>>> criteria = {
      {"virtual throughput ceiling", virtual_ceiling},
      {"wall-clock microbenchmark", wall_bench},
      {"service load", service_load},
      {"collision freedom under churn", churn_collision_freedom},
      {"negative sensitivity", negative_sensitivity},
      {"clock regression boundary", regression_boundary},
      {"sequence overflow", sequence_overflow},
      {"lifespan", lifespan},
      {"identity resolution matrix", resolver_matrix},
      {"round trips", round_trips},
  };
  int failures = 0;
  for (std::size_t i = 0; i < criteria.size(); ++i) {
    Outcome outcome;
    try {
      outcome = criteria[i].second();
    } catch (const std::exception& e) {
      outcome = {false, std::string("threw: ") + e.what()};
    }
    if (!outcome.pass) ++failures;
    std::cout << (outcome.pass ? "PASS" : "FAIL") << " " << (i + 1) << " " << criteria[i].first
              << ": " << outcome.detail << std::endl;
  }
  std::cout << (criteria.size() - failures) << "/" << criteria.size() << " criteria passed"
            << std::endl;
  return failures == 0 ? 0 : 1;
}
