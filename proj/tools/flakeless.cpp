// flakeless: generate, decode and serve IP-derived 64-bit IDs.
//
// Exit codes: 0 ok, 1 usage or input error, 2 identity resolution failure,
// 3 clock or correctness failure, 4 simulation found violations.

#include <pthread.h>
#include <signal.h>

#include <charconv>
#include <cstdint>
#include <iostream>
#include <memory>
#include <optional>
#include <string>
#include <thread>

#include "CLI11.hpp"
#include "flakeless/bench.hpp"
#include "flakeless/bit_layout.hpp"
#include "flakeless/clock.hpp"
#include "flakeless/error.hpp"
#include "flakeless/generator.hpp"
#include "flakeless/identity.hpp"
#include "flakeless/iso8601.hpp"
#include "flakeless/metadata_http.hpp"
#include "flakeless/scenario.hpp"
#include "flakeless/service.hpp"
#include "flakeless/simulator.hpp"
#include "json.hpp"

namespace {

using namespace flakeless;

constexpr int kExitOk = 0;
constexpr int kExitUsage = 1;
constexpr int kExitResolution = 2;
constexpr int kExitClock = 3;
constexpr int kExitViolation = 4;

struct SharedOptions {
  std::string layout = "standard";
  std::string epoch = "2024-01-01T00:00:00Z";
  std::optional<unsigned> machine_id;
  std::string output = "text";

  bool ndjson() const { return output == "ndjson"; }
};

struct ResolveOptions {
  bool strict = false;
  std::optional<std::string> gcp_url;
  std::optional<std::string> azure_url;
  unsigned timeout_ms = 1000;
  unsigned retries = 2;
};

class UsageError : public std::runtime_error {
  using std::runtime_error::runtime_error;
};

BitLayout layout_from(const SharedOptions& shared) {
  try {
    return parse_layout(shared.layout);
  } catch (const Error& e) {
    throw UsageError(e.what());
  }
}

std::uint64_t epoch_from(const SharedOptions& shared) {
  try {
    return parse_iso8601_utc(shared.epoch);
  } catch (const Error& e) {
    throw UsageError(e.what());
  }
}

MachineIdentity resolve_identity(const SharedOptions& shared, const ResolveOptions& options) {
  ResolverConfig config = ResolverConfig::from_env(capture_environment());
  if (shared.machine_id) config.override_machine_id = static_cast<std::uint16_t>(*shared.machine_id);
  if (options.strict) config.strict = true;
  if (options.gcp_url) config.endpoints.gcp_ip_url = *options.gcp_url;
  if (options.azure_url) config.endpoints.azure_ip_url = *options.azure_url;
  config.metadata_timeout = std::chrono::milliseconds(options.timeout_ms);
  config.metadata_retries = options.retries;
  HttpMetadataClient client;
  return resolve_machine_identity(config, client);
}

nlohmann::ordered_json identity_json(const MachineIdentity& identity) {
  nlohmann::ordered_json j;
  j["provider"] = provider_name(identity.provider);
  j["source_ip"] = identity.source_ip;
  j["machine_id"] = identity.machine_id;
  j["derivation"] = derivation_name(identity.derivation);
  if (identity.fell_back_from) j["fell_back_from"] = provider_name(*identity.fell_back_from);
  return j;
}

void print_record(const nlohmann::ordered_json& record, bool ndjson) {
  if (ndjson) {
    std::cout << record.dump() << '\n';
    return;
  }
  for (const auto& [key, value] : record.items()) {
    std::cout << key << ": " << (value.is_string() ? value.get<std::string>() : value.dump())
              << '\n';
  }
}

std::shared_ptr<Generator> make_generator(const SharedOptions& shared,
                                          const MachineIdentity& identity,
                                          std::size_t max_batch = kDefaultMaxBatch) {
  GeneratorConfig config;
  config.layout = layout_from(shared);
  config.epoch_millis = epoch_from(shared);
  config.machine_id = identity.machine_id;
  config.max_batch = max_batch;
  return std::make_shared<Generator>(config, std::make_shared<WallClock>());
}

int run_generate(const SharedOptions& shared, const ResolveOptions& resolve, std::uint64_t count) {
  const MachineIdentity identity = resolve_identity(shared, resolve);
  auto generator = make_generator(shared, identity);
  std::string out;
  for (std::uint64_t i = 0; i < count; ++i) {
    const std::uint64_t id = generator->next_id();
    if (shared.ndjson()) {
      out += "{\"id\":" + std::to_string(id) + "}\n";
    } else {
      out += std::to_string(id) + '\n';
    }
    if (out.size() > (1 << 16)) {
      std::cout << out;
      out.clear();
    }
  }
  std::cout << out << std::flush;
  return kExitOk;
}

int run_decode(const SharedOptions& shared, const std::string& text, bool salted) {
  std::uint64_t id = 0;
  auto [ptr, ec] = std::from_chars(text.data(), text.data() + text.size(), id);
  if (text.empty() || ec != std::errc{} || ptr != text.data() + text.size()) {
    throw UsageError("'" + text + "' is not an unsigned 64-bit decimal integer");
  }
  const BitLayout layout = layout_from(shared);
  const std::uint64_t epoch = epoch_from(shared);
  IdParts parts;
  try {
    parts = decompose(layout, id);
  } catch (const Error& e) {
    throw UsageError(e.what());
  }
  nlohmann::ordered_json j;
  j["id"] = id;
  j["layout"] = layout.to_string();
  j["timestamp_offset_ms"] = parts.timestamp_offset;
  j["absolute_time"] = format_iso8601_utc(epoch + parts.timestamp_offset);
  j["region"] = parts.region;
  j["machine_id"] = parts.machine_id;
  if (!salted) {
    j["ip_suffix"] =
        std::to_string(parts.machine_id >> 8) + "." + std::to_string(parts.machine_id & 0xFF);
  }
  j["sequence"] = parts.sequence;
  print_record(j, shared.ndjson());
  return kExitOk;
}

int run_resolve(const SharedOptions& shared, const ResolveOptions& resolve) {
  print_record(identity_json(resolve_identity(shared, resolve)), shared.ndjson());
  return kExitOk;
}

int run_bench_command(const SharedOptions& shared, std::size_t threads, std::uint64_t seconds,
                      const std::string& mode) {
  BenchOptions options;
  options.layout = layout_from(shared);
  options.epoch_millis = epoch_from(shared);
  options.machine_id = static_cast<std::uint16_t>(shared.machine_id.value_or(0));
  options.threads = threads;
  options.duration_seconds = seconds;
  options.mode = mode == "wall" ? BenchMode::kWall : BenchMode::kVirtual;
  const BenchReport report = run_bench(options);
  print_record(bench_json(report), shared.ndjson());
  if (report.duplicates > 0) {
    std::cerr << "error: " << report.duplicates << " duplicate IDs issued\n";
    return kExitClock;
  }
  return kExitOk;
}

int run_simulate(const SharedOptions& shared, const std::string& path, bool show_log) {
  ChurnScenario scenario;
  SimulationReport report;
  try {
    scenario = load_scenario(path);
    report = run_simulation(scenario);
  } catch (const Error& e) {
    if (e.code() == ErrorCode::kScenarioInvalid || e.code() == ErrorCode::kCapacityExhausted) {
      throw UsageError(e.what());
    }
    throw;
  }
  if (show_log) {
    for (const auto& line : report.event_log) std::cout << "# " << line << '\n';
  }
  std::cout << (shared.ndjson() ? render_report_ndjson(report) : render_report_text(report));
  std::cout.flush();
  return report.violations() > 0 ? kExitViolation : kExitOk;
}

int run_serve(const SharedOptions& shared, const ResolveOptions& resolve, ServiceConfig service,
              std::size_t batch_cap, bool quiet) {
  if (service.port < 1 || service.port > 65535) {
    throw UsageError("--port must be in [1, 65535]");
  }
  const MachineIdentity identity = resolve_identity(shared, resolve);
  auto generator = make_generator(shared, identity, batch_cap);
  if (!quiet) service.access_log = &std::cout;

  // Block termination signals here so the listener threads inherit the mask
  // and a dedicated thread can sigwait() for them.
  sigset_t signals;
  sigemptyset(&signals);
  sigaddset(&signals, SIGINT);
  sigaddset(&signals, SIGTERM);
  pthread_sigmask(SIG_BLOCK, &signals, nullptr);

  IdService server(service, generator, identity);
  if (!server.bind()) {
    std::cerr << "error: cannot bind " << service.bind_address << ":" << service.port << '\n';
    return kExitUsage;
  }
  std::cerr << "serving machine_id " << identity.machine_id << " ("
            << provider_name(identity.provider) << ") on " << service.bind_address << ":"
            << server.port() << '\n';

  std::thread waiter([&] {
    int sig = 0;
    sigwait(&signals, &sig);
    server.http().stop();
  });
  waiter.detach();
  server.serve();
  return kExitOk;
}

int exit_code_for(const Error& e) {
  switch (e.code()) {
    case ErrorCode::kResolutionFailed:
      return kExitResolution;
    case ErrorCode::kClockMovedBackwards:
    case ErrorCode::kTimestampExhausted:
    case ErrorCode::kSimulationStall:
      return kExitClock;
    case ErrorCode::kInvalidConfig:
    case ErrorCode::kInvalidArgument:
    case ErrorCode::kInvalidLayout:
      return kExitUsage;
    default:
      return kExitClock;
  }
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"flakeless: 64-bit k-ordered IDs with machine ids derived from private IPv4"};
  app.require_subcommand(1);
  app.fallthrough();

  SharedOptions shared;
  ResolveOptions resolve;
  app.add_option("--layout", shared.layout, "standard | performance | region | t:r:m:s")
      ->capture_default_str();
  app.add_option("--epoch", shared.epoch, "custom epoch, ISO-8601 UTC")->capture_default_str();
  app.add_option("--machine-id", shared.machine_id, "explicit machine id, skips resolution")
      ->check(CLI::Range(0u, 65535u));
  app.add_option("--output", shared.output, "text | ndjson")
      ->check(CLI::IsMember({"text", "ndjson"}))
      ->capture_default_str();

  auto add_resolve_flags = [&](CLI::App* sub) {
    sub->add_option("--gcp-metadata-url", resolve.gcp_url, "override the GCP metadata URL");
    sub->add_option("--azure-metadata-url", resolve.azure_url, "override the Azure IMDS URL");
    sub->add_option("--metadata-timeout-ms", resolve.timeout_ms)->capture_default_str();
    sub->add_option("--metadata-retries", resolve.retries)->capture_default_str();
  };

  std::uint64_t count = 1;
  auto* generate = app.add_subcommand("generate", "print N new IDs, one per line");
  generate->add_option("--count,-n", count, "number of IDs")
      ->check(CLI::PositiveNumber)
      ->capture_default_str();
  add_resolve_flags(generate);

  std::string decode_input;
  bool decode_salted = false;
  auto* decode = app.add_subcommand("decode", "break an ID into its fields");
  decode->add_option("id", decode_input, "decimal ID")->required();
  decode->add_flag("--salted", decode_salted, "machine ids are salted; omit the IP suffix");

  auto* resolve_cmd = app.add_subcommand("resolve", "show the machine identity this host gets");
  resolve_cmd->add_flag("--strict", resolve.strict, "fail instead of falling back to interfaces");
  add_resolve_flags(resolve_cmd);

  std::size_t threads = 1;
  std::uint64_t seconds = 1;
  std::string mode = "virtual";
  auto* bench = app.add_subcommand("bench", "measure issuance throughput");
  bench->add_option("--threads,-t", threads)->check(CLI::PositiveNumber)->capture_default_str();
  bench->add_option("--duration-seconds,-d", seconds)
      ->check(CLI::PositiveNumber)
      ->capture_default_str();
  bench->add_option("--mode", mode, "virtual (exact ceiling) | wall (real clock)")
      ->check(CLI::IsMember({"virtual", "wall"}))
      ->capture_default_str();

  std::string scenario_path;
  bool show_log = false;
  auto* simulate = app.add_subcommand("simulate", "run a churn scenario and audit every ID");
  simulate->add_option("--scenario", scenario_path, "scenario file")->required();
  simulate->add_flag("--event-log", show_log, "print the event log before the report");

  ServiceConfig service;
  std::size_t batch_cap = kDefaultMaxBatch;
  bool quiet = false;
  auto* serve = app.add_subcommand("serve", "run the HTTP issuing service");
  serve->add_option("--bind", service.bind_address)->capture_default_str();
  serve->add_option("--port,-p", service.port)->capture_default_str();
  serve->add_option("--workers", service.worker_threads)
      ->check(CLI::PositiveNumber)
      ->capture_default_str();
  serve->add_option("--batch-cap", batch_cap)->check(CLI::PositiveNumber)->capture_default_str();
  serve->add_flag("--expose-source-ip", service.expose_source_ip, "include source_ip in /stats");
  serve->add_flag("--quiet", quiet, "no access log");
  serve->add_flag("--strict", resolve.strict, "fail instead of falling back to interfaces");
  add_resolve_flags(serve);

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::CallForAllHelp& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    app.exit(e);
    return kExitUsage;
  }

  try {
    if (*generate) return run_generate(shared, resolve, count);
    if (*decode) return run_decode(shared, decode_input, decode_salted);
    if (*resolve_cmd) return run_resolve(shared, resolve);
    if (*bench) return run_bench_command(shared, threads, seconds, mode);
    if (*simulate) return run_simulate(shared, scenario_path, show_log);
    if (*serve) return run_serve(shared, resolve, service, batch_cap, quiet);
  } catch (const UsageError& e) {
    std::cerr << "error: " << e.what() << '\n';
    return kExitUsage;
  } catch (const Error& e) {
    std::cerr << "error: " << error_name(e.code()) << ": " << e.what() << '\n';
    return exit_code_for(e);
  }
  return kExitUsage;
}
