#pragma once

#include <algorithm>
#include <atomic>
#include <barrier>
#include <chrono>
#include <cstdint>
#include <latch>
#include <memory>
#include <mutex>
#include <optional>
#include <string>
#include <thread>
#include <vector>

#include "flakeless/bit_layout.hpp"
#include "flakeless/clock.hpp"
#include "flakeless/error.hpp"
#include "flakeless/generator.hpp"
#include "json.hpp"

namespace flakeless {

enum class BenchMode { kVirtual, kWall };

struct BenchOptions {
  BitLayout layout = standard_layout();
  std::size_t threads = 1;
  std::uint64_t duration_seconds = 1;
  BenchMode mode = BenchMode::kVirtual;
  std::uint16_t machine_id = 0;
  std::uint64_t epoch_millis = kDefaultEpochMillis;
};

struct BenchReport {
  BenchMode mode = BenchMode::kVirtual;
  std::size_t threads = 0;
  std::uint64_t total_ids = 0;
  double elapsed_seconds = 0;
  double achieved_tps = 0;
  std::uint64_t ceiling_tps = 0;
  double utilization_percent = 0;
  std::uint64_t duplicates = 0;
  std::uint64_t max_ids_per_ms = 0;
  std::uint64_t overflow_waits = 0;
};

namespace detail {

inline void audit_bench_ids(const BitLayout& layout,
                            std::vector<std::vector<std::uint64_t>>& per_thread,
                            BenchReport& report) {
  std::vector<std::uint64_t> all;
  for (auto& ids : per_thread) {
    all.insert(all.end(), ids.begin(), ids.end());
    ids.clear();
    ids.shrink_to_fit();
  }
  std::sort(all.begin(), all.end());
  report.total_ids = all.size();
  report.duplicates =
      all.size() - static_cast<std::uint64_t>(std::unique(all.begin(), all.end()) - all.begin());
  all.erase(std::unique(all.begin(), all.end()), all.end());

  // Sorted IDs group by timestamp because it is the most significant field.
  std::uint64_t run = 0;
  std::uint64_t current = 0;
  for (std::size_t i = 0; i < all.size(); ++i) {
    const std::uint64_t ts = all[i] >> layout.timestamp_shift();
    run = (i > 0 && ts == current) ? run + 1 : 1;
    current = ts;
    report.max_ids_per_ms = std::max(report.max_ids_per_ms, run);
  }
}

}  // namespace detail

/// Virtual mode: threads share one generator on a VirtualClock that only
/// advances, by exactly 1 ms, once every thread has hit sequence exhaustion.
/// The count is therefore exact: duration * 1000 * 2^sequence_bits.
///
/// Wall mode: threads hammer one generator on the system clock for the given
/// duration; throughput is whatever the hardware achieves.
inline BenchReport run_bench(const BenchOptions& options) {
  if (options.threads == 0) throw Error(ErrorCode::kInvalidArgument, "threads must be >= 1");
  if (options.duration_seconds == 0) {
    throw Error(ErrorCode::kInvalidArgument, "duration must be >= 1 second");
  }

  BenchReport report;
  report.mode = options.mode;
  report.threads = options.threads;
  report.ceiling_tps = max_ids_per_second(options.layout);

  GeneratorConfig config;
  config.layout = options.layout;
  config.machine_id = options.machine_id;
  config.epoch_millis = options.epoch_millis;

  std::vector<std::vector<std::uint64_t>> per_thread(options.threads);
  std::vector<std::thread> workers;
  workers.reserve(options.threads);

  if (options.mode == BenchMode::kVirtual) {
    auto clock = std::make_shared<VirtualClock>(options.epoch_millis + 1);
    Generator generator(config, clock);
    const std::uint64_t total_ms = options.duration_seconds * 1000;
    std::uint64_t ticks = 0;
    std::atomic<bool> done{false};
    auto on_tick = [&]() noexcept {
      if (++ticks >= total_ms) {
        done.store(true);
      } else {
        clock->advance(1);
      }
    };
    std::barrier sync(static_cast<std::ptrdiff_t>(options.threads), on_tick);

    for (std::size_t t = 0; t < options.threads; ++t) {
      workers.emplace_back([&, t] {
        auto& ids = per_thread[t];
        while (!done.load()) {
          try {
            ids.push_back(generator.next_id());
          } catch (const Error& e) {
            if (e.code() != ErrorCode::kSimulationStall) throw;
            sync.arrive_and_wait();
          }
        }
      });
    }
    for (auto& w : workers) w.join();
    report.elapsed_seconds = static_cast<double>(options.duration_seconds);
    report.overflow_waits = generator.stats().overflow_waits;
  } else {
    auto clock = std::make_shared<WallClock>();
    Generator generator(config, clock);
    std::latch start(static_cast<std::ptrdiff_t>(options.threads) + 1);
    std::atomic<bool> stop{false};
    std::mutex failure_mutex;
    std::optional<Error> failure;

    for (std::size_t t = 0; t < options.threads; ++t) {
      workers.emplace_back([&, t] {
        auto& ids = per_thread[t];
        ids.reserve(1 << 14);
        start.arrive_and_wait();
        try {
          while (!stop.load(std::memory_order_relaxed)) ids.push_back(generator.next_id());
        } catch (const Error& e) {
          std::lock_guard lock(failure_mutex);
          if (!failure) failure = e;
          stop.store(true);
        }
      });
    }
    const auto began = std::chrono::steady_clock::now();
    start.arrive_and_wait();
    std::this_thread::sleep_for(std::chrono::seconds(options.duration_seconds));
    stop.store(true);
    for (auto& w : workers) w.join();
    if (failure) throw *failure;
    report.elapsed_seconds =
        std::chrono::duration<double>(std::chrono::steady_clock::now() - began).count();
    report.overflow_waits = generator.stats().overflow_waits;
  }

  detail::audit_bench_ids(options.layout, per_thread, report);
  report.achieved_tps = static_cast<double>(report.total_ids) / report.elapsed_seconds;
  report.utilization_percent =
      100.0 * report.achieved_tps / static_cast<double>(report.ceiling_tps);
  return report;
}

inline nlohmann::ordered_json bench_json(const BenchReport& r) {
  nlohmann::ordered_json j;
  j["mode"] = r.mode == BenchMode::kVirtual ? "virtual" : "wall";
  j["threads"] = r.threads;
  j["total_ids"] = r.total_ids;
  j["elapsed_seconds"] = r.elapsed_seconds;
  j["achieved_tps"] = r.achieved_tps;
  j["ceiling_tps"] = r.ceiling_tps;
  j["utilization_percent"] = r.utilization_percent;
  j["duplicates"] = r.duplicates;
  j["max_ids_per_ms"] = r.max_ids_per_ms;
  j["overflow_waits"] = r.overflow_waits;
  return j;
}

}  // namespace flakeless
