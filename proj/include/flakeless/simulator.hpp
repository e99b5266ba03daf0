#pragma once

#include <algorithm>
#include <cstdint>
#include <cstdio>
#include <map>
#include <memory>
#include <optional>
#include <set>
#include <span>
#include <string>
#include <vector>

#include "flakeless/bit_layout.hpp"
#include "flakeless/clock.hpp"
#include "flakeless/error.hpp"
#include "flakeless/fnv1a.hpp"
#include "flakeless/generator.hpp"
#include "flakeless/identity.hpp"
#include "flakeless/scenario.hpp"
#include "json.hpp"

namespace flakeless {

// ---------------------------------------------------------------------------
// Auditing

/// Everything one node incarnation issued, in issuance order.
struct IssuanceStream {
  std::uint64_t incarnation = 0;
  std::string ip;
  std::vector<std::uint64_t> ids;
};

struct AuditSummary {
  std::uint64_t total_ids = 0;
  std::uint64_t distinct_ids = 0;
  std::uint64_t duplicate_count = 0;  // total_ids - distinct_ids
  std::uint64_t monotonicity_violations = 0;
  // Later incarnation on an address whose first ID is not above the previous
  // incarnation's last ID.
  std::uint64_t cross_incarnation_violations = 0;
};

/// Exact audit: duplicates by sorting every issued ID, not by sampling.
/// Streams sharing an address are compared in incarnation order.
inline AuditSummary audit_ids(std::span<const IssuanceStream> streams) {
  AuditSummary summary;
  std::vector<std::uint64_t> all;
  std::size_t total = 0;
  for (const auto& s : streams) total += s.ids.size();
  all.reserve(total);

  std::map<std::string, std::vector<const IssuanceStream*>> by_ip;
  for (const auto& s : streams) {
    all.insert(all.end(), s.ids.begin(), s.ids.end());
    for (std::size_t i = 1; i < s.ids.size(); ++i) {
      if (s.ids[i] <= s.ids[i - 1]) ++summary.monotonicity_violations;
    }
    if (!s.ip.empty()) by_ip[s.ip].push_back(&s);
  }

  std::sort(all.begin(), all.end());
  summary.total_ids = all.size();
  summary.distinct_ids =
      static_cast<std::uint64_t>(std::unique(all.begin(), all.end()) - all.begin());
  summary.duplicate_count = summary.total_ids - summary.distinct_ids;

  for (auto& [ip, group] : by_ip) {
    std::stable_sort(group.begin(), group.end(), [](const auto* a, const auto* b) {
      return a->incarnation < b->incarnation;
    });
    const IssuanceStream* previous = nullptr;
    for (const auto* s : group) {
      if (s->ids.empty()) continue;
      if (previous && s->ids.front() <= previous->ids.back()) {
        ++summary.cross_incarnation_violations;
      }
      previous = s;
    }
  }
  return summary;
}

// ---------------------------------------------------------------------------
// Simulation

enum class RegressionOutcome { kTolerated, kFatal, kPending };

constexpr std::string_view regression_outcome_name(RegressionOutcome o) noexcept {
  switch (o) {
    case RegressionOutcome::kTolerated: return "tolerated";
    case RegressionOutcome::kFatal: return "fatal";
    case RegressionOutcome::kPending: return "pending";
  }
  return "unknown";
}

struct SimulationReport {
  std::uint64_t total_ids = 0;
  std::uint64_t distinct_ids = 0;
  std::uint64_t collision_count = 0;
  std::uint64_t per_node_monotonicity_violations = 0;
  std::uint64_t cross_incarnation_violations = 0;
  std::uint64_t blocked_milliseconds = 0;  // node-ms lost to sequence exhaustion
  std::uint64_t regression_wait_ms = 0;    // node-ms spent waiting out regressions
  std::uint64_t regressions_tolerated = 0;
  std::uint64_t regressions_fatal = 0;
  std::uint64_t max_ids_per_node_ms = 0;
  std::uint64_t nodes_spawned = 0;
  std::uint64_t nodes_terminated = 0;
  std::uint64_t churn_events = 0;
  std::uint64_t addresses_reused = 0;
  std::uint64_t in_flight_dropped = 0;  // IDs whose node died while they were pending
  std::uint64_t event_log_digest = 0;   // FNV-1a 64 over the newline-joined log
  std::vector<std::string> event_log;

  std::uint64_t violations() const noexcept {
    return collision_count + per_node_monotonicity_violations + cross_incarnation_violations;
  }
};

namespace detail {

/// A node's view of the shared simulated clock.
///
/// Reads as shared + skew + pending. Blocking calls cannot stall a
/// single-threaded simulation, so waits and sleeps are booked as `pending`
/// time: the generator sees the clock it would see after the wait, and the
/// simulator then parks the node until the shared clock catches up.
class NodeClock final : public ClockSource {
 public:
  explicit NodeClock(const std::uint64_t* shared, std::int64_t skew = 0)
      : shared_(shared), skew_(skew) {}

  std::uint64_t now_millis() const override {
    return static_cast<std::uint64_t>(static_cast<std::int64_t>(*shared_) + skew_) + pending_;
  }

  std::uint64_t wait_until_after(std::uint64_t last) override {
    const std::uint64_t now = now_millis();
    if (now > last) return now;
    pending_ += last + 1 - now;
    return last + 1;
  }

  void sleep_for(std::uint64_t millis) override {
    pending_ += millis;
    slept_ += millis;
  }

  std::uint64_t take_pending() noexcept { return std::exchange(pending_, 0); }
  std::uint64_t take_slept() noexcept { return std::exchange(slept_, 0); }

  std::int64_t skew() const noexcept { return skew_; }
  void set_skew(std::int64_t skew) noexcept { skew_ = skew; }

 private:
  const std::uint64_t* shared_;
  std::int64_t skew_;
  std::uint64_t pending_ = 0;
  std::uint64_t slept_ = 0;
};

}  // namespace detail

/// Deterministic churn simulation over one shared virtual clock.
///
/// Each simulated millisecond runs three phases: pending IDs whose wait has
/// elapsed are delivered, events scheduled for that millisecond are applied,
/// then every live node requests `demand` IDs. Nodes are visited in
/// incarnation order and addresses are handed out lowest-free first.
class ChurnSimulator {
 public:
  /// Shared clock starts one day after the generator epoch so that lagging
  /// node clocks in negative scenarios stay after the epoch.
  static constexpr std::uint64_t kStartOffsetMs = 86'400'000;

  explicit ChurnSimulator(ChurnScenario scenario)
      : scenario_(std::move(scenario)), rng_(scenario_.seed) {
    validate_scenario(scenario_);
    shared_now_ = kDefaultEpochMillis + kStartOffsetMs;
  }

  SimulationReport run() {
    for (std::uint64_t i = 0; i < scenario_.initial_nodes; ++i) spawn(0, false);

    std::size_t next_event = 0;
    const auto& events = scenario_.churn_events;
    for (std::uint64_t t = 0; t <= scenario_.duration_ms; ++t) {
      shared_now_ = kDefaultEpochMillis + kStartOffsetMs + t;
      deliver_pending();
      while (next_event < events.size() && events[next_event].at_ms == t) {
        apply(events[next_event++], t);
      }
      if (t < scenario_.duration_ms) issue_round(t);
    }
    return finish();
  }

  const std::vector<IssuanceStream>& streams() const noexcept { return streams_; }

 private:
  struct Node {
    std::uint64_t incarnation = 0;
    std::uint32_t host_index = 0;
    std::shared_ptr<detail::NodeClock> clock;
    std::unique_ptr<Generator> generator;
    std::size_t stream = 0;
    bool halted = false;
    bool issued_any = false;
    bool drill_pending = false;
    std::optional<std::uint64_t> in_flight;
    std::uint64_t parked_until = 0;  // shared-clock ms

    bool parked() const noexcept { return in_flight.has_value(); }
  };

  /// Steps `incarnation`'s clock back to `offset_ms` before its latest
  /// issued timestamp and, if the node is free to issue, probes it once so
  /// the outcome is known immediately. A parked node resolves the drill at
  /// its next issuance.
  RegressionOutcome regression_drill(std::uint64_t incarnation, std::uint64_t offset_ms,
                                     std::uint64_t t) {
    Node& node = live_node(incarnation);
    const std::uint64_t reference =
        node.issued_any ? node.generator->stats().last_time : node.clock->now_millis();
    const std::int64_t target = static_cast<std::int64_t>(reference) -
                                static_cast<std::int64_t>(offset_ms);
    node.clock->set_skew(target - static_cast<std::int64_t>(shared_now_));
    node.drill_pending = true;
    log(t, "regress node=" + std::to_string(incarnation) + " offset=" +
               std::to_string(offset_ms));
    if (!node.halted && !node.parked()) issue_one(node, t);
    return node.halted            ? RegressionOutcome::kFatal
           : node.drill_pending   ? RegressionOutcome::kPending
                                  : RegressionOutcome::kTolerated;
  }

  void log(std::uint64_t t, const std::string& line) {
    report_.event_log.push_back("t=" + std::to_string(t) + " " + line);
  }

  std::uint32_t allocate_address(std::uint64_t t, bool& reused) {
    if (scenario_.allow_concurrent_duplicate_ip && !live_.empty()) {
      // Lowest address currently held by a live node.
      std::uint32_t lowest = live_.begin()->second.host_index;
      for (const auto& [id, node] : live_) lowest = std::min(lowest, node.host_index);
      reused = true;
      return lowest;
    }
    while (!cooling_.empty() && cooling_.begin()->first <= t) {
      released_.insert(cooling_.begin()->second);
      cooling_.erase(cooling_.begin());
    }
    if (!released_.empty()) {
      const std::uint32_t index = *released_.begin();
      released_.erase(released_.begin());
      reused = true;
      return index;
    }
    if (next_fresh_ >= scenario_.subnet.host_count()) {
      throw Error(ErrorCode::kCapacityExhausted,
                  "no free address in " + scenario_.subnet.to_string() + " at t=" +
                      std::to_string(t) + " ms");
    }
    reused = false;
    return next_fresh_++;
  }

  void spawn(std::uint64_t t, bool churn) {
    bool reused = false;
    const std::uint32_t host_index = allocate_address(t, reused);
    const std::string ip = scenario_.subnet.address(host_index);

    Node node;
    node.incarnation = next_incarnation_++;
    node.host_index = host_index;
    const std::int64_t skew =
        reused ? -static_cast<std::int64_t>(scenario_.restart_clock_lag_ms) : 0;
    node.clock = std::make_shared<detail::NodeClock>(&shared_now_, skew);

    GeneratorConfig config;
    config.layout = scenario_.layout;
    config.epoch_millis = kDefaultEpochMillis;
    config.machine_id = worker_id_from_ip(ip);
    config.max_backward_tolerance_ms = scenario_.max_backward_tolerance_ms;
    if (config.machine_id > config.layout.machine_mask()) {
      throw Error(ErrorCode::kScenarioInvalid,
                  "layout has " + std::to_string(config.layout.machine_bits()) +
                      " machine bits, too few for address " + ip);
    }
    node.generator = std::make_unique<Generator>(config, node.clock);
    node.stream = streams_.size();
    streams_.push_back({node.incarnation, ip, {}});

    ++report_.nodes_spawned;
    if (churn) ++report_.churn_events;
    if (reused) ++report_.addresses_reused;
    log(t, "spawn node=" + std::to_string(node.incarnation) + " ip=" + ip +
               " worker=" + std::to_string(config.machine_id) + (reused ? " reused" : ""));
    live_.emplace(node.incarnation, std::move(node));
  }

  void terminate(std::uint64_t incarnation, std::uint64_t t) {
    auto it = live_.find(incarnation);
    Node& node = it->second;
    if (node.in_flight) ++report_.in_flight_dropped;
    // Duplicate-address nodes may share an address with a live node; only
    // genuinely free addresses go back to the pool.
    bool still_held = false;
    for (const auto& [id, other] : live_) {
      if (id != incarnation && other.host_index == node.host_index) still_held = true;
    }
    if (!still_held) {
      cooling_.emplace(t + scenario_.ip_reuse_cooldown_ms, node.host_index);
    }
    ++report_.nodes_terminated;
    ++report_.churn_events;
    log(t, "terminate node=" + std::to_string(incarnation) + " ip=" +
               scenario_.subnet.address(node.host_index));
    live_.erase(it);
  }

  Node& live_node(std::uint64_t incarnation) {
    auto it = live_.find(incarnation);
    if (it == live_.end()) {
      throw Error(ErrorCode::kScenarioInvalid,
                  "node " + std::to_string(incarnation) + " is not live");
    }
    return it->second;
  }

  std::optional<std::uint64_t> pick_random(bool healthy_only) {
    std::vector<std::uint64_t> candidates;
    for (const auto& [id, node] : live_) {
      if (!healthy_only || !node.halted) candidates.push_back(id);
    }
    if (candidates.empty()) return std::nullopt;
    return candidates[rng_.below(candidates.size())];
  }

  void apply(const ChurnEvent& event, std::uint64_t t) {
    switch (event.kind) {
      case ChurnKind::kSpawn:
        spawn(t, true);
        return;
      case ChurnKind::kTerminate: {
        auto target = event.node ? event.node : pick_random(false);
        if (!target) {
          log(t, "terminate skipped: no live node");
          return;
        }
        live_node(*target);
        terminate(*target, t);
        return;
      }
      case ChurnKind::kRegressClock: {
        auto target = event.node ? event.node : pick_random(true);
        if (!target) {
          log(t, "regress skipped: no healthy node");
          return;
        }
        ++report_.churn_events;
        regression_drill(*target, event.offset_ms, t);
        return;
      }
    }
  }

  void deliver_pending() {
    for (auto& [id, node] : live_) {
      if (node.in_flight && node.parked_until <= shared_now_) {
        streams_[node.stream].ids.push_back(*node.in_flight);
        node.in_flight.reset();
      }
    }
  }

  // One next_id call; returns false when the node can issue nothing more
  // this millisecond.
  bool issue_one(Node& node, std::uint64_t t) {
    std::uint64_t id = 0;
    try {
      id = node.generator->next_id();
    } catch (const Error& e) {
      if (e.code() != ErrorCode::kClockMovedBackwards) throw;
      node.halted = true;
      node.clock->take_pending();
      if (node.drill_pending) {
        node.drill_pending = false;
        ++report_.regressions_fatal;
      }
      log(t, "halt node=" + std::to_string(node.incarnation) + " reason=" +
                 std::string(error_name(e.code())));
      return false;
    }
    node.issued_any = true;

    const std::uint64_t slept = node.clock->take_slept();
    const std::uint64_t pending = node.clock->take_pending();
    if (slept > 0) {
      report_.regression_wait_ms += slept;
      if (node.drill_pending) {
        node.drill_pending = false;
        ++report_.regressions_tolerated;
      }
    } else if (node.drill_pending) {
      // The regression did not reach back past the last issued timestamp.
      node.drill_pending = false;
      ++report_.regressions_tolerated;
    }
    if (pending > 0) {
      if (slept == 0) report_.blocked_milliseconds += pending;
      node.in_flight = id;
      node.parked_until = shared_now_ + pending;
      return false;
    }
    streams_[node.stream].ids.push_back(id);
    return true;
  }

  void issue_round(std::uint64_t t) {
    for (auto& [id, node] : live_) {
      if (node.halted || node.parked()) continue;
      for (std::uint64_t k = 0; k < scenario_.ids_per_node_per_ms; ++k) {
        if (!issue_one(node, t)) break;
      }
    }
  }

  SimulationReport finish() {
    deliver_pending_at_end();
    const AuditSummary audit = audit_ids(streams_);
    report_.total_ids = audit.total_ids;
    report_.distinct_ids = audit.distinct_ids;
    report_.collision_count = audit.duplicate_count;
    report_.per_node_monotonicity_violations = audit.monotonicity_violations;
    report_.cross_incarnation_violations = audit.cross_incarnation_violations;

    for (const auto& stream : streams_) {
      std::uint64_t run = 0;
      std::uint64_t current_ts = 0;
      for (std::size_t i = 0; i < stream.ids.size(); ++i) {
        const std::uint64_t ts = decompose(scenario_.layout, stream.ids[i]).timestamp_offset;
        run = (i > 0 && ts == current_ts) ? run + 1 : 1;
        current_ts = ts;
        report_.max_ids_per_node_ms = std::max(report_.max_ids_per_node_ms, run);
      }
    }

    Fnv1a64 digest;
    for (std::size_t i = 0; i < report_.event_log.size(); ++i) {
      if (i > 0) digest.update(std::uint8_t{'\n'});
      digest.update(report_.event_log[i]);
    }
    report_.event_log_digest = digest.digest();
    return std::move(report_);
  }

  // IDs still parked when the run ends were handed out by their generator
  // but never reached a caller; they are counted as dropped.
  void deliver_pending_at_end() {
    for (auto& [id, node] : live_) {
      if (node.in_flight) ++report_.in_flight_dropped;
    }
  }

  ChurnScenario scenario_;
  SplitMix64 rng_;
  std::uint64_t shared_now_ = 0;
  std::map<std::uint64_t, Node> live_;
  std::vector<IssuanceStream> streams_;
  std::set<std::uint32_t> released_;
  std::multimap<std::uint64_t, std::uint32_t> cooling_;  // available-at ms -> host index
  std::uint32_t next_fresh_ = 0;
  std::uint64_t next_incarnation_ = 0;
  SimulationReport report_;
};

inline SimulationReport run_simulation(const ChurnScenario& scenario) {
  return ChurnSimulator(scenario).run();
}

// ---------------------------------------------------------------------------
// Rendering

inline std::string digest_hex(std::uint64_t digest) {
  char buf[17];
  std::snprintf(buf, sizeof(buf), "%016llx", static_cast<unsigned long long>(digest));
  return buf;
}

inline nlohmann::ordered_json report_json(const SimulationReport& r) {
  nlohmann::ordered_json j;
  j["total_ids"] = r.total_ids;
  j["distinct_ids"] = r.distinct_ids;
  j["collision_count"] = r.collision_count;
  j["per_node_monotonicity_violations"] = r.per_node_monotonicity_violations;
  j["cross_incarnation_violations"] = r.cross_incarnation_violations;
  j["blocked_milliseconds"] = r.blocked_milliseconds;
  j["regression_wait_ms"] = r.regression_wait_ms;
  j["regressions_tolerated"] = r.regressions_tolerated;
  j["regressions_fatal"] = r.regressions_fatal;
  j["max_ids_per_node_ms"] = r.max_ids_per_node_ms;
  j["nodes_spawned"] = r.nodes_spawned;
  j["nodes_terminated"] = r.nodes_terminated;
  j["churn_events"] = r.churn_events;
  j["addresses_reused"] = r.addresses_reused;
  j["in_flight_dropped"] = r.in_flight_dropped;
  j["event_log_digest"] = digest_hex(r.event_log_digest);
  j["violations"] = r.violations();
  return j;
}

inline std::string render_report_text(const SimulationReport& r) {
  std::string out;
  const auto record = report_json(r);
  for (const auto& [key, value] : record.items()) {
    out += key;
    out += ": ";
    out += value.is_string() ? value.get<std::string>() : value.dump();
    out += '\n';
  }
  return out;
}

inline std::string render_report_ndjson(const SimulationReport& r) {
  return report_json(r).dump() + "\n";
}

}  // namespace flakeless
