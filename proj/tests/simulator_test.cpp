#include "flakeless/simulator.hpp"

#include <gtest/gtest.h>

#include <random>
#include <string>
#include <vector>

namespace flakeless {
namespace {

ErrorCode code_of(auto&& fn) {
  try {
    fn();
  } catch (const Error& e) {
    return e.code();
  }
  ADD_FAILURE() << "expected an error";
  return ErrorCode::kInvalidArgument;
}

TEST(SplitMix64, ReferenceSequenceForSeedZero) {
  SplitMix64 rng(0);
  EXPECT_EQ(rng.next(), 0xe220a8397b1dcdafULL);
  EXPECT_EQ(rng.next(), 0x6e789e6aa1b965f4ULL);
  EXPECT_EQ(rng.next(), 0x06c45d188009454fULL);
}

TEST(Subnet, ParseAndAddress) {
  const Subnet s = parse_subnet("10.0.0.0/16");
  EXPECT_EQ(s.host_count(), 65534u);
  EXPECT_EQ(s.address(0), "10.0.0.1");
  EXPECT_EQ(s.address(257), "10.0.1.2");
  EXPECT_EQ(parse_subnet("10.1.2.3/24").to_string(), "10.1.2.0/24");
  EXPECT_EQ(parse_subnet("10.0.0.0/30").host_count(), 2u);
  EXPECT_THROW(parse_subnet("10.0.0.0/15"), Error);
  EXPECT_THROW(parse_subnet("10.0.0.0/31"), Error);
  EXPECT_THROW(parse_subnet("10.0.0.0"), Error);
}

TEST(Audit, Examples) {
  const std::vector<IssuanceStream> clean = {{0, "10.0.0.1", {1, 2, 3}}};
  AuditSummary a = audit_ids(clean);
  EXPECT_EQ(a.total_ids, 3u);
  EXPECT_EQ(a.duplicate_count, 0u);
  EXPECT_EQ(a.monotonicity_violations, 0u);

  const std::vector<IssuanceStream> out_of_order = {{0, "10.0.0.1", {1, 3, 2}}};
  EXPECT_EQ(audit_ids(out_of_order).monotonicity_violations, 1u);

  const std::vector<IssuanceStream> shared = {{0, "10.0.0.1", {5, 7}}, {1, "10.0.0.2", {7, 9}}};
  a = audit_ids(shared);
  EXPECT_EQ(a.total_ids, 4u);
  EXPECT_EQ(a.distinct_ids, 3u);
  EXPECT_EQ(a.duplicate_count, 1u);
}

TEST(Audit, CrossIncarnationOrdering) {
  const std::vector<IssuanceStream> ok = {{0, "10.0.0.1", {5, 7}}, {3, "10.0.0.1", {8, 9}}};
  EXPECT_EQ(audit_ids(ok).cross_incarnation_violations, 0u);
  const std::vector<IssuanceStream> lagging = {{0, "10.0.0.1", {5, 7}},
                                               {3, "10.0.0.1", {6, 9}}};
  EXPECT_EQ(audit_ids(lagging).cross_incarnation_violations, 1u);
}

TEST(ParseScenario, Directives) {
  const ChurnScenario s = parse_scenario(
      "# comment\n"
      "seed 7\n"
      "subnet 10.2.0.0/24\n"
      "duration 500   # trailing comment\n"
      "nodes 3\n"
      "demand 4\n"
      "cooldown 9\n"
      "layout performance\n"
      "tolerance 5\n"
      "duplicate_ip yes\n"
      "restart_lag 20\n"
      "event 40 regress 1 3\n"
      "event 10 terminate random\n"
      "event 10 spawn\n"
      "churn 100 200 400\n");
  EXPECT_EQ(s.seed, 7u);
  EXPECT_EQ(s.subnet.to_string(), "10.2.0.0/24");
  EXPECT_EQ(s.duration_ms, 500u);
  EXPECT_EQ(s.initial_nodes, 3u);
  EXPECT_EQ(s.ids_per_node_per_ms, 4u);
  EXPECT_EQ(s.ip_reuse_cooldown_ms, 9u);
  EXPECT_EQ(s.layout, performance_layout());
  EXPECT_EQ(s.max_backward_tolerance_ms, 5u);
  EXPECT_TRUE(s.allow_concurrent_duplicate_ip);
  EXPECT_EQ(s.restart_clock_lag_ms, 20u);
  ASSERT_EQ(s.churn_events.size(), 7u);
  EXPECT_EQ(s.churn_events[0].at_ms, 10u);
  EXPECT_EQ(s.churn_events[0].kind, ChurnKind::kTerminate);
  EXPECT_FALSE(s.churn_events[0].node.has_value());
  EXPECT_EQ(s.churn_events[1].kind, ChurnKind::kSpawn);
  EXPECT_EQ(s.churn_events[2].kind, ChurnKind::kRegressClock);
  EXPECT_EQ(s.churn_events[2].node, 1u);
  EXPECT_EQ(s.churn_events[2].offset_ms, 3u);
  EXPECT_EQ(s.churn_events[3].at_ms, 200u);
  EXPECT_EQ(s.churn_events[5].at_ms, 300u);
}

TEST(ParseScenario, Errors) {
  for (const char* bad : {"bogus 1\n", "nodes\n", "nodes x\n", "event 5 explode\n",
                          "event 5 regress 0 0\n", "duration 10\nevent 11 spawn\n",
                          "duplicate_ip maybe\n", "churn 0\n", "layout 41:1:16:6\n",
                          "duration 0\n", "subnet 10.0.0.0/30\nnodes 3\n"}) {
    EXPECT_EQ(code_of([&] { parse_scenario(std::string_view(bad)); }),
              ErrorCode::kScenarioInvalid)
        << bad;
  }
  EXPECT_EQ(code_of([] { load_scenario("/nonexistent/x.scn"); }), ErrorCode::kScenarioInvalid);
}

TEST(Simulate, SteadyFleetAtFullDemand) {
  ChurnScenario s;
  s.initial_nodes = 100;
  s.duration_ms = 1000;
  s.ids_per_node_per_ms = 64;
  const SimulationReport r = run_simulation(s);
  EXPECT_EQ(r.total_ids, 6'400'000u);
  EXPECT_EQ(r.collision_count, 0u);
  EXPECT_EQ(r.per_node_monotonicity_violations, 0u);
  EXPECT_EQ(r.blocked_milliseconds, 0u);
  EXPECT_EQ(r.max_ids_per_node_ms, 64u);
}

TEST(Simulate, ChurnWithCooldownIsCollisionFree) {
  const ChurnScenario s = parse_scenario(
      "nodes 20\n"
      "duration 1000\n"
      "demand 8\n"
      "cooldown 1\n"
      "churn 10\n");
  const SimulationReport r = run_simulation(s);
  EXPECT_EQ(r.churn_events, 2 * 99u);
  EXPECT_GT(r.addresses_reused, 0u);
  EXPECT_EQ(r.violations(), 0u);
  EXPECT_EQ(r.collision_count, 0u);
}

TEST(Simulate, ConcurrentDuplicateAddressCollides) {
  const ChurnScenario s = parse_scenario(
      "nodes 1\n"
      "duration 100\n"
      "duplicate_ip true\n"
      "event 0 spawn\n");
  const SimulationReport r = run_simulation(s);
  EXPECT_GT(r.collision_count, 0u);
  EXPECT_EQ(r.collision_count, 100u);
}

TEST(Simulate, LaggingRestartOnReusedAddressCollides) {
  const ChurnScenario s = parse_scenario(
      "nodes 1\n"
      "subnet 10.0.0.0/30\n"
      "duration 200\n"
      "cooldown 0\n"
      "restart_lag 50\n"
      "event 100 terminate 0\n"
      "event 100 spawn\n");
  const SimulationReport r = run_simulation(s);
  EXPECT_EQ(r.addresses_reused, 1u);
  EXPECT_GT(r.collision_count, 0u);
  EXPECT_GT(r.cross_incarnation_violations, 0u);
}

SimulationReport drill(std::uint64_t offset) {
  return run_simulation(parse_scenario("nodes 1\nduration 100\nevent 50 regress 0 " +
                                       std::to_string(offset) + "\n"));
}

TEST(Simulate, RegressionDrills) {
  for (std::uint64_t offset : {1u, 5u, 10u}) {
    const SimulationReport r = drill(offset);
    EXPECT_EQ(r.regressions_tolerated, 1u) << offset;
    EXPECT_EQ(r.regressions_fatal, 0u) << offset;
    EXPECT_EQ(r.regression_wait_ms, offset + 1) << offset;
    EXPECT_EQ(r.violations(), 0u) << offset;
  }
  const SimulationReport fatal = drill(11);
  EXPECT_EQ(fatal.regressions_tolerated, 0u);
  EXPECT_EQ(fatal.regressions_fatal, 1u);
  EXPECT_EQ(fatal.violations(), 0u);
  EXPECT_EQ(fatal.total_ids, 50u);  // halted at t=50
}

TEST(Simulate, DemandAboveCapacityBlocks) {
  ChurnScenario s;
  s.initial_nodes = 3;
  s.duration_ms = 200;
  s.ids_per_node_per_ms = 100;
  const SimulationReport r = run_simulation(s);
  EXPECT_GT(r.blocked_milliseconds, 0u);
  EXPECT_LE(r.max_ids_per_node_ms, 64u);
  EXPECT_EQ(r.violations(), 0u);
}

TEST(Simulate, AddressPoolExhaustion) {
  const ChurnScenario s = parse_scenario(
      "subnet 10.0.0.0/30\n"
      "nodes 2\n"
      "duration 10\n"
      "event 5 spawn\n");
  EXPECT_EQ(code_of([&] { run_simulation(s); }), ErrorCode::kCapacityExhausted);
}

TEST(Simulate, EventLogDigestIsFnvOfTheLog) {
  const SimulationReport r = run_simulation(parse_scenario("nodes 4\nduration 100\nchurn 7\n"));
  std::string joined;
  for (std::size_t i = 0; i < r.event_log.size(); ++i) {
    if (i > 0) joined += '\n';
    joined += r.event_log[i];
  }
  EXPECT_EQ(r.event_log_digest, fnv1a64(joined));
  EXPECT_EQ(report_json(r)["event_log_digest"], digest_hex(r.event_log_digest));
}

TEST(Simulate, SameScenarioSameReport) {
  const ChurnScenario s = parse_scenario(
      "seed 42\nnodes 10\nduration 300\ndemand 5\nchurn 3\n"
      "event 20 regress random 4\nevent 40 regress random 30\n");
  const SimulationReport a = run_simulation(s);
  const SimulationReport b = run_simulation(s);
  EXPECT_EQ(a.event_log, b.event_log);
  EXPECT_EQ(a.event_log_digest, b.event_log_digest);
  EXPECT_EQ(report_json(a), report_json(b));

  ChurnScenario other = s;
  other.seed = 43;
  EXPECT_NE(run_simulation(other).event_log_digest, a.event_log_digest);
}

ChurnScenario random_scenario(std::mt19937_64& rng) {
  ChurnScenario s;
  s.seed = rng();
  s.subnet = parse_subnet("10.0.0.0/24");
  s.duration_ms = 50 + rng() % 250;
  s.initial_nodes = 1 + rng() % 20;
  s.ids_per_node_per_ms = 1 + rng() % 80;
  s.ip_reuse_cooldown_ms = rng() % 20;
  s.layout = rng() % 2 ? standard_layout() : performance_layout();
  const int events = static_cast<int>(rng() % 60);
  for (int i = 0; i < events; ++i) {
    ChurnEvent e;
    e.at_ms = rng() % (s.duration_ms + 1);
    switch (rng() % 3) {
      case 0: e.kind = ChurnKind::kSpawn; break;
      case 1: e.kind = ChurnKind::kTerminate; break;
      default:
        e.kind = ChurnKind::kRegressClock;
        e.offset_ms = 1 + rng() % 15;
        break;
    }
    s.churn_events.push_back(e);
  }
  std::stable_sort(s.churn_events.begin(), s.churn_events.end(),
                   [](const ChurnEvent& a, const ChurnEvent& b) { return a.at_ms < b.at_ms; });
  return s;
}

TEST(SimulateProperties, RandomScenariosNeverViolate) {
  std::mt19937_64 rng(1234);
  for (int trial = 0; trial < 150; ++trial) {
    const ChurnScenario s = random_scenario(rng);
    const SimulationReport r = run_simulation(s);
    ASSERT_EQ(r.violations(), 0u) << "trial " << trial << " seed " << s.seed;
    ASSERT_LE(r.max_ids_per_node_ms, s.layout.sequence_mask() + 1);
    ASSERT_EQ(r.total_ids, r.distinct_ids);
  }
}

}  // namespace
}  // namespace flakeless
