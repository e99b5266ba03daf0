#pragma once

#include <algorithm>
#include <charconv>
#include <cstdint>
#include <fstream>
#include <optional>
#include <sstream>
#include <string>
#include <string_view>
#include <vector>

#include "flakeless/bit_layout.hpp"
#include "flakeless/error.hpp"
#include "flakeless/generator.hpp"
#include "flakeless/identity.hpp"

namespace flakeless {

/// SplitMix64. Fixed so that scenario runs reproduce across implementations:
///
///   state += 0x9E3779B97F4A7C15
///   z = state
///   z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9
///   z = (z ^ (z >> 27)) * 0x94D049BB133111EB
///   return z ^ (z >> 31)
///
/// below(n) is next() % n.
class SplitMix64 {
 public:
  explicit SplitMix64(std::uint64_t seed) noexcept : state_(seed) {}

  std::uint64_t next() noexcept {
    state_ += 0x9E3779B97F4A7C15ULL;
    std::uint64_t z = state_;
    z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9ULL;
    z = (z ^ (z >> 27)) * 0x94D049BB133111EBULL;
    return z ^ (z >> 31);
  }

  std::uint64_t below(std::uint64_t n) noexcept { return next() % n; }

 private:
  std::uint64_t state_;
};

struct Subnet {
  std::uint32_t base = 0;  // network address, host byte order
  int prefix = 16;

  std::uint32_t host_count() const noexcept {
    return (std::uint32_t{1} << (32 - prefix)) - 2;
  }

  /// Host index 0 is the first usable address (network address + 1).
  std::string address(std::uint32_t host_index) const {
    const std::uint32_t a = base + host_index + 1;
    return std::to_string(a >> 24) + "." + std::to_string((a >> 16) & 0xFF) + "." +
           std::to_string((a >> 8) & 0xFF) + "." + std::to_string(a & 0xFF);
  }

  std::string to_string() const {
    const std::uint32_t a = base;
    return std::to_string(a >> 24) + "." + std::to_string((a >> 16) & 0xFF) + "." +
           std::to_string((a >> 8) & 0xFF) + "." + std::to_string(a & 0xFF) + "/" +
           std::to_string(prefix);
  }
};

/// "a.b.c.d/p" with 16 <= p <= 30. Every address in such a subnet differs
/// from the others only in its last 16 bits, so raw worker ids never clash.
inline Subnet parse_subnet(std::string_view text) {
  const auto slash = text.find('/');
  if (slash == std::string_view::npos) {
    throw Error(ErrorCode::kScenarioInvalid,
                "subnet '" + std::string(text) + "' must be written as a.b.c.d/prefix");
  }
  Ipv4Octets octets;
  try {
    octets = parse_ipv4(text.substr(0, slash));
  } catch (const Error& e) {
    throw Error(ErrorCode::kScenarioInvalid, e.what());
  }
  const std::string_view prefix_text = text.substr(slash + 1);
  int prefix = 0;
  auto [ptr, ec] =
      std::from_chars(prefix_text.data(), prefix_text.data() + prefix_text.size(), prefix);
  if (ec != std::errc{} || ptr != prefix_text.data() + prefix_text.size() || prefix < 16 ||
      prefix > 30) {
    throw Error(ErrorCode::kScenarioInvalid,
                "subnet prefix must be between /16 and /30, got '" + std::string(text) + "'");
  }
  const std::uint32_t addr = (std::uint32_t{octets[0]} << 24) | (std::uint32_t{octets[1]} << 16) |
                             (std::uint32_t{octets[2]} << 8) | octets[3];
  const std::uint32_t mask = ~((std::uint32_t{1} << (32 - prefix)) - 1);
  return Subnet{addr & mask, prefix};
}

enum class ChurnKind { kSpawn, kTerminate, kRegressClock };

struct ChurnEvent {
  std::uint64_t at_ms = 0;
  ChurnKind kind = ChurnKind::kSpawn;
  std::optional<std::uint64_t> node;  // incarnation id; nullopt picks a live node at random
  std::uint64_t offset_ms = 0;        // kRegressClock only
};

struct ChurnScenario {
  std::uint64_t seed = 0;
  Subnet subnet = parse_subnet("10.0.0.0/16");
  std::uint64_t duration_ms = 1000;
  std::uint64_t initial_nodes = 1;
  std::vector<ChurnEvent> churn_events;
  std::uint64_t ip_reuse_cooldown_ms = 1;
  bool allow_concurrent_duplicate_ip = false;
  std::uint64_t ids_per_node_per_ms = 1;
  BitLayout layout = standard_layout();
  std::uint64_t max_backward_tolerance_ms = kDefaultBackwardToleranceMs;
  // Negative mode: a node started on a previously used address begins with
  // its clock this far behind the shared clock.
  std::uint64_t restart_clock_lag_ms = 0;
};

inline void validate_scenario(const ChurnScenario& s) {
  auto invalid = [](const std::string& why) { return Error(ErrorCode::kScenarioInvalid, why); };
  if (s.duration_ms == 0) throw invalid("duration must be at least 1 ms");
  if (s.initial_nodes > s.subnet.host_count()) {
    throw invalid("subnet " + s.subnet.to_string() + " holds " +
                  std::to_string(s.subnet.host_count()) + " hosts, cannot start " +
                  std::to_string(s.initial_nodes) + " nodes");
  }
  for (const auto& e : s.churn_events) {
    if (e.at_ms > s.duration_ms) {
      throw invalid("event at " + std::to_string(e.at_ms) + " ms is past the duration of " +
                    std::to_string(s.duration_ms) + " ms");
    }
    if (e.kind == ChurnKind::kRegressClock && e.offset_ms == 0) {
      throw invalid("regress events need an offset of at least 1 ms");
    }
  }
}

namespace detail {

inline std::uint64_t parse_u64(std::string_view text, int line) {
  std::uint64_t value = 0;
  auto [ptr, ec] = std::from_chars(text.data(), text.data() + text.size(), value);
  if (text.empty() || ec != std::errc{} || ptr != text.data() + text.size()) {
    throw Error(ErrorCode::kScenarioInvalid, "line " + std::to_string(line) +
                                                 ": expected an unsigned integer, got '" +
                                                 std::string(text) + "'");
  }
  return value;
}

inline bool parse_bool(std::string_view text, int line) {
  if (text == "true" || text == "on" || text == "yes" || text == "1") return true;
  if (text == "false" || text == "off" || text == "no" || text == "0") return false;
  throw Error(ErrorCode::kScenarioInvalid,
              "line " + std::to_string(line) + ": expected a boolean, got '" + std::string(text) +
                  "'");
}

inline std::optional<std::uint64_t> parse_node_ref(std::string_view text, int line) {
  if (text == "random") return std::nullopt;
  return parse_u64(text, line);
}

}  // namespace detail

/// Line-oriented scenario format, one directive per line, '#' starts a comment.
///
///   seed <n>                  PRNG seed (default 0)
///   subnet <a.b.c.d/p>        address pool, /16 to /30 (default 10.0.0.0/16)
///   duration <ms>             simulated milliseconds (default 1000)
///   nodes <n>                 nodes started at t=0 (default 1)
///   demand <n>                IDs requested per node per millisecond (default 1)
///   cooldown <ms>             delay before a released address is reassigned (default 1)
///   layout <name|t:r:m:s>     bit layout (default standard)
///   tolerance <ms>            clock regression tolerance (default 10)
///   duplicate_ip <bool>       spawns share the lowest live address (default false)
///   restart_lag <ms>          reused addresses restart with a lagging clock (default 0)
///   event <t> spawn
///   event <t> terminate <node|random>
///   event <t> regress <node|random> <offset_ms>
///   churn <every> [<from> [<to>]]
///                             terminate random + spawn at from, from+every, ... < to
///                             (to defaults to the duration, so put it after `duration`)
///
/// Nodes are named by incarnation id: 0..nodes-1 for the initial set, then
/// increasing in spawn order.
inline ChurnScenario parse_scenario(std::istream& in) {
  ChurnScenario s;
  std::string raw;
  int line_no = 0;
  while (std::getline(in, raw)) {
    ++line_no;
    if (const auto hash = raw.find('#'); hash != std::string::npos) raw.erase(hash);
    std::istringstream words(raw);
    std::vector<std::string> tok;
    for (std::string w; words >> w;) tok.push_back(w);
    if (tok.empty()) continue;

    auto need = [&](std::size_t min, std::size_t max) {
      if (tok.size() < min || tok.size() > max) {
        throw Error(ErrorCode::kScenarioInvalid, "line " + std::to_string(line_no) +
                                                     ": wrong number of arguments for '" + tok[0] +
                                                     "'");
      }
    };
    auto u64 = [&](std::size_t i) { return detail::parse_u64(tok[i], line_no); };
    const std::string& key = tok[0];

    if (key == "seed") {
      need(2, 2);
      s.seed = u64(1);
    } else if (key == "subnet") {
      need(2, 2);
      s.subnet = parse_subnet(tok[1]);
    } else if (key == "duration") {
      need(2, 2);
      s.duration_ms = u64(1);
    } else if (key == "nodes") {
      need(2, 2);
      s.initial_nodes = u64(1);
    } else if (key == "demand") {
      need(2, 2);
      s.ids_per_node_per_ms = u64(1);
    } else if (key == "cooldown") {
      need(2, 2);
      s.ip_reuse_cooldown_ms = u64(1);
    } else if (key == "layout") {
      need(2, 2);
      try {
        s.layout = parse_layout(tok[1]);
      } catch (const Error& e) {
        throw Error(ErrorCode::kScenarioInvalid,
                    "line " + std::to_string(line_no) + ": " + e.what());
      }
    } else if (key == "tolerance") {
      need(2, 2);
      s.max_backward_tolerance_ms = u64(1);
    } else if (key == "duplicate_ip") {
      need(2, 2);
      s.allow_concurrent_duplicate_ip = detail::parse_bool(tok[1], line_no);
    } else if (key == "restart_lag") {
      need(2, 2);
      s.restart_clock_lag_ms = u64(1);
    } else if (key == "event") {
      need(3, 5);
      ChurnEvent e;
      e.at_ms = u64(1);
      const std::string& kind = tok[2];
      if (kind == "spawn") {
        need(3, 3);
        e.kind = ChurnKind::kSpawn;
      } else if (kind == "terminate") {
        need(4, 4);
        e.kind = ChurnKind::kTerminate;
        e.node = detail::parse_node_ref(tok[3], line_no);
      } else if (kind == "regress") {
        need(5, 5);
        e.kind = ChurnKind::kRegressClock;
        e.node = detail::parse_node_ref(tok[3], line_no);
        e.offset_ms = u64(4);
      } else {
        throw Error(ErrorCode::kScenarioInvalid,
                    "line " + std::to_string(line_no) + ": unknown event kind '" + kind + "'");
      }
      s.churn_events.push_back(e);
    } else if (key == "churn") {
      need(2, 4);
      const std::uint64_t every = u64(1);
      const std::uint64_t from = tok.size() > 2 ? u64(2) : every;
      const std::uint64_t to = tok.size() > 3 ? u64(3) : s.duration_ms;
      if (every == 0) {
        throw Error(ErrorCode::kScenarioInvalid,
                    "line " + std::to_string(line_no) + ": churn interval must be positive");
      }
      for (std::uint64_t t = from; t < to; t += every) {
        s.churn_events.push_back({t, ChurnKind::kTerminate, std::nullopt, 0});
        s.churn_events.push_back({t, ChurnKind::kSpawn, std::nullopt, 0});
      }
    } else {
      throw Error(ErrorCode::kScenarioInvalid,
                  "line " + std::to_string(line_no) + ": unknown directive '" + key + "'");
    }
  }
  std::stable_sort(s.churn_events.begin(), s.churn_events.end(),
                   [](const ChurnEvent& a, const ChurnEvent& b) { return a.at_ms < b.at_ms; });
  validate_scenario(s);
  return s;
}

inline ChurnScenario parse_scenario(std::string_view text) {
  std::istringstream in{std::string(text)};
  return parse_scenario(in);
}

inline ChurnScenario load_scenario(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw Error(ErrorCode::kScenarioInvalid, "cannot open scenario file '" + path + "'");
  return parse_scenario(in);
}

}  // namespace flakeless
