#pragma once

#include <charconv>
#include <cmath>
#include <cstdint>
#include <string>
#include <string_view>

#include "flakeless/error.hpp"

namespace flakeless {

/// Partition of a 64-bit identifier, most significant field first:
///
///   sign(1) | timestamp | region | machine | sequence
///
/// The sign bit is never set. Widths must add up to 63 so that every bit
/// below the sign bit belongs to exactly one field.
class BitLayout {
 public:
  int timestamp_bits() const noexcept { return timestamp_bits_; }
  int region_bits() const noexcept { return region_bits_; }
  int machine_bits() const noexcept { return machine_bits_; }
  int sequence_bits() const noexcept { return sequence_bits_; }

  int machine_shift() const noexcept { return sequence_bits_; }
  int region_shift() const noexcept { return sequence_bits_ + machine_bits_; }
  int timestamp_shift() const noexcept {
    return sequence_bits_ + machine_bits_ + region_bits_;
  }

  std::uint64_t sequence_mask() const noexcept { return mask(sequence_bits_); }
  std::uint64_t machine_mask() const noexcept { return mask(machine_bits_); }
  std::uint64_t region_mask() const noexcept { return mask(region_bits_); }
  std::uint64_t timestamp_mask() const noexcept { return mask(timestamp_bits_); }

  /// "t:r:m:s", the same form accepted by parse_layout().
  std::string to_string() const {
    return std::to_string(timestamp_bits_) + ":" + std::to_string(region_bits_) + ":" +
           std::to_string(machine_bits_) + ":" + std::to_string(sequence_bits_);
  }

  friend bool operator==(const BitLayout&, const BitLayout&) = default;

  friend BitLayout make_layout(int timestamp_bits, int region_bits, int machine_bits,
                               int sequence_bits);

 private:
  BitLayout(int t, int r, int m, int s)
      : timestamp_bits_(t), region_bits_(r), machine_bits_(m), sequence_bits_(s) {}

  static constexpr std::uint64_t mask(int bits) noexcept {
    return bits >= 64 ? ~std::uint64_t{0} : (std::uint64_t{1} << bits) - 1;
  }

  int timestamp_bits_;
  int region_bits_;
  int machine_bits_;
  int sequence_bits_;
};

inline constexpr int kMaxMachineBits = 16;

inline BitLayout make_layout(int timestamp_bits, int region_bits, int machine_bits,
                             int sequence_bits) {
  auto fail = [&](const std::string& why) {
    return Error(ErrorCode::kInvalidLayout,
                 "invalid layout " + std::to_string(timestamp_bits) + ":" +
                     std::to_string(region_bits) + ":" + std::to_string(machine_bits) + ":" +
                     std::to_string(sequence_bits) + ": " + why);
  };
  if (timestamp_bits < 1) throw fail("timestamp_bits must be >= 1");
  if (region_bits < 0) throw fail("region_bits must be >= 0");
  if (machine_bits < 1) throw fail("machine_bits must be >= 1");
  if (machine_bits > kMaxMachineBits) throw fail("machine_bits must be <= 16");
  if (sequence_bits < 1) throw fail("sequence_bits must be >= 1");
  const int total = 1 + timestamp_bits + region_bits + machine_bits + sequence_bits;
  if (total != 64) {
    throw fail("fields plus sign bit sum to " + std::to_string(total) + ", expected 64");
  }
  return BitLayout(timestamp_bits, region_bits, machine_bits, sequence_bits);
}

/// 1-41-16-6: 64 IDs per millisecond, ~69.7 years of timestamps.
inline BitLayout standard_layout() { return make_layout(41, 0, 16, 6); }

/// 1-40-16-7: 128 IDs per millisecond, ~34.8 years of timestamps.
inline BitLayout performance_layout() { return make_layout(40, 0, 16, 7); }

/// 1-40-1-16-6: one timestamp bit given over to a two-valued region prefix.
inline BitLayout region_layout() { return make_layout(40, 1, 16, 6); }

/// Accepts "standard", "performance", "region" or a custom "t:r:m:s" spec.
inline BitLayout parse_layout(std::string_view text) {
  if (text == "standard") return standard_layout();
  if (text == "performance") return performance_layout();
  if (text == "region") return region_layout();

  int widths[4] = {};
  std::size_t pos = 0;
  for (int i = 0; i < 4; ++i) {
    const std::size_t end = i < 3 ? text.find(':', pos) : text.size();
    if (end == std::string_view::npos) {
      throw Error(ErrorCode::kInvalidLayout,
                  "layout spec must be standard, performance, region or t:r:m:s, got '" +
                      std::string(text) + "'");
    }
    const char* first = text.data() + pos;
    const char* last = text.data() + end;
    auto [ptr, ec] = std::from_chars(first, last, widths[i]);
    if (ec != std::errc{} || ptr != last || first == last) {
      throw Error(ErrorCode::kInvalidLayout,
                  "non-numeric field in layout spec '" + std::string(text) + "'");
    }
    pos = end + 1;
  }
  return make_layout(widths[0], widths[1], widths[2], widths[3]);
}

struct IdParts {
  std::uint64_t timestamp_offset = 0;  // milliseconds since the generator epoch
  std::uint64_t region = 0;
  std::uint16_t machine_id = 0;
  std::uint64_t sequence = 0;

  friend bool operator==(const IdParts&, const IdParts&) = default;
};

inline std::uint64_t compose(const BitLayout& layout, const IdParts& parts) {
  auto check = [](std::uint64_t value, std::uint64_t mask, const char* field) {
    if (value > mask) {
      throw Error(ErrorCode::kFieldOverflow, std::string(field) + " value " +
                                                 std::to_string(value) + " exceeds field maximum " +
                                                 std::to_string(mask));
    }
  };
  check(parts.timestamp_offset, layout.timestamp_mask(), "timestamp_offset");
  check(parts.region, layout.region_mask(), "region");
  check(parts.machine_id, layout.machine_mask(), "machine_id");
  check(parts.sequence, layout.sequence_mask(), "sequence");

  return (parts.timestamp_offset << layout.timestamp_shift()) |
         (parts.region << layout.region_shift()) |
         (std::uint64_t{parts.machine_id} << layout.machine_shift()) | parts.sequence;
}

inline constexpr std::uint64_t kSignBit = std::uint64_t{1} << 63;

inline IdParts decompose(const BitLayout& layout, std::uint64_t id) {
  if (id & kSignBit) {
    throw Error(ErrorCode::kSignBitSet,
                "identifier " + std::to_string(id) + " has the sign bit set");
  }
  IdParts parts;
  parts.timestamp_offset = (id >> layout.timestamp_shift()) & layout.timestamp_mask();
  parts.region = (id >> layout.region_shift()) & layout.region_mask();
  parts.machine_id =
      static_cast<std::uint16_t>((id >> layout.machine_shift()) & layout.machine_mask());
  parts.sequence = id & layout.sequence_mask();
  return parts;
}

inline std::uint64_t max_ids_per_millisecond(const BitLayout& layout) {
  return std::uint64_t{1} << layout.sequence_bits();
}

inline std::uint64_t max_ids_per_second(const BitLayout& layout) {
  return max_ids_per_millisecond(layout) * 1000;
}

inline constexpr double kMillisPerJulianYear = 1000.0 * 86400.0 * 365.25;

inline double lifespan_years(const BitLayout& layout) {
  return std::ldexp(1.0, layout.timestamp_bits()) / kMillisPerJulianYear;
}

}  // namespace flakeless
