#pragma once

#include <cstddef>
#include <cstdint>
#include <memory>
#include <mutex>
#include <string>
#include <vector>

#include "flakeless/bit_layout.hpp"
#include "flakeless/clock.hpp"
#include "flakeless/error.hpp"

namespace flakeless {

/// 2024-01-01T00:00:00Z in Unix milliseconds.
inline constexpr std::uint64_t kDefaultEpochMillis = 1704067200000ULL;
inline constexpr std::uint64_t kDefaultBackwardToleranceMs = 10;
inline constexpr std::size_t kDefaultMaxBatch = 10000;

struct GeneratorConfig {
  BitLayout layout = standard_layout();
  std::uint64_t epoch_millis = kDefaultEpochMillis;
  std::uint16_t machine_id = 0;
  std::uint64_t region = 0;
  std::uint64_t max_backward_tolerance_ms = kDefaultBackwardToleranceMs;
  std::size_t max_batch = kDefaultMaxBatch;
};

struct GeneratorStats {
  std::uint64_t ids_issued = 0;
  std::uint64_t overflow_waits = 0;
  std::uint64_t regression_waits = 0;
  std::uint64_t last_time = 0;
  std::uint64_t sequence = 0;
};

/// Monotonic, per-node ID generator.
///
/// Calls are serialized on an internal mutex. Within one millisecond the
/// sequence counts up to the layout's mask; once it wraps the call blocks on
/// the clock until the next millisecond. A clock that steps back by no more
/// than the configured tolerance is waited out once (offset + 1 ms); a larger
/// step, or a clock still behind after that wait, raises ClockMovedBackwards.
///
/// State is only committed after an ID is fully formed, so a call that throws
/// leaves the generator as it was and may simply be retried.
class Generator {
 public:
  Generator(GeneratorConfig config, std::shared_ptr<ClockSource> clock)
      : config_(config), clock_(std::move(clock)) {
    if (!clock_) throw Error(ErrorCode::kInvalidConfig, "generator requires a clock");
    const BitLayout& layout = config_.layout;
    if (config_.machine_id > layout.machine_mask()) {
      throw Error(ErrorCode::kInvalidConfig,
                  "machine_id " + std::to_string(config_.machine_id) + " does not fit in " +
                      std::to_string(layout.machine_bits()) + " bits");
    }
    if (config_.region > layout.region_mask()) {
      throw Error(ErrorCode::kInvalidConfig,
                  "region " + std::to_string(config_.region) + " does not fit in " +
                      std::to_string(layout.region_bits()) + " bits");
    }
    const std::uint64_t now = clock_->now_millis();
    if (config_.epoch_millis > now) {
      throw Error(ErrorCode::kInvalidConfig,
                  "epoch " + std::to_string(config_.epoch_millis) +
                      " is in the future of the clock reading " + std::to_string(now));
    }
    if (config_.max_batch == 0) {
      throw Error(ErrorCode::kInvalidConfig, "max_batch must be at least 1");
    }
  }

  Generator(const Generator&) = delete;
  Generator& operator=(const Generator&) = delete;

  std::uint64_t next_id() {
    std::lock_guard lock(mutex_);
    return issue_locked();
  }

  std::vector<std::uint64_t> next_batch(std::size_t count) {
    if (count == 0) throw Error(ErrorCode::kInvalidArgument, "batch count must be at least 1");
    if (count > config_.max_batch) {
      throw Error(ErrorCode::kBatchTooLarge, "batch count " + std::to_string(count) +
                                                 " exceeds cap " +
                                                 std::to_string(config_.max_batch));
    }
    std::vector<std::uint64_t> ids;
    ids.reserve(count);
    std::lock_guard lock(mutex_);
    for (std::size_t i = 0; i < count; ++i) ids.push_back(issue_locked());
    return ids;
  }

  GeneratorStats stats() const {
    std::lock_guard lock(mutex_);
    return stats_;
  }

  const GeneratorConfig& config() const noexcept { return config_; }
  const BitLayout& layout() const noexcept { return config_.layout; }
  ClockSource& clock() const noexcept { return *clock_; }

 private:
  std::uint64_t issue_locked() {
    const BitLayout& layout = config_.layout;
    const std::uint64_t last = stats_.last_time;
    std::uint64_t now = clock_->now_millis();
    bool waited_regression = false;
    bool waited_overflow = false;

    if (issued_any_ && now < last) {
      const std::uint64_t offset = last - now;
      if (offset > config_.max_backward_tolerance_ms) {
        throw Error(ErrorCode::kClockMovedBackwards,
                    "clock moved backwards by " + std::to_string(offset) +
                        " ms, tolerance is " +
                        std::to_string(config_.max_backward_tolerance_ms) + " ms");
      }
      clock_->sleep_for(offset + 1);
      now = clock_->now_millis();
      if (now < last) {
        throw Error(ErrorCode::kClockMovedBackwards,
                    "clock still " + std::to_string(last - now) +
                        " ms behind after waiting out a regression of " +
                        std::to_string(offset) + " ms");
      }
      waited_regression = true;
    }

    std::uint64_t sequence = 0;
    if (issued_any_ && now == last) {
      sequence = (stats_.sequence + 1) & layout.sequence_mask();
      if (sequence == 0) {
        now = clock_->wait_until_after(last);
        waited_overflow = true;
      }
    }

    if (now < config_.epoch_millis) {
      throw Error(ErrorCode::kClockMovedBackwards,
                  "clock reading " + std::to_string(now) + " precedes the epoch " +
                      std::to_string(config_.epoch_millis));
    }
    const std::uint64_t offset = now - config_.epoch_millis;
    if (offset > layout.timestamp_mask()) {
      throw Error(ErrorCode::kTimestampExhausted,
                  "timestamp offset " + std::to_string(offset) + " ms no longer fits in " +
                      std::to_string(layout.timestamp_bits()) + " bits");
    }

    const std::uint64_t id = (offset << layout.timestamp_shift()) |
                             (config_.region << layout.region_shift()) |
                             (std::uint64_t{config_.machine_id} << layout.machine_shift()) |
                             sequence;

    issued_any_ = true;
    stats_.last_time = now;
    stats_.sequence = sequence;
    ++stats_.ids_issued;
    if (waited_regression) ++stats_.regression_waits;
    if (waited_overflow) ++stats_.overflow_waits;
    return id;
  }

  const GeneratorConfig config_;
  std::shared_ptr<ClockSource> clock_;
  mutable std::mutex mutex_;
  GeneratorStats stats_;
  bool issued_any_ = false;
};

}  // namespace flakeless
