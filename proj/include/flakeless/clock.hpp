#pragma once

#include <chrono>
#include <condition_variable>
#include <cstdint>
#include <mutex>
#include <string>
#include <thread>

#include "flakeless/error.hpp"

namespace flakeless {

/// Millisecond time source shared by the generator and the simulator.
/// Readings are Unix-epoch milliseconds; the generator applies its own epoch.
class ClockSource {
 public:
  virtual ~ClockSource() = default;

  virtual std::uint64_t now_millis() const = 0;

  /// Returns the first reading strictly greater than `last`.
  virtual std::uint64_t wait_until_after(std::uint64_t last) = 0;

  /// Blocks the calling thread for roughly `millis` of this clock's time.
  virtual void sleep_for(std::uint64_t millis) = 0;
};

class WallClock final : public ClockSource {
 public:
  std::uint64_t now_millis() const override {
    using namespace std::chrono;
    return static_cast<std::uint64_t>(
        duration_cast<milliseconds>(system_clock::now().time_since_epoch()).count());
  }

  // Spins, yielding between polls. Residence is bounded by about one
  // millisecond when called after sequence exhaustion.
  std::uint64_t wait_until_after(std::uint64_t last) override {
    std::uint64_t now = now_millis();
    while (now <= last) {
      std::this_thread::yield();
      now = now_millis();
    }
    return now;
  }

  void sleep_for(std::uint64_t millis) override {
    std::this_thread::sleep_for(std::chrono::milliseconds(millis));
  }
};

/// Manually driven clock for tests, benchmarks and simulation.
///
/// wait_until_after() never invents time on its own unless auto-advance is
/// enabled. Otherwise it waits up to the stall timeout for another thread to
/// advance the clock and throws SimulationStall if nobody does. The default
/// timeout is zero, so a single-threaded caller that forgets to advance the
/// clock fails immediately instead of hanging.
class VirtualClock final : public ClockSource {
 public:
  explicit VirtualClock(std::uint64_t start_millis = 0) : now_(start_millis) {}

  std::uint64_t now_millis() const override {
    std::lock_guard lock(mutex_);
    return now_;
  }

  std::uint64_t wait_until_after(std::uint64_t last) override {
    std::unique_lock lock(mutex_);
    if (now_ > last) return now_;
    if (auto_advance_) {
      now_ = last + 1;
      ++auto_advances_;
      changed_.notify_all();
      return now_;
    }
    if (stall_timeout_.count() > 0 &&
        changed_.wait_for(lock, stall_timeout_, [&] { return now_ > last; })) {
      return now_;
    }
    throw Error(ErrorCode::kSimulationStall,
                "virtual clock stalled at " + std::to_string(now_) +
                    " while waiting for a reading after " + std::to_string(last));
  }

  // Time passes while the caller sleeps, unless frozen for a test scenario.
  void sleep_for(std::uint64_t millis) override {
    std::lock_guard lock(mutex_);
    ++sleeps_;
    if (sleep_advances_) {
      now_ += millis;
      changed_.notify_all();
    }
  }

  void set(std::uint64_t millis) {
    std::lock_guard lock(mutex_);
    now_ = millis;
    changed_.notify_all();
  }

  void advance(std::uint64_t millis) {
    std::lock_guard lock(mutex_);
    now_ += millis;
    changed_.notify_all();
  }

  /// Steps the clock backwards, as an NTP correction would.
  void regress(std::uint64_t millis) {
    std::lock_guard lock(mutex_);
    now_ = millis > now_ ? 0 : now_ - millis;
  }

  void set_auto_advance(bool enabled) {
    std::lock_guard lock(mutex_);
    auto_advance_ = enabled;
  }

  void set_stall_timeout(std::chrono::milliseconds timeout) {
    std::lock_guard lock(mutex_);
    stall_timeout_ = timeout;
  }

  void set_sleep_advances(bool enabled) {
    std::lock_guard lock(mutex_);
    sleep_advances_ = enabled;
  }

  std::uint64_t auto_advances() const {
    std::lock_guard lock(mutex_);
    return auto_advances_;
  }

  std::uint64_t sleeps() const {
    std::lock_guard lock(mutex_);
    return sleeps_;
  }

 private:
  mutable std::mutex mutex_;
  std::condition_variable changed_;
  std::uint64_t now_;
  bool auto_advance_ = false;
  bool sleep_advances_ = true;
  std::chrono::milliseconds stall_timeout_{0};
  std::uint64_t auto_advances_ = 0;
  std::uint64_t sleeps_ = 0;
};

}  // namespace flakeless
