#pragma once

#include <cstdint>
#include <span>
#include <string_view>

namespace flakeless {

inline constexpr std::uint64_t kFnv64OffsetBasis = 14695981039346656037ULL;
inline constexpr std::uint64_t kFnv64Prime = 1099511628211ULL;

/// Incremental 64-bit FNV-1a.
class Fnv1a64 {
 public:
  constexpr Fnv1a64& update(std::uint8_t byte) noexcept {
    state_ ^= byte;
    state_ *= kFnv64Prime;
    return *this;
  }

  constexpr Fnv1a64& update(std::string_view bytes) noexcept {
    for (char c : bytes) update(static_cast<std::uint8_t>(c));
    return *this;
  }

  constexpr Fnv1a64& update(std::span<const std::uint8_t> bytes) noexcept {
    for (std::uint8_t b : bytes) update(b);
    return *this;
  }

  constexpr std::uint64_t digest() const noexcept { return state_; }

 private:
  std::uint64_t state_ = kFnv64OffsetBasis;
};

constexpr std::uint64_t fnv1a64(std::string_view bytes) noexcept {
  return Fnv1a64{}.update(bytes).digest();
}

static_assert(fnv1a64("") == 0xcbf29ce484222325ULL);
static_assert(fnv1a64("a") == 0xaf63dc4c8601ec8cULL);

}  // namespace flakeless
