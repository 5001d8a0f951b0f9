#pragma once

#include <cstddef>
#include <cstdint>
#include <string_view>

namespace dcl {

inline constexpr std::uint64_t kFnvOffset = 0xcbf29ce484222325ULL;

/// 64-bit FNV-1a, chainable through `state`.
inline std::uint64_t fnv1a(const void* data, std::size_t size, std::uint64_t state = kFnvOffset) {
  const auto* bytes = static_cast<const unsigned char*>(data);
  for (std::size_t i = 0; i < size; ++i) {
    state ^= bytes[i];
    state *= 0x100000001b3ULL;
  }
  return state;
}

inline std::uint64_t fnv1a(std::string_view text, std::uint64_t state = kFnvOffset) {
  return fnv1a(text.data(), text.size(), state);
}

}  // namespace dcl
