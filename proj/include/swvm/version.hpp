#pragma once

#include <compare>
#include <cstddef>
#include <cstdint>
#include <functional>
#include <limits>
#include <ostream>

namespace swvm {

/// Names one version of the shared object: a timestamp plus the slot it occupies.
struct VersionId {
  std::uint64_t timestamp = std::numeric_limits<std::uint64_t>::max();
  std::uint32_t index = std::numeric_limits<std::uint32_t>::max();

  static constexpr VersionId empty() noexcept { return VersionId{}; }
  constexpr bool is_empty() const noexcept { return *this == empty(); }

  friend constexpr bool operator==(const VersionId&, const VersionId&) = default;
  friend constexpr auto operator<=>(const VersionId&, const VersionId&) = default;
};

inline std::ostream& operator<<(std::ostream& os, const VersionId& v) {
  if (v.is_empty()) return os << "<empty>";
  return os << '<' << v.timestamp << ',' << v.index << '>';
}

/// Operation classes of the version maintenance object.
enum class OpClass : std::uint8_t { acquire, release, set };

}  // namespace swvm

template <>
struct std::hash<swvm::VersionId> {
  std::size_t operator()(const swvm::VersionId& v) const noexcept {
    return std::hash<std::uint64_t>{}(v.timestamp * 0x9e3779b97f4a7c15ULL ^ v.index);
  }
};
