#pragma once

#include <cstdint>
#include <optional>
#include <string>
#include <string_view>

namespace dflshield {

using NodeId = std::uint32_t;

/// Fabric identity of the coordinating controller.
inline constexpr NodeId kControllerId = 0xFFFF'FFF0;

/// Participant role R(p_i).
enum class Role : std::uint8_t { idle, trainer, aggregator, proxy };

enum class SecuritySetting : std::uint8_t { baseline, encryption, encryption_mtd };

std::string_view to_string(Role r);
std::optional<Role> parse_role(std::string_view s);

std::string_view to_string(SecuritySetting s);
std::optional<SecuritySetting> parse_security(std::string_view s);

inline bool uses_encryption(SecuritySetting s) { return s != SecuritySetting::baseline; }
inline bool uses_mtd(SecuritySetting s) { return s == SecuritySetting::encryption_mtd; }

/// Roles that take part in model exchange as receivers.
inline bool consumes_models(Role r) { return r == Role::aggregator || r == Role::proxy; }
inline bool produces_models(Role r) { return r != Role::idle; }

}  // namespace dflshield
