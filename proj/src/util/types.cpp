#include "dflshield/util/types.hpp"

namespace dflshield {

std::string_view to_string(Role r) {
    switch (r) {
        case Role::idle: return "idle";
        case Role::trainer: return "trainer";
        case Role::aggregator: return "aggregator";
        case Role::proxy: return "proxy";
    }
    return "unknown";
}

std::optional<Role> parse_role(std::string_view s) {
    if (s == "idle") return Role::idle;
    if (s == "trainer") return Role::trainer;
    if (s == "aggregator") return Role::aggregator;
    if (s == "proxy") return Role::proxy;
    return std::nullopt;
}

std::string_view to_string(SecuritySetting s) {
    switch (s) {
        case SecuritySetting::baseline: return "baseline";
        case SecuritySetting::encryption: return "encryption";
        case SecuritySetting::encryption_mtd: return "encryption_mtd";
    }
    return "unknown";
}

std::optional<SecuritySetting> parse_security(std::string_view s) {
    if (s == "baseline") return SecuritySetting::baseline;
    if (s == "encryption") return SecuritySetting::encryption;
    if (s == "encryption_mtd" || s == "encryption-mtd" || s == "mtd") {
        return SecuritySetting::encryption_mtd;
    }
    return std::nullopt;
}

}  // namespace dflshield
