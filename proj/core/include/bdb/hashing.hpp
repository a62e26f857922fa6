#pragma once

#include <json.hpp>

#include <span>
#include <string>
#include <string_view>

namespace bdb {

std::string sha256_hex(std::span<const std::byte> bytes);
std::string sha256_hex(std::string_view text);

/// Stable digest of a config document. Object keys are emitted in sorted
/// order and numbers in shortest round-trip form, so two documents that
/// compare equal always hash equal.
std::string config_hash(const nlohmann::json& config);

}  // namespace bdb
