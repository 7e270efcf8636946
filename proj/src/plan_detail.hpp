#pragma once

#include <optional>
#include <string>
#include <string_view>
#include <vector>

namespace lro::detail {

/// Exact name first, then the name with a "Relation." qualifier stripped.
std::optional<std::string> resolve_column(const std::vector<std::string>& columns, std::string_view name);

inline constexpr const char* kClusterColumn = "cluster";
inline constexpr const char* kCountColumn = "count";

}  // namespace lro::detail
