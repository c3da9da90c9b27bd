#pragma once

#include <string_view>

#include <nlohmann/json.hpp>

namespace decay_bench::log {

enum class Level { debug, info, warn, error };

/// Structured logging: every call emits one JSON object per line to stderr
/// (`{"ts":..., "level":..., "event":..., ...fields}`).
void emit(Level level, std::string_view event, const nlohmann::json& fields = nlohmann::json::object());

inline void info(std::string_view event, const nlohmann::json& fields = nlohmann::json::object()) {
    emit(Level::info, event, fields);
}
inline void warn(std::string_view event, const nlohmann::json& fields = nlohmann::json::object()) {
    emit(Level::warn, event, fields);
}
inline void error(std::string_view event, const nlohmann::json& fields = nlohmann::json::object()) {
    emit(Level::error, event, fields);
}
inline void debug(std::string_view event, const nlohmann::json& fields = nlohmann::json::object()) {
    emit(Level::debug, event, fields);
}

void set_min_level(Level level);

}  // namespace decay_bench::log
