#include "decay_bench/log.hpp"

#include <atomic>
#include <chrono>
#include <cstdio>
#include <mutex>

namespace decay_bench::log {

namespace {

std::atomic<Level> g_min_level{Level::info};
std::mutex g_mutex;

const char* level_name(Level level) {
    switch (level) {
        case Level::debug: return "debug";
        case Level::info: return "info";
        case Level::warn: return "warn";
        case Level::error: return "error";
    }
    return "info";
}

}  // namespace

void set_min_level(Level level) { g_min_level = level; }

void emit(Level level, std::string_view event, const nlohmann::json& fields) {
    if (level < g_min_level.load()) return;
    nlohmann::json line = fields.is_object() ? fields : nlohmann::json{{"data", fields}};
    const auto now = std::chrono::system_clock::now().time_since_epoch();
    line["ts"] = std::chrono::duration<double>(now).count();
    line["level"] = level_name(level);
    line["event"] = std::string(event);
    const std::string text = line.dump() + "\n";
    std::lock_guard lock(g_mutex);
    std::fputs(text.c_str(), stderr);
}

}  // namespace decay_bench::log
