#pragma once

#include <filesystem>
#include <functional>
#include <memory>
#include <string>
#include <string_view>

#include <json.hpp>

namespace triplet::log {

enum class Level { Debug = 0, Info = 1, Warn = 2, Error = 3 };

// Structured JSON-lines logging. Records go to stderr (filtered by the
// global verbosity) and, when a run log is attached, to that file as well.
using Sink = std::function<void(Level, const nlohmann::json&)>;

void set_verbosity(Level min_level);
Level verbosity();

/// Replaces the stderr sink; returns the previous one. Used by tests to
/// capture warnings.
Sink set_sink(Sink sink);

/// Attaches a JSON-lines file receiving every record regardless of level.
void attach_file(const std::filesystem::path& path);
void detach_file();

void emit(Level level, nlohmann::json record);

inline void debug(std::string_view msg) { emit(Level::Debug, {{"msg", msg}}); }
inline void info(std::string_view msg) { emit(Level::Info, {{"msg", msg}}); }
inline void warn(std::string_view msg) { emit(Level::Warn, {{"msg", msg}}); }
inline void error(std::string_view msg) { emit(Level::Error, {{"msg", msg}}); }

/// Captures warnings for the lifetime of the object.
class WarningCapture {
public:
    WarningCapture();
    ~WarningCapture();
    WarningCapture(const WarningCapture&) = delete;
    WarningCapture& operator=(const WarningCapture&) = delete;

    const std::vector<std::string>& messages() const noexcept { return messages_; }
    bool contains(std::string_view needle) const;

private:
    Sink previous_;
    std::vector<std::string> messages_;
};

}  // namespace triplet::log
