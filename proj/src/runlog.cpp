#include "triplet/runlog.hpp"

#include <chrono>
#include <fstream>
#include <iostream>
#include <mutex>

namespace triplet::log {

namespace {

struct State {
    std::mutex mu;
    Level min_level = Level::Info;
    Sink sink;
    std::unique_ptr<std::ofstream> file;
};

State& state() {
    static State s;
    return s;
}

const char* level_name(Level l) {
    switch (l) {
        case Level::Debug: return "debug";
        case Level::Info: return "info";
        case Level::Warn: return "warn";
        case Level::Error: return "error";
    }
    return "info";
}

}  // namespace

void set_verbosity(Level min_level) {
    std::lock_guard lock(state().mu);
    state().min_level = min_level;
}

Level verbosity() {
    std::lock_guard lock(state().mu);
    return state().min_level;
}

Sink set_sink(Sink sink) {
    std::lock_guard lock(state().mu);
    return std::exchange(state().sink, std::move(sink));
}

void attach_file(const std::filesystem::path& path) {
    std::lock_guard lock(state().mu);
    if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
    state().file = std::make_unique<std::ofstream>(path, std::ios::app);
}

void detach_file() {
    std::lock_guard lock(state().mu);
    state().file.reset();
}

void emit(Level level, nlohmann::json record) {
    record["level"] = level_name(level);
    const auto now = std::chrono::system_clock::now().time_since_epoch();
    record["ts"] = std::chrono::duration<double>(now).count();

    Sink sink;
    {
        std::lock_guard lock(state().mu);
        if (state().file) *state().file << record.dump() << "\n" << std::flush;
        if (level < state().min_level) return;
        sink = state().sink;
    }
    if (sink) sink(level, record);
    else std::cerr << record.dump() << "\n";
}

WarningCapture::WarningCapture() {
    previous_ = set_sink([this](Level l, const nlohmann::json& r) {
        if (l >= Level::Warn) messages_.push_back(r.value("msg", std::string()));
    });
}

WarningCapture::~WarningCapture() { set_sink(std::move(previous_)); }

bool WarningCapture::contains(std::string_view needle) const {
    for (const auto& m : messages_)
        if (m.find(needle) != std::string::npos) return true;
    return false;
}

}  // namespace triplet::log
