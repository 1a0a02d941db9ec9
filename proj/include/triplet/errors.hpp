#pragma once

#include <stdexcept>
#include <string>
#include <vector>

namespace triplet {

// Every failure the library raises derives from Error so the CLI can map the
// whole family onto exit code 1 without catching unrelated exceptions.
class Error : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

class ConfigError : public Error {
public:
    ConfigError(std::string key, const std::string& what)
        : Error("configuration error [" + key + "]: " + what), key_(std::move(key)) {}
    explicit ConfigError(const std::string& what) : Error("configuration error: " + what) {}

    const std::string& key() const noexcept { return key_; }

private:
    std::string key_;
};

class ValidationError : public Error {
public:
    explicit ValidationError(std::vector<std::string> violations)
        : Error(join(violations)), violations_(std::move(violations)) {}

    const std::vector<std::string>& violations() const noexcept { return violations_; }

private:
    static std::string join(const std::vector<std::string>& v) {
        std::string out = "validation failed:";
        for (const auto& s : v) out += "\n  - " + s;
        return out;
    }
    std::vector<std::string> violations_;
};

class ShapeError : public Error {
public:
    using Error::Error;
};

class IncompatibilityError : public Error {
public:
    using Error::Error;
};

class IntegrityError : public Error {
public:
    using Error::Error;
};

class NumericError : public Error {
public:
    using Error::Error;
};

class LabelError : public Error {
public:
    using Error::Error;
};

class ManifestError : public Error {
public:
    using Error::Error;
};

class IterationError : public Error {
public:
    using Error::Error;
};

class EvaluationError : public Error {
public:
    using Error::Error;
};

}  // namespace triplet
