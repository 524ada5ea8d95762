#pragma once

#include <stdexcept>
#include <string>
#include <vector>

namespace enercast {

/// Input data failed a structural or range check (bad row, duplicate key, ...).
struct ValidationError : std::runtime_error {
    explicit ValidationError(const std::string& msg) : std::runtime_error(msg) {}
};

/// Numeric evaluation left its domain (log of a negative, degenerate density, ...).
struct EvaluationError : std::runtime_error {
    explicit EvaluationError(const std::string& msg) : std::runtime_error(msg) {}
};

/// Configuration rejected; `issues` carries every violation found.
struct ConfigError : std::runtime_error {
    std::vector<std::string> issues;
    explicit ConfigError(std::vector<std::string> list)
        : std::runtime_error(join(list)), issues(std::move(list)) {}

  private:
    static std::string join(const std::vector<std::string>& list) {
        std::string out = "invalid configuration:";
        for (const auto& s : list) {
            out += "\n  - " + s;
        }
        return out;
    }
};

}  // namespace enercast
