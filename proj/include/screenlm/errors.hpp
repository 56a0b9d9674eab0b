#pragma once

#include <stdexcept>
#include <string>
#include <utility>
#include <vector>

namespace screenlm {

// CLI exit codes. Library code throws; tools map exception type to code.
enum ExitCode : int {
    exit_ok = 0,
    exit_unexpected = 1,
    exit_config = 2,
    exit_data = 3,
    exit_scoring = 4,
};

class ConfigError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

class ParseError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

class ValidationError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

class ScoringError : public std::runtime_error {
public:
    explicit ScoringError(const std::string& msg, std::vector<std::string> failed_docs = {})
        : std::runtime_error(msg), failed_docs_(std::move(failed_docs)) {}

    const std::vector<std::string>& failed_docs() const { return failed_docs_; }

private:
    std::vector<std::string> failed_docs_;
};

} // namespace screenlm
