#pragma once

#include "mnde/model.hpp"
#include "mnde/training.hpp"

#include <filesystem>
#include <iosfwd>
#include <map>
#include <set>
#include <string>
#include <vector>

namespace mnde {

enum ExitCode { kExitOk = 0, kExitUsage = 1, kExitData = 2, kExitNumeric = 3 };

/// Flat key=value run configuration. Every key has a default; unknown keys are rejected.
class RunConfig {
public:
    RunConfig();

    /// Parses "key = value" lines; '#' starts a comment.
    static RunConfig parse(const std::string& text, const std::string& source = "<config>");
    static RunConfig load(const std::filesystem::path& file);

    static const std::vector<std::string>& keys();
    static bool known(const std::string& key);

    void set(const std::string& key, const std::string& value);
    const std::string& get(const std::string& key) const;
    /// True once the key was given explicitly (file or flag), even if to its default.
    bool is_set(const std::string& key) const { return set_.count(key) != 0; }

    std::string text(const std::string& key) const { return get(key); }
    double real(const std::string& key) const;     // accepts "a/b" fractions
    std::size_t count(const std::string& key) const;
    bool flag(const std::string& key) const;
    std::vector<std::size_t> counts(const std::string& key) const;  // comma-separated
    std::vector<double> reals(const std::string& key) const;

    /// Model dimensions; n is taken from `n_override` when the key is 0.
    ModelConfig model(std::size_t n_override = 0) const;
    TrainConfig training() const;

private:
    std::map<std::string, std::string> values_;
    std::set<std::string> set_;
};

/// Runs one command: argv without the program name, e.g. {"train", "--config", "run.cfg", "--epochs", "3"}.
/// Normal output goes to `out`, diagnostics to `err`; returns an ExitCode.
int run_cli(const std::vector<std::string>& args, std::ostream& out, std::ostream& err);

} // namespace mnde
