#pragma once

// Structured-text run configuration: one "key = value" pair per line, '#'
// comments. Unknown keys are rejected; CLI flags override file keys. The
// effective configuration is echoed to the run directory before execution.

#include <map>
#include <string>

#include "mdda/data.hpp"
#include "mdda/network.hpp"
#include "mdda/train.hpp"

namespace mdda {

class RunConfig {
public:
    RunConfig();  // defaults only

    static RunConfig from_file(const std::string& path);

    void set(const std::string& key, const std::string& value);  // validates the key
    std::string get(const std::string& key) const;
    bool has(const std::string& key) const { return !get(key).empty(); }

    void write(const std::string& path) const;  // effective-config echo
    std::string render() const;

    ModelConfig model_config() const;
    Schedule schedule(int64_t total_steps) const;
    DegradeSpec degrade_spec() const;

    int64_t steps() const;
    int batch() const;
    uint64_t seed() const;
    int threads() const;
    int eval_every() const;
    int checkpoint_every() const;
    int patch_size() const;
    int patches_per_image() const;
    int holdout_count() const;

private:
    std::map<std::string, std::string> values_;
};

}  // namespace mdda
