#include "mdda/runconfig.hpp"

#include <algorithm>
#include <array>
#include <fstream>
#include <sstream>

namespace mdda {

namespace {

const std::array<const char*, 30> kKnownKeys = {
    // model
    "base_dim", "mdab_counts", "etb_count", "stage_types", "expansion_mdab",
    "expansion_etb", "heads", "ffn_shortcut_source",
    // schedule / training
    "lr_init", "lr_min", "steps", "batch", "seed", "threads", "eval_every",
    "checkpoint_every", "patch_size", "patches_per_image", "holdout",
    // degradation
    "degrade", "sigma", "rain_count", "rain_length", "rain_angle",
    "rain_intensity", "haze_beta", "haze_airlight", "haze_depth",
    // paths
    "clean_dir", "data_dir",
};

std::string trim(const std::string& s) {
    const auto a = s.find_first_not_of(" \t\r\n");
    if (a == std::string::npos) return "";
    const auto b = s.find_last_not_of(" \t\r\n");
    return s.substr(a, b - a + 1);
}

double to_double(const std::string& key, const std::string& v) {
    try {
        size_t used = 0;
        const double d = std::stod(v, &used);
        if (used != v.size()) throw std::invalid_argument(v);
        return d;
    } catch (const std::exception&) {
        throw ConfigError("key '" + key + "': '" + v + "' is not a number");
    }
}

int64_t to_int(const std::string& key, const std::string& v) {
    try {
        size_t used = 0;
        const long long i = std::stoll(v, &used);
        if (used != v.size()) throw std::invalid_argument(v);
        return i;
    } catch (const std::exception&) {
        throw ConfigError("key '" + key + "': '" + v + "' is not an integer");
    }
}

}  // namespace

RunConfig::RunConfig() {
    values_["base_dim"] = "8";
    values_["mdab_counts"] = "1,1,1,1,1,1";
    values_["etb_count"] = "2";
    values_["stage_types"] = "CCCTCCC";
    values_["expansion_mdab"] = "1";
    values_["expansion_etb"] = "2";
    values_["heads"] = "1";
    values_["ffn_shortcut_source"] = "block_input";
    values_["lr_init"] = "2e-4";
    values_["lr_min"] = "1e-6";
    values_["steps"] = "500";
    values_["batch"] = "4";
    values_["seed"] = "0";
    values_["threads"] = "0";
    values_["eval_every"] = "100";
    values_["checkpoint_every"] = "100";
    values_["patch_size"] = "32";
    values_["patches_per_image"] = "16";
    values_["holdout"] = "2";
    values_["degrade"] = "gaussian_noise";
    values_["sigma"] = "25";
    values_["rain_count"] = "40";
    values_["rain_length"] = "16";
    values_["rain_angle"] = "75";
    values_["rain_intensity"] = "0.5";
    values_["haze_beta"] = "1.0";
    values_["haze_airlight"] = "0.8";
    values_["haze_depth"] = "linear-gradient";
    values_["clean_dir"] = "";
    values_["data_dir"] = "";
}

RunConfig RunConfig::from_file(const std::string& path) {
    std::ifstream f(path);
    if (!f) throw IoError("cannot open config '" + path + "'");
    RunConfig cfg;
    std::string line;
    int lineno = 0;
    while (std::getline(f, line)) {
        ++lineno;
        const auto hash = line.find('#');
        if (hash != std::string::npos) line.erase(hash);
        line = trim(line);
        if (line.empty()) continue;
        const auto eq = line.find('=');
        if (eq == std::string::npos)
            throw ConfigError(path + ":" + std::to_string(lineno) + ": expected 'key = value'");
        cfg.set(trim(line.substr(0, eq)), trim(line.substr(eq + 1)));
    }
    return cfg;
}

void RunConfig::set(const std::string& key, const std::string& value) {
    if (std::find_if(kKnownKeys.begin(), kKnownKeys.end(),
                     [&](const char* k) { return key == k; }) == kKnownKeys.end())
        throw ConfigError("unknown config key '" + key + "'");
    values_[key] = value;
}

std::string RunConfig::get(const std::string& key) const {
    auto it = values_.find(key);
    if (it == values_.end()) throw ConfigError("unknown config key '" + key + "'");
    return it->second;
}

std::string RunConfig::render() const {
    std::ostringstream out;
    for (const char* key : kKnownKeys) out << key << " = " << values_.at(key) << "\n";
    return out.str();
}

void RunConfig::write(const std::string& path) const {
    std::ofstream f(path, std::ios::trunc);
    if (!f) throw IoError("cannot write '" + path + "'");
    f << render();
}

ModelConfig RunConfig::model_config() const {
    ModelConfig m;
    m.base_dim = static_cast<int>(to_int("base_dim", get("base_dim")));
    {
        std::istringstream cs(get("mdab_counts"));
        std::string tok;
        for (int i = 0; i < 6; ++i) {
            if (!std::getline(cs, tok, ','))
                throw ConfigError("mdab_counts needs 6 comma-separated integers");
            m.mdab_counts[i] = static_cast<int>(to_int("mdab_counts", trim(tok)));
        }
    }
    m.etb_count = static_cast<int>(to_int("etb_count", get("etb_count")));
    parse_stage_types(get("stage_types"), m.stage_types);
    m.expansion_mdab = to_double("expansion_mdab", get("expansion_mdab"));
    m.expansion_etb = to_double("expansion_etb", get("expansion_etb"));
    m.heads = static_cast<int>(to_int("heads", get("heads")));
    const std::string src = get("ffn_shortcut_source");
    if (src == "block_input") m.ffn_shortcut = FfnShortcutSource::kBlockInput;
    else if (src == "tsa_output") m.ffn_shortcut = FfnShortcutSource::kTsaOutput;
    else throw ConfigError("ffn_shortcut_source must be block_input or tsa_output, got '" + src + "'");
    m.validate();
    return m;
}

Schedule RunConfig::schedule(int64_t total_steps) const {
    Schedule s;
    s.lr_init = to_double("lr_init", get("lr_init"));
    s.lr_min = to_double("lr_min", get("lr_min"));
    s.total_steps = std::max<int64_t>(total_steps, 1);
    return s;
}

DegradeSpec RunConfig::degrade_spec() const {
    DegradeSpec s = parse_degrade_kind(get("degrade"));
    s.sigma = to_double("sigma", get("sigma"));
    s.rain_count = static_cast<int>(to_int("rain_count", get("rain_count")));
    s.rain_length = to_double("rain_length", get("rain_length"));
    s.rain_angle = to_double("rain_angle", get("rain_angle"));
    s.rain_intensity = to_double("rain_intensity", get("rain_intensity"));
    s.haze_beta = to_double("haze_beta", get("haze_beta"));
    s.haze_airlight = to_double("haze_airlight", get("haze_airlight"));
    const std::string depth = get("haze_depth");
    if (depth == "linear-gradient") s.haze_depth = HazeDepth::kLinearGradient;
    else if (depth == "radial") s.haze_depth = HazeDepth::kRadial;
    else throw ConfigError("haze_depth must be linear-gradient or radial, got '" + depth + "'");
    s.rng_seed = seed();
    s.validate();
    return s;
}

int64_t RunConfig::steps() const { return to_int("steps", get("steps")); }
int RunConfig::batch() const { return static_cast<int>(to_int("batch", get("batch"))); }
uint64_t RunConfig::seed() const { return static_cast<uint64_t>(to_int("seed", get("seed"))); }
int RunConfig::threads() const { return static_cast<int>(to_int("threads", get("threads"))); }
int RunConfig::eval_every() const { return static_cast<int>(to_int("eval_every", get("eval_every"))); }
int RunConfig::checkpoint_every() const { return static_cast<int>(to_int("checkpoint_every", get("checkpoint_every"))); }
int RunConfig::patch_size() const { return static_cast<int>(to_int("patch_size", get("patch_size"))); }
int RunConfig::patches_per_image() const { return static_cast<int>(to_int("patches_per_image", get("patches_per_image"))); }
int RunConfig::holdout_count() const { return static_cast<int>(to_int("holdout", get("holdout"))); }

}  // namespace mdda
