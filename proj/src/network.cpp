#include "mdda/network.hpp"

#include <algorithm>
#include <cctype>

namespace mdda {

void ModelConfig::validate() const {
    if (base_dim <= 0 || base_dim % 2 != 0)
        throw ConfigError("base_dim must be positive and even, got " + std::to_string(base_dim));
    for (int i = 0; i < 6; ++i)
        if (mdab_counts[i] < 0) throw ConfigError("mdab_counts[" + std::to_string(i) + "] is negative");
    if (etb_count < 0) throw ConfigError("etb_count is negative");
    if (stage_types.size() != 7)
        throw ConfigError("stage_types must have 7 slots, got '" + stage_types + "'");
    for (char t : stage_types)
        if (t != 'C' && t != 'T') throw ConfigError("stage_types may only contain C or T, got '" + stage_types + "'");
    if (heads <= 0) throw ConfigError("heads must be positive");
    for (int s = 0; s < 7; ++s) {
        const int width = block_width(s);
        const char* stage = kStageNames[s];
        if (stage_is_etb(s)) {
            if (width % heads != 0)
                throw ConfigError(std::string("stage ") + stage + ": width " + std::to_string(width) +
                                  " not divisible by heads " + std::to_string(heads));
            const int ec = static_cast<int>(expansion_etb * width + 0.5);
            if (ec <= 0 || ec % 2 != 0)
                throw ConfigError(std::string("stage ") + stage + ": ETB ffn width " + std::to_string(ec) +
                                  " must be positive and even");
        } else {
            const int ec = static_cast<int>(expansion_mdab * width + 0.5);
            if (ec <= 0 || ec % 2 != 0)
                throw ConfigError(std::string("stage ") + stage + ": MDAB expanded width " + std::to_string(ec) +
                                  " must be positive and even");
        }
    }
}

void parse_stage_types(const std::string& text, std::string& out) {
    std::string s;
    for (char c : text)
        if (c != '-' && c != ',' && c != ' ') s.push_back(static_cast<char>(std::toupper(c)));
    if (s.size() == 3)  // shorthand like "C-T-C": encoder/decoder letter + latent letter
        s = std::string(3, s[0]) + s[1] + std::string(3, s[2]);
    if (s.size() != 7)
        throw ConfigError("stage_types '" + text + "' must name 7 stages or use the 3-letter shorthand");
    out = s;
}

}  // namespace mdda
