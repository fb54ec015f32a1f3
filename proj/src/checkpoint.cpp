#include "mdda/checkpoint.hpp"

#include <cstdio>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <map>
#include <sstream>

namespace mdda {

static_assert(sizeof(float) == 4 && std::numeric_limits<float>::is_iec559,
              "checkpoint format requires IEEE-754 binary32");

namespace {

std::string fmt_double(double v) {
    char buf[32];
    std::snprintf(buf, sizeof buf, "%.17g", v);
    return buf;
}

struct ManifestEntry {
    std::string name;
    Shape4 shape;
};

std::string shortcut_name(FfnShortcutSource s) {
    return s == FfnShortcutSource::kBlockInput ? "block_input" : "tsa_output";
}

FfnShortcutSource parse_shortcut(const std::string& v) {
    if (v == "block_input") return FfnShortcutSource::kBlockInput;
    if (v == "tsa_output") return FfnShortcutSource::kTsaOutput;
    throw IoError("checkpoint: bad ffn_shortcut_source '" + v + "'");
}

void write_f32_le(std::ofstream& f, const float* data, size_t count) {
    // x86-64/aarch64 are little-endian; the static_assert above plus this
    // memcpy keeps the on-disk format explicit.
    f.write(reinterpret_cast<const char*>(data), static_cast<std::streamsize>(count * 4));
}

}  // namespace

void save_checkpoint(const Model<float>& m, const AdamW<float>& opt, const std::string& path) {
    std::ostringstream hdr;
    const auto& c = m.cfg;
    hdr << "version 1\n";
    hdr << "seed " << m.seed << "\n";
    hdr << "config.base_dim " << c.base_dim << "\n";
    hdr << "config.mdab_counts ";
    for (int i = 0; i < 6; ++i) hdr << (i ? "," : "") << c.mdab_counts[i];
    hdr << "\n";
    hdr << "config.etb_count " << c.etb_count << "\n";
    hdr << "config.stage_types " << c.stage_types << "\n";
    hdr << "config.expansion_mdab " << fmt_double(c.expansion_mdab) << "\n";
    hdr << "config.expansion_etb " << fmt_double(c.expansion_etb) << "\n";
    hdr << "config.heads " << c.heads << "\n";
    hdr << "config.ffn_shortcut_source " << shortcut_name(c.ffn_shortcut) << "\n";
    hdr << "opt.step " << opt.step << "\n";
    hdr << "opt.beta1 " << fmt_double(opt.beta1) << "\n";
    hdr << "opt.beta2 " << fmt_double(opt.beta2) << "\n";
    hdr << "opt.weight_decay " << fmt_double(opt.weight_decay) << "\n";
    hdr << "opt.eps " << fmt_double(opt.eps) << "\n";

    const bool with_moments = opt.m.size() == m.params.size();
    for (const auto& [name, t] : m.params) {
        hdr << "tensor " << name << " " << t->shape.n << " " << t->shape.c << " "
            << t->shape.h << " " << t->shape.w << "\n";
    }
    if (with_moments) {
        for (const auto& [name, t] : m.params) {
            hdr << "tensor " << name << ".adam_m " << t->shape.n << " " << t->shape.c << " "
                << t->shape.h << " " << t->shape.w << "\n";
            hdr << "tensor " << name << ".adam_v " << t->shape.n << " " << t->shape.c << " "
                << t->shape.h << " " << t->shape.w << "\n";
        }
    }
    const std::string header = hdr.str();

    const std::string tmp = path + ".tmp";
    {
        std::ofstream f(tmp, std::ios::binary | std::ios::trunc);
        if (!f) throw IoError("cannot write '" + tmp + "'");
        f.write(kCheckpointMagic, 8);
        const uint64_t hlen = header.size();
        char lenbuf[8];
        std::memcpy(lenbuf, &hlen, 8);
        f.write(lenbuf, 8);
        f.write(header.data(), static_cast<std::streamsize>(header.size()));
        for (const auto& [name, t] : m.params) write_f32_le(f, t->data.data(), t->size());
        if (with_moments) {
            for (size_t i = 0; i < m.params.size(); ++i) {
                write_f32_le(f, opt.m[i].data(), opt.m[i].size());
                write_f32_le(f, opt.v[i].data(), opt.v[i].size());
            }
        }
        if (!f) throw IoError("short write to '" + tmp + "'");
    }
    std::filesystem::rename(tmp, path);  // atomic publish
}

LoadedCheckpoint load_checkpoint(const std::string& path) {
    std::ifstream f(path, std::ios::binary);
    if (!f) throw IoError("cannot open checkpoint '" + path + "'");
    char magic[8];
    if (!f.read(magic, 8) || std::memcmp(magic, kCheckpointMagic, 8) != 0)
        throw IoError("'" + path + "' is not a checkpoint (bad magic)");
    uint64_t hlen = 0;
    if (!f.read(reinterpret_cast<char*>(&hlen), 8) || hlen == 0 || hlen > (64u << 20))
        throw IoError("checkpoint '" + path + "': bad header length");
    std::string header(hlen, '\0');
    if (!f.read(header.data(), static_cast<std::streamsize>(hlen)))
        throw IoError("checkpoint '" + path + "': truncated header");

    std::map<std::string, std::string> kv;
    std::vector<ManifestEntry> manifest;
    std::istringstream hs(header);
    std::string line;
    while (std::getline(hs, line)) {
        if (line.empty()) continue;
        std::istringstream ls(line);
        std::string key;
        ls >> key;
        if (key == "tensor") {
            ManifestEntry e;
            ls >> e.name >> e.shape.n >> e.shape.c >> e.shape.h >> e.shape.w;
            if (ls.fail()) throw IoError("checkpoint: malformed manifest line '" + line + "'");
            manifest.push_back(e);
        } else {
            std::string value;
            std::getline(ls, value);
            if (!value.empty() && value.front() == ' ') value.erase(0, 1);
            kv[key] = value;
        }
    }
    auto need = [&](const std::string& key) {
        auto it = kv.find(key);
        if (it == kv.end()) throw IoError("checkpoint: missing header key '" + key + "'");
        return it->second;
    };
    if (need("version") != "1") throw IoError("checkpoint: unsupported version " + kv["version"]);

    ModelConfig cfg;
    cfg.base_dim = std::stoi(need("config.base_dim"));
    {
        std::istringstream cs(need("config.mdab_counts"));
        std::string tok;
        for (int i = 0; i < 6; ++i) {
            if (!std::getline(cs, tok, ',')) throw IoError("checkpoint: bad config.mdab_counts");
            cfg.mdab_counts[i] = std::stoi(tok);
        }
    }
    cfg.etb_count = std::stoi(need("config.etb_count"));
    cfg.stage_types = need("config.stage_types");
    cfg.expansion_mdab = std::stod(need("config.expansion_mdab"));
    cfg.expansion_etb = std::stod(need("config.expansion_etb"));
    cfg.heads = std::stoi(need("config.heads"));
    cfg.ffn_shortcut = parse_shortcut(need("config.ffn_shortcut_source"));

    LoadedCheckpoint out{build_model<float>(cfg, std::stoull(need("seed"))), AdamW<float>{}};
    out.opt.beta1 = std::stod(need("opt.beta1"));
    out.opt.beta2 = std::stod(need("opt.beta2"));
    out.opt.weight_decay = std::stod(need("opt.weight_decay"));
    out.opt.eps = std::stod(need("opt.eps"));
    out.opt.init(out.model.params);
    out.opt.step = std::stoll(need("opt.step"));

    std::map<std::string, size_t> index;
    for (size_t i = 0; i < out.model.params.size(); ++i) index[out.model.params[i].first] = i;

    for (const auto& e : manifest) {
        std::string base = e.name;
        int moment = 0;  // 0 = weights, 1 = adam_m, 2 = adam_v
        if (base.size() > 7 && base.ends_with(".adam_m")) {
            base = base.substr(0, base.size() - 7);
            moment = 1;
        } else if (base.size() > 7 && base.ends_with(".adam_v")) {
            base = base.substr(0, base.size() - 7);
            moment = 2;
        }
        auto it = index.find(base);
        if (it == index.end())
            throw IoError("checkpoint: unknown tensor '" + e.name + "' for this config");
        auto& param = out.model.params[it->second].second;
        if (!(param->shape == e.shape))
            throw IoError("checkpoint: shape mismatch for '" + e.name + "': file " + e.shape.str() +
                          " vs model " + param->shape.str());
        float* dst = moment == 0 ? param->data.data()
                   : moment == 1 ? out.opt.m[it->second].data()
                                 : out.opt.v[it->second].data();
        if (!f.read(reinterpret_cast<char*>(dst), static_cast<std::streamsize>(e.shape.numel() * 4)))
            throw IoError("checkpoint: truncated payload at '" + e.name + "'");
    }
    return out;
}

}  // namespace mdda
