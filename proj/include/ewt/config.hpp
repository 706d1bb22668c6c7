#pragma once

#include <fstream>
#include <map>
#include <string>

#include "ewt/model.hpp"
#include "ewt/noise.hpp"

namespace ewt {

// Flat `key = value` config with `[section]` headers and `#` comments.
// Keys are addressed as "section.key"; keys before any section have no prefix.
class ConfigFile {
public:
    static ConfigFile parse_file(const std::string& path) {
        std::ifstream f(path);
        if (!f) throw IoError("config: cannot open " + path);
        std::string text((std::istreambuf_iterator<char>(f)), std::istreambuf_iterator<char>());
        return parse(text, path);
    }

    static ConfigFile parse(const std::string& text, const std::string& origin = "<string>") {
        ConfigFile cfg;
        std::string section;
        std::size_t lineno = 0, pos = 0;
        while (pos <= text.size()) {
            std::size_t eol = text.find('\n', pos);
            std::string line = text.substr(pos, eol == std::string::npos ? eol : eol - pos);
            pos = eol == std::string::npos ? text.size() + 1 : eol + 1;
            ++lineno;
            line = trim(line.substr(0, line.find('#')));
            if (line.empty()) continue;
            if (line.front() == '[') {
                if (line.back() != ']')
                    throw ConfigError(origin + ":" + std::to_string(lineno) + ": unterminated section");
                section = trim(line.substr(1, line.size() - 2));
                continue;
            }
            std::size_t eq = line.find('=');
            if (eq == std::string::npos)
                throw ConfigError(origin + ":" + std::to_string(lineno) + ": expected key = value");
            std::string key = trim(line.substr(0, eq));
            std::string val = trim(line.substr(eq + 1));
            if (key.empty())
                throw ConfigError(origin + ":" + std::to_string(lineno) + ": empty key");
            cfg.values_[section.empty() ? key : section + "." + key] = val;
        }
        return cfg;
    }

    bool has(const std::string& key) const { return values_.count(key) != 0; }

    std::string get(const std::string& key) const {
        auto it = values_.find(key);
        if (it == values_.end()) throw ConfigError("config: missing required key '" + key + "'");
        return it->second;
    }

    std::string get(const std::string& key, const std::string& def) const {
        auto it = values_.find(key);
        return it == values_.end() ? def : it->second;
    }

    long long get_int(const std::string& key, long long def) const {
        if (!has(key)) return def;
        try {
            return std::stoll(get(key));
        } catch (...) {
            throw ConfigError("config: key '" + key + "' is not an integer: '" + get(key) + "'");
        }
    }

    double get_real(const std::string& key, double def) const {
        if (!has(key)) return def;
        try {
            return std::stod(get(key));
        } catch (...) {
            throw ConfigError("config: key '" + key + "' is not a number: '" + get(key) + "'");
        }
    }

    const std::map<std::string, std::string>& values() const { return values_; }

private:
    static std::string trim(const std::string& s) {
        std::size_t a = s.find_first_not_of(" \t\r");
        if (a == std::string::npos) return "";
        std::size_t b = s.find_last_not_of(" \t\r");
        return s.substr(a, b - a + 1);
    }

    std::map<std::string, std::string> values_;
};

struct TrainSettings {
    std::size_t steps = 200;
    std::size_t batch = 16;
    std::size_t patch = 64;
    double lr = 2e-4;
    std::uint64_t seed = 1;
    std::size_t checkpoint_every = 0;  // 0 = final only
};

struct RunConfig {
    ModelConfig model;
    TrainSettings train;
    NoiseSpec noise;
    std::string clean_dir;
    std::string out_dir = "out";
    std::string dtype = "f32";

    static RunConfig from_file(const std::string& path) {
        ConfigFile f = ConfigFile::parse_file(path);
        if (f.get_int("schema_version", -1) != 1)
            throw ConfigError("config: schema_version must be 1 (key 'schema_version')");
        RunConfig rc;
        rc.model.in_channels = std::size_t(f.get_int("model.in_channels", 3));
        rc.model.embed_dim = std::size_t(f.get_int("model.embed_dim", 180));
        rc.model.window = std::size_t(f.get_int("model.window", 8));
        rc.model.heads = std::size_t(f.get_int("model.heads", 6));
        rc.model.num_dfeb = std::size_t(f.get_int("model.num_dfeb", 4));
        rc.model.blocks_per_dfeb = std::size_t(f.get_int("model.blocks_per_dfeb", 6));
        rc.model.lambda = f.get_real("model.lambda", 0.1);
        rc.model.wavelet_level = int(f.get_int("model.wavelet_level", 1));
        rc.model.validate();

        rc.train.steps = std::size_t(f.get_int("train.steps", 200));
        rc.train.batch = std::size_t(f.get_int("train.batch", 16));
        rc.train.patch = std::size_t(f.get_int("train.patch", 64));
        rc.train.lr = f.get_real("train.lr", 2e-4);
        rc.train.seed = std::uint64_t(f.get_int("train.seed", 1));
        rc.train.checkpoint_every = std::size_t(f.get_int("train.checkpoint_every", 0));
        if (rc.train.batch < 1) throw ConfigError("config: train.batch must be >= 1");
        if (rc.train.patch % rc.model.size_multiple())
            throw ConfigError("config: train.patch must be divisible by window*2^level = " +
                              std::to_string(rc.model.size_multiple()));

        rc.noise.kind = parse_noise_kind(f.get("data.noise", "gaussian"));
        rc.noise.sigma = f.get_real("data.sigma", 25.0);
        rc.noise.peak = f.get_real("data.peak", 30.0);
        rc.noise.seed = std::uint64_t(f.get_int("data.noise_seed", 7));
        if (rc.noise.sigma < 0) throw ConfigError("config: data.sigma must be >= 0");
        if (rc.noise.peak <= 0) throw ConfigError("config: data.peak must be > 0");

        rc.clean_dir = f.get("data.clean_dir", "");
        rc.out_dir = f.get("output.dir", "out");
        rc.dtype = f.get("output.dtype", "f32");
        if (rc.dtype != "f32" && rc.dtype != "f64")
            throw ConfigError("config: output.dtype must be f32 or f64");
        return rc;
    }
};

}  // namespace ewt
