#pragma once

#include <cstdint>
#include <fstream>
#include <map>
#include <sstream>
#include <string>
#include <vector>

#include "segscan/errors.hpp"

namespace segscan {

// Plain-text configuration: `key = value` lines, `#` comments, dotted keys.
class Config {
public:
    Config() = default;

    static Config from_string(const std::string& text) {
        Config c;
        std::istringstream is(text);
        std::string line;
        std::size_t lineno = 0;
        while (std::getline(is, line)) {
            ++lineno;
            const auto hash = line.find('#');
            if (hash != std::string::npos) line.erase(hash);
            const std::string t = trim(line);
            if (t.empty()) continue;
            const auto eq = t.find('=');
            if (eq == std::string::npos)
                throw ConfigError("line " + std::to_string(lineno) + " is not `key = value`: " + t);
            const std::string key = trim(t.substr(0, eq));
            const std::string val = trim(t.substr(eq + 1));
            if (key.empty()) throw ConfigError("empty key on line " + std::to_string(lineno));
            c.kv_[key] = val;
        }
        return c;
    }

    static Config from_file(const std::string& path) {
        std::ifstream is(path);
        if (!is) throw IoError("cannot open config: " + path);
        std::ostringstream buf;
        buf << is.rdbuf();
        return from_string(buf.str());
    }

    void set(const std::string& key, const std::string& value) { kv_[key] = value; }
    bool has(const std::string& key) const { return kv_.count(key) != 0; }

    std::string get_str(const std::string& key, const std::string& fallback) const {
        auto it = kv_.find(key);
        return it == kv_.end() ? fallback : it->second;
    }

    double get_num(const std::string& key, double fallback) const {
        auto it = kv_.find(key);
        if (it == kv_.end()) return fallback;
        try {
            std::size_t pos = 0;
            const double v = std::stod(it->second, &pos);
            if (pos != it->second.size()) throw std::invalid_argument("trailing");
            return v;
        } catch (const std::exception&) {
            throw ConfigError("key `" + key + "` is not numeric: " + it->second);
        }
    }

    std::size_t get_size(const std::string& key, std::size_t fallback) const {
        const double v = get_num(key, static_cast<double>(fallback));
        if (v < 0 || v != static_cast<double>(static_cast<std::size_t>(v)))
            throw ConfigError("key `" + key + "` is not a non-negative integer");
        return static_cast<std::size_t>(v);
    }

    bool get_flag(const std::string& key, bool fallback) const {
        auto it = kv_.find(key);
        if (it == kv_.end()) return fallback;
        const std::string& v = it->second;
        if (v == "on" || v == "true" || v == "1") return true;
        if (v == "off" || v == "false" || v == "0") return false;
        throw ConfigError("key `" + key + "` must be on/off: " + v);
    }

    std::vector<double> get_list(const std::string& key, const std::vector<double>& fallback) const {
        auto it = kv_.find(key);
        if (it == kv_.end()) return fallback;
        std::vector<double> out;
        std::istringstream is(it->second);
        std::string tok;
        while (std::getline(is, tok, ',')) {
            try {
                out.push_back(std::stod(trim(tok)));
            } catch (const std::exception&) {
                throw ConfigError("key `" + key + "` has a non-numeric element: " + tok);
            }
        }
        if (out.empty()) throw ConfigError("key `" + key + "` is an empty list");
        return out;
    }

    // canonical dump: sorted keys, one per line
    std::string dump() const {
        std::ostringstream os;
        for (const auto& [k, v] : kv_) os << k << " = " << v << "\n";
        return os.str();
    }

    // FNV-1a over the canonical dump; distinct configurations hash apart
    std::uint64_t hash() const {
        const std::string d = dump();
        std::uint64_t h = 0xcbf29ce484222325ULL;
        for (unsigned char ch : d) {
            h ^= ch;
            h *= 0x100000001b3ULL;
        }
        return h;
    }

private:
    static std::string trim(const std::string& s) {
        std::size_t a = 0, b = s.size();
        while (a < b && std::isspace(static_cast<unsigned char>(s[a]))) ++a;
        while (b > a && std::isspace(static_cast<unsigned char>(s[b - 1]))) --b;
        return s.substr(a, b - a);
    }

    std::map<std::string, std::string> kv_;
};

}  // namespace segscan
