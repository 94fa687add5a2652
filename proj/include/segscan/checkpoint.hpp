#pragma once

#include <filesystem>
#include <fstream>
#include <map>
#include <string>
#include <vector>

#include "segscan/errors.hpp"
#include "segscan/io.hpp"
#include "segscan/params.hpp"

namespace segscan {

// Checkpoint layout: a directory of TNSR tensors plus a plain-text manifest
// mapping parameter name -> file, one pair per line.

inline std::string sanitize_name(const std::string& name) {
    std::string s = name;
    for (auto& c : s)
        if (c == '.' || c == '/' || c == ' ') c = '_';
    return s;
}

template <class Net>
void save_checkpoint(const std::string& dir, Net& net) {
    namespace fs = std::filesystem;
    std::error_code ec;
    fs::create_directories(dir, ec);
    std::ofstream manifest(dir + "/manifest.txt");
    if (!manifest) throw IoError("cannot write checkpoint manifest in " + dir);
    net.visit([&](const std::string& name, auto& p) {
        const std::string file = sanitize_name(name) + ".tnsr";
        save_tnsr(dir + "/" + file, p.v);
        manifest << name << " " << file << "\n";
    });
    if (!manifest) throw IoError("checkpoint manifest write failed in " + dir);
}

inline std::map<std::string, std::string> read_manifest(const std::string& dir) {
    std::ifstream is(dir + "/manifest.txt");
    if (!is) throw IoError("cannot read checkpoint manifest in " + dir);
    std::map<std::string, std::string> entries;
    std::string name, file;
    while (is >> name >> file) entries[name] = file;
    return entries;
}

template <class Net>
void load_checkpoint(const std::string& dir, Net& net) {
    auto entries = read_manifest(dir);
    std::size_t loaded = 0;
    net.visit([&](const std::string& name, auto& p) {
        auto it = entries.find(name);
        if (it == entries.end()) throw IoError("checkpoint is missing parameter " + name);
        auto t = load_tnsr<typename std::remove_reference_t<decltype(p.v[0])>>(dir + "/" + it->second);
        if (t.shape() != p.v.shape())
            throw IoError("checkpoint shape mismatch for " + name);
        p.v = std::move(t);
        ++loaded;
    });
    if (loaded != entries.size())
        throw IoError("checkpoint has " + std::to_string(entries.size()) + " tensors but the model visits " +
                      std::to_string(loaded));
}

// independent recount used by reporting: sums extents straight from the files
inline std::size_t checkpoint_param_count(const std::string& dir) {
    std::size_t total = 0;
    for (const auto& [name, file] : read_manifest(dir)) {
        (void)name;
        auto t = load_tnsr<float>(dir + "/" + file);
        total += t.numel();
    }
    return total;
}

}  // namespace segscan
