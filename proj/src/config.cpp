#include "atvd/config.hpp"

#include <fstream>
#include <sstream>

namespace atvd {

namespace {

std::string trim(const std::string& s) {
    size_t b = s.find_first_not_of(" \t\r\n");
    if (b == std::string::npos) return "";
    size_t e = s.find_last_not_of(" \t\r\n");
    return s.substr(b, e - b + 1);
}

} // namespace

Config Config::load(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw std::runtime_error(cat("config: cannot open ", path));
    std::stringstream buf;
    buf << in.rdbuf();
    return parse(buf.str(), path);
}

Config Config::parse(const std::string& text, const std::string& origin) {
    Config cfg;
    std::istringstream in(text);
    std::string line;
    int lineno = 0;
    while (std::getline(in, line)) {
        ++lineno;
        size_t hash = line.find('#');
        if (hash != std::string::npos) line = line.substr(0, hash);
        line = trim(line);
        if (line.empty()) continue;
        size_t eq = line.find('=');
        require(eq != std::string::npos,
                cat("config: ", origin, ":", lineno, ": expected key = value, got '", line, "'"));
        std::string key = trim(line.substr(0, eq));
        std::string value = trim(line.substr(eq + 1));
        require(!key.empty(), cat("config: ", origin, ":", lineno, ": empty key"));
        cfg.kv_[key] = value;
    }
    return cfg;
}

bool Config::has(const std::string& key) const { return kv_.count(key) > 0; }

void Config::set(const std::string& key, const std::string& value) { kv_[key] = value; }

std::string Config::get_string(const std::string& key, const std::string& fallback) const {
    auto it = kv_.find(key);
    return it == kv_.end() ? fallback : it->second;
}

int Config::get_int(const std::string& key, int fallback) const {
    auto it = kv_.find(key);
    if (it == kv_.end()) return fallback;
    try {
        size_t pos = 0;
        int v = std::stoi(it->second, &pos);
        require(pos == it->second.size(), "");
        return v;
    } catch (...) {
        throw contract_error(cat("config: key '", key, "' is not an integer: '", it->second, "'"));
    }
}

uint64_t Config::get_u64(const std::string& key, uint64_t fallback) const {
    auto it = kv_.find(key);
    if (it == kv_.end()) return fallback;
    try {
        size_t pos = 0;
        uint64_t v = std::stoull(it->second, &pos);
        require(pos == it->second.size(), "");
        return v;
    } catch (...) {
        throw contract_error(cat("config: key '", key, "' is not a u64: '", it->second, "'"));
    }
}

double Config::get_double(const std::string& key, double fallback) const {
    auto it = kv_.find(key);
    if (it == kv_.end()) return fallback;
    try {
        size_t pos = 0;
        double v = std::stod(it->second, &pos);
        require(pos == it->second.size(), "");
        return v;
    } catch (...) {
        throw contract_error(cat("config: key '", key, "' is not a number: '", it->second, "'"));
    }
}

void Config::validate_keys(const std::set<std::string>& allowed) const {
    for (const auto& [k, v] : kv_)
        require(allowed.count(k) > 0, cat("config: unknown key '", k, "'"));
}

std::vector<std::pair<std::string, std::string>> Config::items() const {
    return {kv_.begin(), kv_.end()};
}

} // namespace atvd
