#pragma once

#include <map>
#include <set>
#include <string>
#include <vector>

#include "atvd/common.hpp"

namespace atvd {

// Flat key = value configuration. '#' starts a comment, blank lines ignored.
// Consumers validate against their allowed key set; unknown keys are errors.
class Config {
public:
    Config() = default;

    static Config load(const std::string& path);
    static Config parse(const std::string& text, const std::string& origin = "<string>");

    bool has(const std::string& key) const;
    void set(const std::string& key, const std::string& value);

    std::string get_string(const std::string& key, const std::string& fallback) const;
    int get_int(const std::string& key, int fallback) const;
    uint64_t get_u64(const std::string& key, uint64_t fallback) const;
    double get_double(const std::string& key, double fallback) const;

    void validate_keys(const std::set<std::string>& allowed) const;

    // resolved-config logging: deterministic key order
    std::vector<std::pair<std::string, std::string>> items() const;

private:
    std::map<std::string, std::string> kv_;
};

} // namespace atvd
