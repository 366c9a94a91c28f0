#pragma once

#include <map>
#include <set>
#include <string>

#include "ewe/common.hpp"

namespace ewe {

// Flat `key = value` configuration, one pair per line, '#' comments, no
// nesting. Unknown keys are rejected (fail-closed reproducibility).
class Config {
public:
    static Config from_file(const std::string& path);
    static Config from_string(const std::string& text);

    bool has(const std::string& key) const { return kv_.count(key) != 0; }
    void set(const std::string& key, const std::string& value) { kv_[key] = value; }

    std::string get_str(const std::string& key, const std::string& fallback) const;
    std::string require_str(const std::string& key) const;
    long get_int(const std::string& key, long fallback) const;
    double get_double(const std::string& key, double fallback) const;
    bool get_bool(const std::string& key, bool fallback) const;

    // Throws ContractError naming the first key outside the allowed set.
    void restrict_keys(const std::set<std::string>& allowed) const;

    const std::map<std::string, std::string>& entries() const { return kv_; }

private:
    std::map<std::string, std::string> kv_;
};

}  // namespace ewe
