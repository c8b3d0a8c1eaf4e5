#pragma once

#include <algorithm>
#include <cstdlib>
#include <fstream>
#include <map>
#include <sstream>
#include <string>
#include <vector>

#include "densconf/error.hpp"

namespace densconf {

// Plain `key = value` configuration: one pair per line, '#' starts a comment,
// sections are spelled with dotted keys (train.alpha = 0.2). Serialization is
// canonical (keys sorted), so a resolved config written back after a run is
// byte-stable.
class KeyValueConfig {
public:
    KeyValueConfig() = default;

    static KeyValueConfig parse_string(const std::string& text, const std::string& source = "<string>") {
        KeyValueConfig cfg;
        std::istringstream in(text);
        std::string line;
        std::size_t line_no = 0;
        while (std::getline(in, line)) {
            ++line_no;
            if (!line.empty() && line.back() == '\r') line.pop_back();
            const std::string trimmed = trim(line);
            if (trimmed.empty() || trimmed[0] == '#') continue;
            const auto eq = trimmed.find('=');
            if (eq == std::string::npos)
                throw FormatError(source + ": line " + std::to_string(line_no) +
                                  ": expected 'key = value'");
            const std::string key = trim(trimmed.substr(0, eq));
            const std::string value = trim(trimmed.substr(eq + 1));
            if (key.empty())
                throw FormatError(source + ": line " + std::to_string(line_no) + ": empty key");
            cfg.values_[key] = value;
        }
        return cfg;
    }

    static KeyValueConfig parse_file(const std::string& path) {
        std::ifstream in(path, std::ios::binary);
        if (!in) throw FormatError("config: cannot open '" + path + "'");
        std::ostringstream buffer;
        buffer << in.rdbuf();
        return parse_string(buffer.str(), path);
    }

    bool has(const std::string& key) const { return values_.count(key) != 0; }

    void set(const std::string& key, const std::string& value) { values_[key] = value; }

    std::string get_string(const std::string& key) const {
        const auto it = values_.find(key);
        if (it == values_.end()) throw UsageError("config: missing key '" + key + "'");
        return it->second;
    }

    std::string get_string(const std::string& key, const std::string& fallback) const {
        const auto it = values_.find(key);
        return it == values_.end() ? fallback : it->second;
    }

    double get_double(const std::string& key) const { return to_double(key, get_string(key)); }
    double get_double(const std::string& key, double fallback) const {
        return has(key) ? get_double(key) : fallback;
    }

    long long get_int(const std::string& key) const { return to_int(key, get_string(key)); }
    long long get_int(const std::string& key, long long fallback) const {
        return has(key) ? get_int(key) : fallback;
    }

    bool get_bool(const std::string& key) const {
        const std::string v = get_string(key);
        if (v == "true" || v == "1") return true;
        if (v == "false" || v == "0") return false;
        throw UsageError("config: key '" + key + "' must be true or false, got '" + v + "'");
    }
    bool get_bool(const std::string& key, bool fallback) const {
        return has(key) ? get_bool(key) : fallback;
    }

    // Comma-separated list of numbers, e.g. `model.hidden = 64,64`.
    std::vector<long long> get_int_list(const std::string& key) const {
        std::vector<long long> out;
        for (const std::string& item : split_list(get_string(key)))
            out.push_back(to_int(key, item));
        return out;
    }

    std::vector<double> get_double_list(const std::string& key) const {
        std::vector<double> out;
        for (const std::string& item : split_list(get_string(key)))
            out.push_back(to_double(key, item));
        return out;
    }

    // Rejects any key outside the allowed set; misspelled keys fail loudly
    // instead of silently falling back to defaults.
    void require_known_keys(const std::vector<std::string>& allowed) const {
        for (const auto& [key, value] : values_) {
            if (std::find(allowed.begin(), allowed.end(), key) == allowed.end())
                throw UsageError("config: unknown key '" + key + "'");
        }
    }

    std::string serialize() const {
        std::ostringstream out;
        for (const auto& [key, value] : values_) out << key << " = " << value << "\n";
        return out.str();
    }

    const std::map<std::string, std::string>& entries() const { return values_; }

private:
    static std::string trim(const std::string& s) {
        const auto begin = s.find_first_not_of(" \t");
        if (begin == std::string::npos) return "";
        const auto end = s.find_last_not_of(" \t");
        return s.substr(begin, end - begin + 1);
    }

    static std::vector<std::string> split_list(const std::string& s) {
        std::vector<std::string> items;
        std::istringstream in(s);
        std::string item;
        while (std::getline(in, item, ',')) items.push_back(trim(item));
        return items;
    }

    static double to_double(const std::string& key, const std::string& value) {
        char* end = nullptr;
        const double v = std::strtod(value.c_str(), &end);
        if (end == value.c_str() || *end != '\0')
            throw UsageError("config: key '" + key + "' expects a number, got '" + value + "'");
        return v;
    }

    static long long to_int(const std::string& key, const std::string& value) {
        char* end = nullptr;
        const long long v = std::strtoll(value.c_str(), &end, 10);
        if (end == value.c_str() || *end != '\0')
            throw UsageError("config: key '" + key + "' expects an integer, got '" + value + "'");
        return v;
    }

    std::map<std::string, std::string> values_;
};

} // namespace densconf
