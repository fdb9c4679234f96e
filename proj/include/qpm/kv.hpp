#pragma once

// Flat key-value configuration files:
//
//   # comment
//   key = value
//   [section]
//   key = "quoted value"      -> stored as "section.key"
//
// Used for run configs and scenario specs.

#include <filesystem>
#include <map>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

namespace qpm {

class KeyValues {
public:
    static KeyValues parse(std::string_view text);
    static KeyValues load(const std::filesystem::path& path);

    bool contains(const std::string& key) const { return values_.contains(key); }
    std::optional<std::string> get(const std::string& key) const;
    void set(const std::string& key, std::string value) { values_[key] = std::move(value); }

    /// Typed accessors; throw ConfigError naming the key on malformed values.
    double get_double(const std::string& key, double fallback) const;
    long long get_int(const std::string& key, long long fallback) const;
    std::string get_string(const std::string& key, const std::string& fallback) const;
    std::vector<double> get_doubles(const std::string& key, const std::vector<double>& fallback) const;

    const std::map<std::string, std::string>& entries() const noexcept { return values_; }

private:
    std::map<std::string, std::string> values_;
};

double parse_double(std::string_view text, const std::string& field);
long long parse_int(std::string_view text, const std::string& field);
std::vector<double> parse_doubles(std::string_view text, const std::string& field);
std::string format_double(double v);

}  // namespace qpm
