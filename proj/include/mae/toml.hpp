#pragma once

#include <cctype>
#include <fstream>
#include <map>
#include <sstream>
#include <stdexcept>
#include <string>
#include <variant>
#include <vector>

namespace mae {

// Minimal TOML subset for experiment configs: [section] headers, scalar
// key = value pairs (string, bool, int, float) and flat arrays. Keys are
// flattened to "section.key".

class TomlTable {
public:
    using Value = std::variant<bool, std::int64_t, double, std::string,
                               std::vector<std::int64_t>, std::vector<double>>;

    bool has(const std::string& key) const { return values_.count(key) > 0; }

    std::int64_t get_int(const std::string& key, std::int64_t dflt) const {
        auto it = values_.find(key);
        if (it == values_.end()) return dflt;
        if (auto* v = std::get_if<std::int64_t>(&it->second)) return *v;
        throw std::invalid_argument("config field '" + key + "' must be an integer");
    }
    double get_double(const std::string& key, double dflt) const {
        auto it = values_.find(key);
        if (it == values_.end()) return dflt;
        if (auto* v = std::get_if<double>(&it->second)) return *v;
        if (auto* v = std::get_if<std::int64_t>(&it->second)) return static_cast<double>(*v);
        throw std::invalid_argument("config field '" + key + "' must be a number");
    }
    bool get_bool(const std::string& key, bool dflt) const {
        auto it = values_.find(key);
        if (it == values_.end()) return dflt;
        if (auto* v = std::get_if<bool>(&it->second)) return *v;
        throw std::invalid_argument("config field '" + key + "' must be a boolean");
    }
    std::string get_string(const std::string& key, const std::string& dflt) const {
        auto it = values_.find(key);
        if (it == values_.end()) return dflt;
        if (auto* v = std::get_if<std::string>(&it->second)) return *v;
        throw std::invalid_argument("config field '" + key + "' must be a string");
    }
    std::vector<std::int64_t> get_int_array(const std::string& key,
                                            std::vector<std::int64_t> dflt) const {
        auto it = values_.find(key);
        if (it == values_.end()) return dflt;
        if (auto* v = std::get_if<std::vector<std::int64_t>>(&it->second)) return *v;
        throw std::invalid_argument("config field '" + key + "' must be an integer array");
    }

    void set(const std::string& key, Value v) { values_[key] = std::move(v); }
    const std::map<std::string, Value>& entries() const { return values_; }

private:
    std::map<std::string, Value> values_;
};

namespace toml_detail {

inline std::string trim(const std::string& s) {
    std::size_t a = s.find_first_not_of(" \t\r");
    if (a == std::string::npos) return "";
    std::size_t b = s.find_last_not_of(" \t\r");
    return s.substr(a, b - a + 1);
}

inline TomlTable::Value parse_scalar(const std::string& raw, int line) {
    std::string v = trim(raw);
    if (v.empty()) throw std::invalid_argument("toml line " + std::to_string(line) + ": empty value");
    if (v.front() == '"') {
        if (v.size() < 2 || v.back() != '"')
            throw std::invalid_argument("toml line " + std::to_string(line) + ": unterminated string");
        return v.substr(1, v.size() - 2);
    }
    if (v == "true") return true;
    if (v == "false") return false;
    bool floaty = v.find_first_of(".eE") != std::string::npos &&
                  v.find_first_not_of("+-0123456789.eE") == std::string::npos;
    try {
        std::size_t used = 0;
        if (!floaty) {
            std::int64_t i = std::stoll(v, &used);
            if (used == v.size()) return i;
        }
        double d = std::stod(v, &used);
        if (used == v.size()) return d;
    } catch (const std::exception&) {
    }
    throw std::invalid_argument("toml line " + std::to_string(line) + ": bad value '" + v + "'");
}

}  // namespace toml_detail

inline TomlTable parse_toml(const std::string& text) {
    TomlTable t;
    std::istringstream in(text);
    std::string line, section;
    int lineno = 0;
    while (std::getline(in, line)) {
        ++lineno;
        // strip comments outside strings
        bool in_str = false;
        for (std::size_t i = 0; i < line.size(); ++i) {
            if (line[i] == '"') in_str = !in_str;
            if (line[i] == '#' && !in_str) {
                line = line.substr(0, i);
                break;
            }
        }
        line = toml_detail::trim(line);
        if (line.empty()) continue;
        if (line.front() == '[') {
            if (line.back() != ']')
                throw std::invalid_argument("toml line " + std::to_string(lineno) + ": bad section");
            section = toml_detail::trim(line.substr(1, line.size() - 2));
            continue;
        }
        std::size_t eq = line.find('=');
        if (eq == std::string::npos)
            throw std::invalid_argument("toml line " + std::to_string(lineno) + ": expected key = value");
        std::string key = toml_detail::trim(line.substr(0, eq));
        std::string value = toml_detail::trim(line.substr(eq + 1));
        if (key.empty())
            throw std::invalid_argument("toml line " + std::to_string(lineno) + ": empty key");
        std::string full = section.empty() ? key : section + "." + key;
        if (!value.empty() && value.front() == '[') {
            if (value.back() != ']')
                throw std::invalid_argument("toml line " + std::to_string(lineno) + ": unterminated array");
            std::string body = value.substr(1, value.size() - 2);
            std::vector<std::int64_t> ints;
            std::vector<double> doubles;
            bool any_double = false;
            std::stringstream ss(body);
            std::string item;
            while (std::getline(ss, item, ',')) {
                item = toml_detail::trim(item);
                if (item.empty()) continue;
                auto v = toml_detail::parse_scalar(item, lineno);
                if (auto* i = std::get_if<std::int64_t>(&v)) {
                    ints.push_back(*i);
                    doubles.push_back(static_cast<double>(*i));
                } else if (auto* d = std::get_if<double>(&v)) {
                    any_double = true;
                    doubles.push_back(*d);
                } else {
                    throw std::invalid_argument("toml line " + std::to_string(lineno) +
                                                ": arrays must be numeric");
                }
            }
            if (any_double)
                t.set(full, doubles);
            else
                t.set(full, ints);
        } else {
            t.set(full, toml_detail::parse_scalar(value, lineno));
        }
    }
    return t;
}

inline TomlTable parse_toml_file(const std::string& path) {
    std::ifstream f(path);
    if (!f) throw std::invalid_argument("cannot open config file: " + path);
    std::stringstream ss;
    ss << f.rdbuf();
    return parse_toml(ss.str());
}

}  // namespace mae
