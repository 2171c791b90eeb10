#pragma once

#include <fstream>
#include <functional>
#include <iomanip>
#include <iostream>
#include <map>
#include <sstream>
#include <stdexcept>
#include <string>
#include <vector>

namespace scene4d {

// Ordered flat `key = value` record. Lines starting with '#' are comments.
class KeyValue {
public:
    void set(const std::string& key, const std::string& value) {
        auto it = index_.find(key);
        if (it == index_.end()) {
            index_[key] = entries_.size();
            entries_.emplace_back(key, value);
        } else {
            entries_[it->second].second = value;
        }
    }
    void set(const std::string& key, const char* value) { set(key, std::string(value)); }
    void set(const std::string& key, bool value) { set(key, std::string(value ? "true" : "false")); }
    template <typename T>
        requires std::is_arithmetic_v<T>
    void set(const std::string& key, T value) {
        std::ostringstream os;
        if constexpr (std::is_floating_point_v<T>)
            os << std::setprecision(17) << value;
        else
            os << value;
        set(key, os.str());
    }

    bool has(const std::string& key) const { return index_.count(key) != 0; }

    const std::string& get(const std::string& key) const {
        auto it = index_.find(key);
        if (it == index_.end()) throw std::runtime_error("missing key '" + key + "'");
        return entries_[it->second].second;
    }
    std::string get_or(const std::string& key, const std::string& fallback) const {
        return has(key) ? get(key) : fallback;
    }
    double get_double(const std::string& key) const { return parse_double(key, get(key)); }
    long long get_int(const std::string& key) const { return parse_int(key, get(key)); }

    const std::vector<std::pair<std::string, std::string>>& entries() const { return entries_; }

    std::string str() const {
        std::ostringstream os;
        for (const auto& [k, v] : entries_) os << k << " = " << v << '\n';
        return os.str();
    }

    static KeyValue parse(std::istream& is, const std::string& origin = "<stream>") {
        KeyValue kv;
        std::string line;
        int lineno = 0;
        while (std::getline(is, line)) {
            ++lineno;
            const auto first = line.find_first_not_of(" \t\r");
            if (first == std::string::npos || line[first] == '#') continue;
            const auto eq = line.find('=');
            if (eq == std::string::npos)
                throw std::runtime_error(origin + ":" + std::to_string(lineno) + ": expected 'key = value'");
            kv.set(trim(line.substr(0, eq)), trim(line.substr(eq + 1)));
        }
        return kv;
    }

    static KeyValue load(const std::string& path) {
        std::ifstream is(path);
        if (!is) throw std::runtime_error("missing file: " + path);
        return parse(is, path);
    }

    void save(const std::string& path) const {
        std::ofstream os(path);
        if (!os) throw std::runtime_error("cannot open for writing: " + path);
        os << str();
    }

    static std::string trim(const std::string& s) {
        const auto b = s.find_first_not_of(" \t\r");
        if (b == std::string::npos) return {};
        const auto e = s.find_last_not_of(" \t\r");
        return s.substr(b, e - b + 1);
    }

    static double parse_double(const std::string& key, const std::string& v) {
        try {
            std::size_t pos = 0;
            double d = std::stod(v, &pos);
            if (pos != v.size()) throw std::invalid_argument(v);
            return d;
        } catch (const std::exception&) {
            throw std::invalid_argument("key '" + key + "': not a number: '" + v + "'");
        }
    }
    static long long parse_int(const std::string& key, const std::string& v) {
        try {
            std::size_t pos = 0;
            long long d = std::stoll(v, &pos);
            if (pos != v.size()) throw std::invalid_argument(v);
            return d;
        } catch (const std::exception&) {
            throw std::invalid_argument("key '" + key + "': not an integer: '" + v + "'");
        }
    }

private:
    std::vector<std::pair<std::string, std::string>> entries_;
    std::map<std::string, std::size_t> index_;
};

inline std::string format_real(double v) {
    std::ostringstream os;
    os << std::setprecision(17) << v;
    return os.str();
}

// Warning sink; defaults to stderr. Tests may swap it to capture messages.
inline std::function<void(const std::string&)>& warning_sink() {
    static std::function<void(const std::string&)> sink = [](const std::string& msg) {
        std::cerr << "warning: " << msg << '\n';
    };
    return sink;
}

inline void warn(const std::string& msg) { warning_sink()(msg); }

// FNV-1a, used for config/input hashes in manifests.
inline std::uint64_t fnv1a(const std::string& bytes, std::uint64_t h = 0xcbf29ce484222325ull) {
    for (unsigned char c : bytes) {
        h ^= c;
        h *= 0x100000001b3ull;
    }
    return h;
}

inline std::string hex64(std::uint64_t v) {
    std::ostringstream os;
    os << std::hex << std::setw(16) << std::setfill('0') << v;
    return os.str();
}

inline std::string hash_file(const std::string& path) {
    std::ifstream is(path, std::ios::binary);
    if (!is) throw std::runtime_error("missing file: " + path);
    std::ostringstream ss;
    ss << is.rdbuf();
    return hex64(fnv1a(ss.str()));
}

}  // namespace scene4d
