#pragma once

// Key/value text dialect shared by MDP files, feature tables and experiment
// specs:
//
//   # comment
//   gamma = 0.9
//   rho = [0.5 0.5]
//   reward = [ 1 0
//              0 1 ]
//
// A bracketed value may span lines; list items are separated by whitespace
// or commas.

#include <charconv>
#include <cstdint>
#include <fstream>
#include <map>
#include <sstream>
#include <stdexcept>
#include <string>
#include <string_view>
#include <system_error>
#include <vector>

namespace anpg {

/// Raised for malformed or semantically invalid configuration input. The
/// message always names the offending key when there is one.
class ConfigError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

/// Shortest round-trip decimal form of a double.
inline std::string format_double(double x) {
    char buf[64];
    auto res = std::to_chars(buf, buf + sizeof(buf), x);
    return std::string(buf, res.ptr);
}

class TextDocument {
public:
    struct Entry {
        std::vector<std::string> items;
        bool is_list = false;
        int line = 0;
    };

    static TextDocument parse(std::string_view text) {
        TextDocument doc;
        std::size_t pos = 0;
        int line_no = 0;
        std::string pending_key;
        Entry pending;
        bool in_list = false;

        while (pos <= text.size()) {
            std::size_t eol = text.find('\n', pos);
            if (eol == std::string_view::npos) eol = text.size();
            std::string_view line = text.substr(pos, eol - pos);
            pos = eol + 1;
            ++line_no;
            if (auto hash = line.find('#'); hash != std::string_view::npos) line = line.substr(0, hash);

            if (in_list) {
                auto close = line.find(']');
                split_items(line.substr(0, close), pending.items);
                if (close != std::string_view::npos) {
                    if (!trim(line.substr(close + 1)).empty())
                        throw ConfigError("key '" + pending_key + "': trailing text after ']' on line " +
                                          std::to_string(line_no));
                    doc.insert(pending_key, std::move(pending));
                    in_list = false;
                }
                if (pos > text.size()) break;
                continue;
            }

            std::string_view body = trim(line);
            if (body.empty()) {
                if (pos > text.size()) break;
                continue;
            }
            auto eq = body.find('=');
            if (eq == std::string_view::npos)
                throw ConfigError("line " + std::to_string(line_no) + ": expected 'key = value'");
            std::string key(trim(body.substr(0, eq)));
            if (key.empty()) throw ConfigError("line " + std::to_string(line_no) + ": empty key");
            std::string_view value = trim(body.substr(eq + 1));

            Entry entry;
            entry.line = line_no;
            if (!value.empty() && value.front() == '[') {
                entry.is_list = true;
                auto close = value.find(']');
                split_items(value.substr(1, close == std::string_view::npos ? std::string_view::npos : close - 1),
                            entry.items);
                if (close == std::string_view::npos) {
                    pending_key = key;
                    pending = std::move(entry);
                    in_list = true;
                } else {
                    if (!trim(value.substr(close + 1)).empty())
                        throw ConfigError("key '" + key + "': trailing text after ']'");
                    doc.insert(key, std::move(entry));
                }
            } else {
                entry.items.emplace_back(value);
                doc.insert(key, std::move(entry));
            }
            if (pos > text.size()) break;
        }
        if (in_list) throw ConfigError("key '" + pending_key + "': unterminated '['");
        return doc;
    }

    static TextDocument load(const std::string& path) {
        std::ifstream in(path, std::ios::binary);
        if (!in) throw ConfigError("cannot open '" + path + "'");
        std::stringstream ss;
        ss << in.rdbuf();
        return parse(ss.str());
    }

    bool has(const std::string& key) const { return entries_.count(key) != 0; }

    const Entry& entry(const std::string& key) const {
        auto it = entries_.find(key);
        if (it == entries_.end()) throw ConfigError("missing key '" + key + "'");
        return it->second;
    }

    std::string get_string(const std::string& key) const {
        const Entry& e = entry(key);
        if (e.is_list || e.items.size() != 1) throw ConfigError("key '" + key + "': expected a scalar");
        return e.items.front();
    }
    std::string get_string(const std::string& key, const std::string& fallback) const {
        return has(key) ? get_string(key) : fallback;
    }

    double get_double(const std::string& key) const { return to_double(key, get_string(key)); }
    double get_double(const std::string& key, double fallback) const {
        return has(key) ? get_double(key) : fallback;
    }

    std::int64_t get_int(const std::string& key) const { return to_int(key, get_string(key)); }
    std::int64_t get_int(const std::string& key, std::int64_t fallback) const {
        return has(key) ? get_int(key) : fallback;
    }

    /// Scalars are accepted as one-element lists.
    std::vector<std::string> get_strings(const std::string& key) const { return entry(key).items; }

    std::vector<double> get_doubles(const std::string& key) const {
        std::vector<double> out;
        for (const auto& item : entry(key).items) out.push_back(to_double(key, item));
        return out;
    }

    std::vector<std::int64_t> get_ints(const std::string& key) const {
        std::vector<std::int64_t> out;
        for (const auto& item : entry(key).items) out.push_back(to_int(key, item));
        return out;
    }

    void set(const std::string& key, const std::string& value) {
        Entry e;
        e.items = {value};
        put(key, std::move(e));
    }
    void set(const std::string& key, double value) { set(key, format_double(value)); }
    void set(const std::string& key, std::int64_t value) { set(key, std::to_string(value)); }
    void set(const std::string& key, int value) { set(key, std::to_string(value)); }

    /// `row_width` only affects layout: items are broken into lines of that many.
    void set_list(const std::string& key, const std::vector<double>& values, std::size_t row_width = 0) {
        Entry e;
        e.is_list = true;
        for (double v : values) e.items.push_back(format_double(v));
        widths_[key] = row_width;
        put(key, std::move(e));
    }
    void set_list(const std::string& key, const std::vector<std::string>& values) {
        Entry e;
        e.is_list = true;
        e.items = values;
        put(key, std::move(e));
    }

    /// Serializes keys in insertion order.
    std::string to_string() const {
        std::string out;
        for (const auto& key : order_) {
            const Entry& e = entries_.at(key);
            out += key;
            out += " = ";
            if (!e.is_list) {
                out += e.items.front();
                out += '\n';
                continue;
            }
            std::size_t width = 0;
            if (auto w = widths_.find(key); w != widths_.end()) width = w->second;
            out += '[';
            for (std::size_t i = 0; i < e.items.size(); ++i) {
                if (width > 0 && i > 0 && i % width == 0)
                    out += "\n  ";
                else if (i > 0)
                    out += ' ';
                out += e.items[i];
            }
            out += "]\n";
        }
        return out;
    }

    const std::vector<std::string>& keys() const { return order_; }

private:
    static std::string_view trim(std::string_view s) {
        const char* ws = " \t\r";
        auto b = s.find_first_not_of(ws);
        if (b == std::string_view::npos) return {};
        auto e = s.find_last_not_of(ws);
        return s.substr(b, e - b + 1);
    }

    static void split_items(std::string_view s, std::vector<std::string>& out) {
        std::size_t i = 0;
        while (i < s.size()) {
            while (i < s.size() && (s[i] == ' ' || s[i] == '\t' || s[i] == ',' || s[i] == '\r')) ++i;
            std::size_t j = i;
            while (j < s.size() && !(s[j] == ' ' || s[j] == '\t' || s[j] == ',' || s[j] == '\r')) ++j;
            if (j > i) out.emplace_back(s.substr(i, j - i));
            i = j;
        }
    }

    static double to_double(const std::string& key, const std::string& s) {
        double v = 0.0;
        auto res = std::from_chars(s.data(), s.data() + s.size(), v);
        if (res.ec != std::errc() || res.ptr != s.data() + s.size())
            throw ConfigError("key '" + key + "': '" + s + "' is not a number");
        return v;
    }

    static std::int64_t to_int(const std::string& key, const std::string& s) {
        std::int64_t v = 0;
        auto res = std::from_chars(s.data(), s.data() + s.size(), v);
        if (res.ec != std::errc() || res.ptr != s.data() + s.size())
            throw ConfigError("key '" + key + "': '" + s + "' is not an integer");
        return v;
    }

    void insert(const std::string& key, Entry e) {
        if (has(key)) throw ConfigError("duplicate key '" + key + "' on line " + std::to_string(e.line));
        put(key, std::move(e));
    }

    void put(const std::string& key, Entry e) {
        if (!has(key)) order_.push_back(key);
        entries_[key] = std::move(e);
    }

    std::map<std::string, Entry> entries_;
    std::map<std::string, std::size_t> widths_;
    std::vector<std::string> order_;
};

}  // namespace anpg
