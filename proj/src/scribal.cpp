#include "scriptorium/scribal.hpp"

#include <algorithm>
#include <cmath>
#include <sstream>

#include "scriptorium/errors.hpp"

namespace scriptorium {

namespace {

std::string trim(std::string_view s) {
    const auto b = s.find_first_not_of(" \t\r");
    if (b == std::string_view::npos) return {};
    const auto e = s.find_last_not_of(" \t\r");
    return std::string(s.substr(b, e - b + 1));
}

std::vector<std::string> split_ws(std::string_view s) {
    std::vector<std::string> out;
    std::istringstream in{std::string(s)};
    std::string tok;
    while (in >> tok) out.push_back(tok);
    return out;
}

char32_t single_char(const std::string& s, const std::string& field) {
    const auto u = to_u32(s);
    if (u.size() != 1) throw ConfigError(field, "expected a single character, got '" + s + "'");
    return u[0];
}

double parse_cost(const std::string& s, const std::string& field) {
    try {
        std::size_t used = 0;
        const double v = std::stod(s, &used);
        if (used != s.size()) throw std::invalid_argument(s);
        return v;
    } catch (const std::exception&) {
        throw ConfigError(field, "not a number: '" + s + "'");
    }
}

}  // namespace

CostTable CostTable::default_table() {
    CostTable t;
    t.itacized_set = {U'ι', U'υ', U'η'};
    return t;
}

CostTable CostTable::unit() {
    CostTable t;
    t.itacism_cost = 1.0;
    t.space_edit_cost = 1.0;
    return t;
}

void CostTable::set_substitution(char32_t a, char32_t b, double cost) {
    if (a == b) return;
    substitution_costs[{std::min(a, b), std::max(a, b)}] = cost;
}

double CostTable::substitution(char32_t a, char32_t b) const {
    if (a == b) return 0.0;
    if (!substitution_costs.empty()) {
        const auto it = substitution_costs.find({std::min(a, b), std::max(a, b)});
        if (it != substitution_costs.end()) return it->second;
    }
    if (itacized_set.contains(a) && itacized_set.contains(b)) return itacism_cost;
    return default_substitution_cost;
}

void CostTable::validate() const {
    auto positive = [](double v, const char* field) {
        if (!(v > 0.0) || !std::isfinite(v)) throw ConfigError(std::string("costs.") + field, "must be a positive finite number");
    };
    positive(default_substitution_cost, "default_substitution");
    positive(insert_delete_cost, "insert_delete");
    positive(itacism_cost, "itacism");
    positive(space_edit_cost, "space_edit");
    for (const auto& [pair, cost] : substitution_costs) positive(cost, "sub");

    std::set<char32_t> alphabet(itacized_set.begin(), itacized_set.end());
    for (const auto& [pair, cost] : substitution_costs) {
        alphabet.insert(pair.first);
        alphabet.insert(pair.second);
    }
    // Three private-use stand-ins for characters the table does not name.
    alphabet.insert({U'\uE000', U'\uE001', U'\uE002'});
    const std::vector<char32_t> chars(alphabet.begin(), alphabet.end());
    for (char32_t a : chars)
        for (char32_t b : chars)
            for (char32_t x : chars)
                if (substitution(a, b) > substitution(a, x) + substitution(x, b) + 1e-12) {
                    throw ConfigError("costs.sub", "triangle inequality violated for (" + to_utf8(std::u32string{a}) + ", " +
                                                       to_utf8(std::u32string{b}) + ") via " + to_utf8(std::u32string{x}));
                }
}

CostTable CostTable::parse(std::string_view config) {
    CostTable t = default_table();
    std::istringstream in{std::string(config)};
    std::string line;
    bool in_section = false;
    std::size_t line_no = 0;
    while (std::getline(in, line)) {
        ++line_no;
        const auto hash = line.find('#');
        if (hash != std::string::npos) line.erase(hash);
        line = trim(line);
        if (line.empty()) continue;
        if (line.front() == '[') {
            in_section = line == "[costs]";
            continue;
        }
        if (!in_section) continue;
        const auto eq = line.find('=');
        const std::string field = "costs:" + std::to_string(line_no);
        if (eq == std::string::npos) throw ConfigError(field, "expected key = value");
        const auto key = split_ws(line.substr(0, eq));
        const std::string value = trim(line.substr(eq + 1));
        if (key.empty()) throw ConfigError(field, "missing key");
        if (key[0] == "sub") {
            if (key.size() != 3) throw ConfigError(field, "expected 'sub <a> <b> = cost'");
            t.set_substitution(single_char(key[1], field), single_char(key[2], field), parse_cost(value, field));
        } else if (key.size() != 1) {
            throw ConfigError(field, "unexpected key '" + line.substr(0, eq) + "'");
        } else if (key[0] == "insert_delete") {
            t.insert_delete_cost = parse_cost(value, field);
        } else if (key[0] == "space_edit") {
            t.space_edit_cost = parse_cost(value, field);
        } else if (key[0] == "default_substitution") {
            t.default_substitution_cost = parse_cost(value, field);
        } else if (key[0] == "itacism") {
            t.itacism_cost = parse_cost(value, field);
        } else if (key[0] == "itacized") {
            t.itacized_set.clear();
            for (const auto& c : split_ws(value)) t.itacized_set.insert(single_char(c, field));
        } else {
            throw ConfigError(field, "unknown key '" + key[0] + "'");
        }
    }
    t.validate();
    return t;
}

double scribal_distance(std::u32string_view a, std::u32string_view b, const CostTable& costs) {
    // Two-row DP over prefixes of a (rows) and b (columns).
    std::vector<double> prev(b.size() + 1);
    std::vector<double> cur(b.size() + 1);
    prev[0] = 0.0;
    for (std::size_t j = 1; j <= b.size(); ++j) prev[j] = prev[j - 1] + costs.indel(b[j - 1]);
    for (std::size_t i = 1; i <= a.size(); ++i) {
        cur[0] = prev[0] + costs.indel(a[i - 1]);
        for (std::size_t j = 1; j <= b.size(); ++j) {
            const double del = prev[j] + costs.indel(a[i - 1]);
            const double ins = cur[j - 1] + costs.indel(b[j - 1]);
            const double sub = prev[j - 1] + costs.substitution(a[i - 1], b[j - 1]);
            cur[j] = std::min({del, ins, sub});
        }
        std::swap(prev, cur);
    }
    return prev[b.size()];
}

double scribal_distance(std::string_view a, std::string_view b, const CostTable& costs) {
    if (a == b) return 0.0;
    return scribal_distance(to_u32(a), to_u32(b), costs);
}

bool Neighborhood::contains(std::string_view word) const {
    return std::any_of(members.begin(), members.end(), [&](const Neighbor& n) { return n.word == word; });
}

std::vector<std::string> Neighborhood::words() const {
    std::vector<std::string> out;
    out.reserve(members.size());
    for (const auto& m : members) out.push_back(m.word);
    return out;
}

namespace {

void finish(Neighborhood& n) {
    if (!n.contains(n.center)) n.members.push_back({n.center, 0.0});
    std::sort(n.members.begin(), n.members.end(), [](const Neighbor& x, const Neighbor& y) {
        return x.distance != y.distance ? x.distance < y.distance : x.word < y.word;
    });
}

}  // namespace

Neighborhood neighborhood(std::string_view center, double k, const AuthorDictionary& dict, std::int64_t min_count,
                          const CostTable& costs) {
    Neighborhood n{std::string(center), k, {}};
    const auto c32 = to_u32(center);
    for (const auto& [word, count] : dict.counts()) {
        if (count < min_count) continue;
        const double d = scribal_distance(c32, to_u32(word), costs);
        if (d <= k) n.members.push_back({word, d});
    }
    finish(n);
    return n;
}

NeighborhoodIndex::NeighborhoodIndex(const AuthorDictionary& dict, std::int64_t min_count, CostTable costs)
    : costs_(std::move(costs)), min_indel_(std::min(costs_.insert_delete_cost, costs_.space_edit_cost)) {
    for (const auto& [word, count] : dict.counts()) {
        if (count < min_count) continue;
        auto u = to_u32(word);
        buckets_[u.size()].emplace_back(word, std::move(u));
    }
}

Neighborhood NeighborhoodIndex::query(std::string_view center, double k) const {
    Neighborhood n{std::string(center), k, {}};
    const auto c32 = to_u32(center);
    for (const auto& [length, words] : buckets_) {
        const auto diff = length > c32.size() ? length - c32.size() : c32.size() - length;
        if (static_cast<double>(diff) * min_indel_ > k) continue;
        for (const auto& [word, w32] : words) {
            const double d = scribal_distance(c32, w32, costs_);
            if (d <= k) n.members.push_back({word, d});
        }
    }
    finish(n);
    return n;
}

}  // namespace scriptorium
