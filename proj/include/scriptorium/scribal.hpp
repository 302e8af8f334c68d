#pragma once

#include <cstddef>
#include <map>
#include <set>
#include <string>
#include <string_view>
#include <utility>
#include <vector>

#include "scriptorium/text.hpp"

namespace scriptorium {

// Edit costs for the scribal distance. Substitutions between members of
// `itacized_set` cost `itacism_cost`; explicit pairs override everything.
struct CostTable {
    std::map<std::pair<char32_t, char32_t>, double> substitution_costs;  // keyed with first < second
    double default_substitution_cost = 1.0;
    double insert_delete_cost = 1.0;
    std::set<char32_t> itacized_set;
    double itacism_cost = 0.5;
    double space_edit_cost = 0.5;

    // ι, υ, η at 0.5; space insert/delete 0.5; everything else 1.0.
    static CostTable default_table();
    // Classical Levenshtein.
    static CostTable unit();
    // Reads the `[costs]` section of a plain-text config (other sections are ignored):
    //   insert_delete = 1.0
    //   space_edit = 0.5
    //   default_substitution = 1.0
    //   itacism = 0.5
    //   itacized = ι υ η
    //   sub ε υ = 0.75
    // Keys not given keep the default-table values. The result is validated.
    static CostTable parse(std::string_view config);

    void set_substitution(char32_t a, char32_t b, double cost);
    double substitution(char32_t a, char32_t b) const;
    double indel(char32_t c) const { return c == U' ' ? space_edit_cost : insert_delete_cost; }

    // Positivity and the triangle inequality over every character named in the
    // table plus stand-ins for unnamed characters. Throws ConfigError.
    void validate() const;
};

double scribal_distance(std::u32string_view a, std::u32string_view b, const CostTable& costs);
double scribal_distance(std::string_view a, std::string_view b, const CostTable& costs);

struct Neighbor {
    std::string word;
    double distance = 0.0;

    bool operator==(const Neighbor&) const = default;
};

// W_k(center): members ordered by (distance, word). The center is always a member.
struct Neighborhood {
    std::string center;
    double radius = 0.0;
    std::vector<Neighbor> members;

    bool contains(std::string_view word) const;
    std::vector<std::string> words() const;
};

// Reference implementation: brute force over every dictionary word with count >= min_count.
Neighborhood neighborhood(std::string_view center, double k, const AuthorDictionary& dict, std::int64_t min_count,
                          const CostTable& costs);

// Length-bucketed accelerator; output is identical to neighborhood().
class NeighborhoodIndex {
public:
    NeighborhoodIndex(const AuthorDictionary& dict, std::int64_t min_count, CostTable costs);

    Neighborhood query(std::string_view center, double k) const;
    const CostTable& costs() const { return costs_; }

private:
    CostTable costs_;
    double min_indel_ = 1.0;
    // length in code points -> (utf8, u32) words
    std::map<std::size_t, std::vector<std::pair<std::string, std::u32string>>> buckets_;
};

}  // namespace scriptorium
