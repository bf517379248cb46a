#pragma once

#include <span>
#include <string>
#include <unordered_map>
#include <vector>

namespace tamtrl::vocab {

// Special token slots. Placed at the front of the id space so content tokens
// occupy a dense tail range.
struct Specials {
    int pad = 0;
    int eos = 1;
    int query_mark = 2;
    int chunk_mark = 3;
    int mem_mark = 4;
    int gen_mark = 5;
    int empty_mem = 6;
    static constexpr int count = 7;
};

// Closed token alphabet: 7 specials followed by generated content words
// (keys, a relation word, values, fillers). Immutable after construction.
class Vocabulary {
public:
    // num_filler content words are added on top of keys/values so the total
    // content count is num_keys + num_values + 1 + num_filler.
    static Vocabulary build(int num_keys, int num_values, int num_filler);

    std::vector<int> encode(std::span<const std::string> words) const;
    std::vector<std::string> decode(std::span<const int> ids) const;

    int id(const std::string& word) const; // UnknownToken on miss
    const std::string& word(int id) const; // InvalidId on out-of-range

    int size() const { return static_cast<int>(tokens_.size()); }
    const Specials& specials() const { return specials_; }
    bool is_special(int id) const { return id >= 0 && id < Specials::count; }

    int num_keys() const { return num_keys_; }
    int num_values() const { return num_values_; }
    int num_filler() const { return num_filler_; }
    int key_id(int k) const;    // k in [0, num_keys)
    int value_id(int v) const;  // v in [0, num_values)
    int filler_id(int f) const; // f in [0, num_filler)
    int rel_id() const { return rel_id_; }

    std::string to_json_string() const;
    static Vocabulary from_json_string(const std::string& text);
    void save(const std::string& path) const;
    static Vocabulary load(const std::string& path);

    bool operator==(const Vocabulary& other) const { return tokens_ == other.tokens_; }

private:
    Vocabulary() = default;
    void rebuild_index();

    std::vector<std::string> tokens_;
    std::unordered_map<std::string, int> index_;
    Specials specials_;
    int num_keys_ = 0;
    int num_values_ = 0;
    int num_filler_ = 0;
    int rel_id_ = 0;
};

} // namespace tamtrl::vocab
