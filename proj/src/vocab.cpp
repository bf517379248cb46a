#include "tamtrl/vocab.hpp"

#include "tamtrl/errors.hpp"

#include <cstdio>
#include <fstream>
#include <json.hpp>

namespace tamtrl::vocab {

namespace {

std::string padded(const char* prefix, int i) {
    char buf[32];
    std::snprintf(buf, sizeof(buf), "%s%02d", prefix, i);
    return buf;
}

} // namespace

Vocabulary Vocabulary::build(int num_keys, int num_values, int num_filler) {
    if (num_keys < 1 || num_values < 1 || num_filler < 0) {
        throw ConfigError("vocabulary: num_keys/num_values must be >= 1, num_filler >= 0");
    }
    Vocabulary v;
    v.tokens_ = {"<pad>", "<eos>", "<q>", "<chunk>", "<mem>", "<gen>", "<m0>"};
    v.num_keys_ = num_keys;
    v.num_values_ = num_values;
    v.num_filler_ = num_filler;
    for (int i = 0; i < num_keys; ++i) v.tokens_.push_back(padded("key", i));
    v.rel_id_ = static_cast<int>(v.tokens_.size());
    v.tokens_.push_back("is");
    for (int i = 0; i < num_values; ++i) v.tokens_.push_back(padded("val", i));
    for (int i = 0; i < num_filler; ++i) v.tokens_.push_back(padded("fill", i));
    if (v.size() < 16) throw ConfigError("vocabulary: total size must be >= 16");
    v.rebuild_index();
    return v;
}

void Vocabulary::rebuild_index() {
    index_.clear();
    for (int i = 0; i < size(); ++i) index_[tokens_[static_cast<std::size_t>(i)]] = i;
}

int Vocabulary::id(const std::string& w) const {
    auto it = index_.find(w);
    if (it == index_.end()) throw UnknownToken(w);
    return it->second;
}

const std::string& Vocabulary::word(int i) const {
    if (i < 0 || i >= size()) throw InvalidId(i);
    return tokens_[static_cast<std::size_t>(i)];
}

std::vector<int> Vocabulary::encode(std::span<const std::string> words) const {
    std::vector<int> out;
    out.reserve(words.size());
    for (const auto& w : words) out.push_back(id(w));
    return out;
}

std::vector<std::string> Vocabulary::decode(std::span<const int> ids) const {
    std::vector<std::string> out;
    out.reserve(ids.size());
    for (int i : ids) out.push_back(word(i));
    return out;
}

int Vocabulary::key_id(int k) const {
    if (k < 0 || k >= num_keys_) throw InvalidId(k);
    return Specials::count + k;
}

int Vocabulary::value_id(int v) const {
    if (v < 0 || v >= num_values_) throw InvalidId(v);
    return rel_id_ + 1 + v;
}

int Vocabulary::filler_id(int f) const {
    if (f < 0 || f >= num_filler_) throw InvalidId(f);
    return rel_id_ + 1 + num_values_ + f;
}

std::string Vocabulary::to_json_string() const {
    nlohmann::json j;
    j["tokens"] = tokens_;
    j["specials"] = {{"pad", specials_.pad},
                     {"eos", specials_.eos},
                     {"query_mark", specials_.query_mark},
                     {"chunk_mark", specials_.chunk_mark},
                     {"mem_mark", specials_.mem_mark},
                     {"gen_mark", specials_.gen_mark},
                     {"empty_mem", specials_.empty_mem}};
    j["num_keys"] = num_keys_;
    j["num_values"] = num_values_;
    j["num_filler"] = num_filler_;
    return j.dump(2);
}

Vocabulary Vocabulary::from_json_string(const std::string& text) {
    nlohmann::json j = nlohmann::json::parse(text);
    Vocabulary v;
    v.tokens_ = j.at("tokens").get<std::vector<std::string>>();
    v.num_keys_ = j.at("num_keys").get<int>();
    v.num_values_ = j.at("num_values").get<int>();
    v.num_filler_ = j.at("num_filler").get<int>();
    v.rel_id_ = Specials::count + v.num_keys_;
    if (v.size() < 16) throw ConfigError("vocabulary file: size < 16");
    v.rebuild_index();
    return v;
}

void Vocabulary::save(const std::string& path) const {
    std::ofstream f(path);
    if (!f) throw IoError("cannot open for write: " + path);
    f << to_json_string() << "\n";
}

Vocabulary Vocabulary::load(const std::string& path) {
    std::ifstream f(path);
    if (!f) throw IoError("cannot open: " + path);
    std::string text((std::istreambuf_iterator<char>(f)), std::istreambuf_iterator<char>());
    return from_json_string(text);
}

} // namespace tamtrl::vocab
