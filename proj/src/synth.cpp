#include "tamtrl/synth.hpp"

#include "tamtrl/errors.hpp"
#include "tamtrl/rng.hpp"

#include <algorithm>
#include <fstream>
#include <json.hpp>
#include <unordered_set>

namespace tamtrl::synth {

namespace {
constexpr int kSchemaVersion = 1;
}

void SynthConfig::validate() const {
    if (relevant_count < 1 || relevant_count >= num_sentences) {
        throw ConfigError("synth: need 1 <= relevant_count < num_sentences");
    }
    if (sentence_len < 3) throw ConfigError("synth: sentence_len must be >= 3");
    if (multi_hop && relevant_count != 2) {
        throw ConfigError("synth: multi_hop requires relevant_count == 2");
    }
}

namespace {

int random_filler(const vocab::Vocabulary& v, Rng& rng) {
    return v.filler_id(static_cast<int>(rng.uniform_int(static_cast<std::uint64_t>(v.num_filler()))));
}

std::vector<int> fact_sentence(const vocab::Vocabulary& v, Rng& rng, int len,
                               int subject, int object) {
    std::vector<int> s = {subject, v.rel_id(), object};
    while (static_cast<int>(s.size()) < len) s.push_back(random_filler(v, rng));
    return s;
}

TaskInstance generate_one(const vocab::Vocabulary& v, const SynthConfig& cfg, Rng& rng) {
    TaskInstance inst;
    inst.num_sentences = cfg.num_sentences;

    const auto slots = rng.sample_without_replacement(cfg.num_sentences, cfg.relevant_count);
    std::unordered_set<int> relevant_slots(slots.begin(), slots.end());

    // facts: [k is v ...] per relevant sentence; multi-hop chains k1->k2->v
    std::unordered_set<int> used_keys;
    std::unordered_set<int> used_values;
    std::vector<std::vector<int>> fact_sentences;
    if (cfg.multi_hop) {
        if (v.num_keys() < 3) throw ConfigError("synth: multi_hop needs >= 3 keys");
        const auto ks = rng.sample_without_replacement(v.num_keys(), 2);
        int k1 = v.key_id(ks[0]), k2 = v.key_id(ks[1]);
        if (rng.uniform() < 0.5) std::swap(k1, k2);
        const int val = v.value_id(static_cast<int>(rng.uniform_int(static_cast<std::uint64_t>(v.num_values()))));
        std::vector<std::vector<int>> chain = {
            fact_sentence(v, rng, cfg.sentence_len, k1, k2),
            fact_sentence(v, rng, cfg.sentence_len, k2, val)};
        if (rng.uniform() < 0.5) std::swap(chain[0], chain[1]);
        fact_sentences = std::move(chain);
        used_keys = {k1, k2};
        used_values = {val};
        inst.query = {k1};
        inst.answers = {{val}};
    } else {
        if (v.num_keys() < 2) throw ConfigError("synth: needs >= 2 keys");
        if (v.num_values() < cfg.relevant_count) {
            throw ConfigError("synth: relevant_count exceeds value vocabulary");
        }
        const int k = v.key_id(static_cast<int>(rng.uniform_int(static_cast<std::uint64_t>(v.num_keys()))));
        const auto vals = rng.sample_without_replacement(v.num_values(), cfg.relevant_count);
        used_keys = {k};
        inst.query = {k};
        for (int vi : vals) {
            const int val = v.value_id(vi);
            fact_sentences.push_back(fact_sentence(v, rng, cfg.sentence_len, k, val));
            used_values.insert(val);
            inst.answers.push_back({val});
        }
    }

    int fact_idx = 0;
    for (int s = 0; s < cfg.num_sentences; ++s) {
        std::vector<int> tokens;
        bool relevant = relevant_slots.count(s) > 0;
        if (relevant) {
            tokens = fact_sentences[static_cast<std::size_t>(fact_idx++)];
        } else if (rng.uniform() < 0.5) {
            // decoy fact with a key never used by a relevant sentence
            int dk;
            do {
                dk = v.key_id(static_cast<int>(rng.uniform_int(static_cast<std::uint64_t>(v.num_keys()))));
            } while (used_keys.count(dk));
            int dv;
            do {
                dv = v.value_id(static_cast<int>(rng.uniform_int(static_cast<std::uint64_t>(v.num_values()))));
            } while (used_values.count(dv));
            tokens = fact_sentence(v, rng, cfg.sentence_len, dk, dv);
        } else {
            for (int i = 0; i < cfg.sentence_len; ++i) tokens.push_back(random_filler(v, rng));
        }
        SentenceSpan span;
        span.begin = static_cast<int>(inst.doc.size());
        inst.doc.insert(inst.doc.end(), tokens.begin(), tokens.end());
        span.end = static_cast<int>(inst.doc.size());
        span.relevant = relevant;
        inst.sentence_spans.push_back(span);
    }
    return inst;
}

} // namespace

std::vector<TaskInstance> generate(const vocab::Vocabulary& v, const SynthConfig& cfg, int n) {
    cfg.validate();
    if (n < 1) throw ConfigError("synth: n must be >= 1");
    std::vector<TaskInstance> out;
    out.reserve(static_cast<std::size_t>(n));
    for (int i = 0; i < n; ++i) {
        Rng rng(derive_seed(cfg.seed, {0x51u, static_cast<std::uint64_t>(i)}));
        out.push_back(generate_one(v, cfg, rng));
    }
    return out;
}

std::vector<int> filtered_chunk(const TaskInstance& inst, int start, int end) {
    if (start < 0 || end > static_cast<int>(inst.doc.size()) || start >= end) {
        throw SpanError("filtered_chunk: span out of range");
    }
    std::vector<int> out;
    for (const auto& s : inst.sentence_spans) {
        if (s.relevant && s.begin >= start && s.begin < end) {
            out.insert(out.end(), inst.doc.begin() + s.begin, inst.doc.begin() + s.end);
        }
    }
    return out;
}

std::vector<int> all_relevant(const TaskInstance& inst) {
    return filtered_chunk(inst, 0, static_cast<int>(inst.doc.size()));
}

std::string to_jsonl_line(const TaskInstance& inst) {
    nlohmann::json j;
    j["schema_version"] = kSchemaVersion;
    j["doc"] = inst.doc;
    auto spans = nlohmann::json::array();
    for (const auto& s : inst.sentence_spans) {
        spans.push_back({s.begin, s.end, s.relevant ? 1 : 0});
    }
    j["sentence_spans"] = spans;
    j["query"] = inst.query;
    j["answers"] = inst.answers;
    j["num_sentences"] = inst.num_sentences;
    return j.dump();
}

TaskInstance from_jsonl_line(const std::string& line) {
    nlohmann::json j = nlohmann::json::parse(line);
    if (j.at("schema_version").get<int>() != kSchemaVersion) {
        throw IoError("dataset line: unsupported schema version");
    }
    TaskInstance inst;
    inst.doc = j.at("doc").get<std::vector<int>>();
    for (const auto& s : j.at("sentence_spans")) {
        inst.sentence_spans.push_back({s.at(0).get<int>(), s.at(1).get<int>(), s.at(2).get<int>() != 0});
    }
    inst.query = j.at("query").get<std::vector<int>>();
    inst.answers = j.at("answers").get<std::vector<std::vector<int>>>();
    inst.num_sentences = j.at("num_sentences").get<int>();
    return inst;
}

void write_jsonl(const std::string& path, const std::vector<TaskInstance>& tasks) {
    std::ofstream f(path);
    if (!f) throw IoError("cannot open for write: " + path);
    for (const auto& t : tasks) f << to_jsonl_line(t) << "\n";
}

std::vector<TaskInstance> read_jsonl(const std::string& path) {
    std::ifstream f(path);
    if (!f) throw IoError("cannot open: " + path);
    std::vector<TaskInstance> out;
    std::string line;
    while (std::getline(f, line)) {
        if (!line.empty()) out.push_back(from_jsonl_line(line));
    }
    return out;
}

} // namespace tamtrl::synth
