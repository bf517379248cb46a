#pragma once

#include "tamtrl/vocab.hpp"

#include <cstdint>
#include <optional>
#include <string>
#include <utility>
#include <vector>

namespace tamtrl::synth {

struct SynthConfig {
    int num_sentences = 20;
    int relevant_count = 1;
    int sentence_len = 5;
    bool multi_hop = false;
    std::uint64_t seed = 0;

    void validate() const; // ConfigError on violation
};

struct SentenceSpan {
    int begin = 0;
    int end = 0;
    bool relevant = false;
};

// One synthetic long-document QA item. Sentences tile `doc` exactly; every
// relevant sentence carries one (key, value) fact; the query names one key.
struct TaskInstance {
    std::vector<int> doc;
    std::vector<SentenceSpan> sentence_spans;
    std::vector<int> query;
    std::vector<std::vector<int>> answers;
    int num_sentences = 0;
};

// Generates n annotated instances: relevant fact sentences placed uniformly
// at random among distractor sentences. Deterministic under cfg.seed.
std::vector<TaskInstance> generate(const vocab::Vocabulary& v, const SynthConfig& cfg, int n);

// Concatenation, in document order, of the tokens of every relevant sentence
// whose first token lies in [start, end). A relevant sentence split by a
// chunk boundary belongs wholly to the chunk containing its first token.
std::vector<int> filtered_chunk(const TaskInstance& inst, int start, int end);

// All relevant sentences of the whole document as one sequence.
std::vector<int> all_relevant(const TaskInstance& inst);

std::string to_jsonl_line(const TaskInstance& inst);
TaskInstance from_jsonl_line(const std::string& line);
void write_jsonl(const std::string& path, const std::vector<TaskInstance>& tasks);
std::vector<TaskInstance> read_jsonl(const std::string& path);

} // namespace tamtrl::synth
