#pragma once

#include "tamtrl/policy.hpp"
#include "tamtrl/synth.hpp"
#include "tamtrl/vocab.hpp"

#include <utility>
#include <vector>

namespace tamtrl::rollout {

struct ChunkingConfig {
    int chunk_len = 25;      // l_c
    int memory_budget = 8;   // l_m
    int query_budget = 4;
    int answer_budget = 1;

    // marker overhead of the student prompt layout
    static constexpr int marker_overhead = 4;

    void validate(int context_window) const; // ConfigError on violation
};

struct Sampling {
    double temperature = 1.0;
    double top_p = 1.0;
};

struct TurnRecord {
    int turn_index = 0;
    std::pair<int, int> chunk_span;
    std::vector<int> student_context; // [Q] q [CHUNK] D_t [MEM] M_t [GEN]
    std::vector<int> memory_in;       // M_t
    policy::Generation memory_out;    // sampled M_{t+1}, <= l_m tokens
};

struct Episode {
    std::vector<TurnRecord> turns;
    std::vector<int> answer_context; // [Q] q [MEM] M_n [GEN]
    policy::Generation answer;
    int outcome_reward = 0;
    int query_index = 0;
    int group_index = 0;
};

// Consecutive spans of length l_c (last may be shorter) tiling the document.
std::vector<std::pair<int, int>> chunk_document(int doc_len, int chunk_len);

std::vector<int> build_student_context(const vocab::Vocabulary& v,
                                       std::span<const int> query,
                                       std::span<const int> chunk,
                                       std::span<const int> memory);

std::vector<int> build_answer_context(const vocab::Vocabulary& v,
                                      std::span<const int> query,
                                      std::span<const int> memory);

// The memory carried to the next turn: generated tokens with the trailing
// EOS stripped, truncated to the budget; EMPTY_MEM when nothing remains.
std::vector<int> memory_for_next_turn(const vocab::Vocabulary& v,
                                      const policy::Generation& gen,
                                      int memory_budget);

// Runs one multi-turn episode: chunked reads with bounded memory, then a
// final answer from [q, M_n]. Pure given (frozen params, task, rng state).
Episode run_episode(const policy::PolicyParams& old_params,
                    const synth::TaskInstance& task,
                    const vocab::Vocabulary& v,
                    const ChunkingConfig& cfg,
                    const Sampling& sampling,
                    Rng& rng,
                    int query_index = 0,
                    int group_index = 0);

// G episodes with per-episode derived seeds; order-independent results.
std::vector<Episode> run_group(const policy::PolicyParams& old_params,
                               const synth::TaskInstance& task,
                               const vocab::Vocabulary& v,
                               const ChunkingConfig& cfg,
                               int group_size,
                               const Sampling& sampling,
                               std::uint64_t group_seed,
                               int query_index = 0);

// Diagnostic only: answers from (q, M_t) after every turn and reports the
// per-turn correctness bits plus their discounted sum. No gradient path.
struct ProbeResult {
    std::vector<int> per_turn_reward;
    double discounted_return = 0.0;
};
ProbeResult probe_stepwise(const policy::PolicyParams& params,
                           const synth::TaskInstance& task,
                           const vocab::Vocabulary& v,
                           const Episode& episode,
                           const ChunkingConfig& cfg,
                           const Sampling& sampling,
                           Rng& rng,
                           double gamma);

} // namespace tamtrl::rollout
