#include "tamtrl/rollout.hpp"

#include "tamtrl/credit.hpp"
#include "tamtrl/errors.hpp"

namespace tamtrl::rollout {

void ChunkingConfig::validate(int context_window) const {
    if (chunk_len < 1 || memory_budget < 1 || query_budget < 1 || answer_budget < 1) {
        throw ConfigError("rollout: all budgets must be >= 1");
    }
    // memory generation is the largest per-turn output
    const int need = query_budget + chunk_len + memory_budget + memory_budget + marker_overhead;
    if (need > context_window) {
        throw ConfigError("rollout: budgets (" + std::to_string(need) +
                          ") exceed model context window (" + std::to_string(context_window) + ")");
    }
}

std::vector<std::pair<int, int>> chunk_document(int doc_len, int chunk_len) {
    if (doc_len < 1) throw EmptyDocument();
    if (chunk_len < 1) throw ConfigError("chunk_document: chunk_len must be >= 1");
    std::vector<std::pair<int, int>> spans;
    for (int start = 0; start < doc_len; start += chunk_len) {
        spans.emplace_back(start, std::min(start + chunk_len, doc_len));
    }
    return spans;
}

std::vector<int> build_student_context(const vocab::Vocabulary& v,
                                       std::span<const int> query,
                                       std::span<const int> chunk,
                                       std::span<const int> memory) {
    const auto& sp = v.specials();
    std::vector<int> ctx;
    ctx.reserve(query.size() + chunk.size() + memory.size() + 4);
    ctx.push_back(sp.query_mark);
    ctx.insert(ctx.end(), query.begin(), query.end());
    ctx.push_back(sp.chunk_mark);
    ctx.insert(ctx.end(), chunk.begin(), chunk.end());
    ctx.push_back(sp.mem_mark);
    ctx.insert(ctx.end(), memory.begin(), memory.end());
    ctx.push_back(sp.gen_mark);
    return ctx;
}

std::vector<int> build_answer_context(const vocab::Vocabulary& v,
                                      std::span<const int> query,
                                      std::span<const int> memory) {
    const auto& sp = v.specials();
    std::vector<int> ctx;
    ctx.reserve(query.size() + memory.size() + 3);
    ctx.push_back(sp.query_mark);
    ctx.insert(ctx.end(), query.begin(), query.end());
    ctx.push_back(sp.mem_mark);
    ctx.insert(ctx.end(), memory.begin(), memory.end());
    ctx.push_back(sp.gen_mark);
    return ctx;
}

std::vector<int> memory_for_next_turn(const vocab::Vocabulary& v,
                                      const policy::Generation& gen,
                                      int memory_budget) {
    std::vector<int> mem = gen.tokens;
    if (!mem.empty() && mem.back() == v.specials().eos) mem.pop_back();
    if (static_cast<int>(mem.size()) > memory_budget) {
        mem.resize(static_cast<std::size_t>(memory_budget));
    }
    if (mem.empty()) mem = {v.specials().empty_mem};
    return mem;
}

Episode run_episode(const policy::PolicyParams& old_params,
                    const synth::TaskInstance& task,
                    const vocab::Vocabulary& v,
                    const ChunkingConfig& cfg,
                    const Sampling& sampling,
                    Rng& rng,
                    int query_index,
                    int group_index) {
    cfg.validate(old_params.cfg.context_window);
    if (static_cast<int>(task.query.size()) > cfg.query_budget) {
        throw ContextOverflow("run_episode: query exceeds query budget");
    }
    Episode ep;
    ep.query_index = query_index;
    ep.group_index = group_index;

    const auto spans = chunk_document(static_cast<int>(task.doc.size()), cfg.chunk_len);
    std::vector<int> memory = {v.specials().empty_mem};

    for (std::size_t t = 0; t < spans.size(); ++t) {
        TurnRecord turn;
        turn.turn_index = static_cast<int>(t);
        turn.chunk_span = spans[t];
        turn.memory_in = memory;
        const std::span<const int> chunk(task.doc.data() + spans[t].first,
                                         static_cast<std::size_t>(spans[t].second - spans[t].first));
        turn.student_context = build_student_context(v, task.query, chunk, memory);
        try {
            // the generation budget doubles as the hard memory truncation point
            turn.memory_out = policy::sample(old_params, turn.student_context, cfg.memory_budget,
                                             sampling.temperature, sampling.top_p, rng, v.specials().eos);
        } catch (const ContextOverflow& e) {
            throw ContextOverflow(std::string(e.what()) + " (turn " + std::to_string(t) + ")");
        }
        memory = memory_for_next_turn(v, turn.memory_out, cfg.memory_budget);
        ep.turns.push_back(std::move(turn));
    }

    ep.answer_context = build_answer_context(v, task.query, memory);
    ep.answer = policy::sample(old_params, ep.answer_context, cfg.answer_budget,
                               sampling.temperature, sampling.top_p, rng, v.specials().eos);
    ep.outcome_reward = credit::exact_match(ep.answer.tokens, task.answers, v);
    return ep;
}

std::vector<Episode> run_group(const policy::PolicyParams& old_params,
                               const synth::TaskInstance& task,
                               const vocab::Vocabulary& v,
                               const ChunkingConfig& cfg,
                               int group_size,
                               const Sampling& sampling,
                               std::uint64_t group_seed,
                               int query_index) {
    if (group_size < 2) throw ConfigError("run_group: group size must be >= 2");
    std::vector<Episode> episodes;
    episodes.reserve(static_cast<std::size_t>(group_size));
    for (int j = 0; j < group_size; ++j) {
        Rng rng(derive_seed(group_seed, {0xe9u, static_cast<std::uint64_t>(j)}));
        episodes.push_back(run_episode(old_params, task, v, cfg, sampling, rng, query_index, j));
    }
    return episodes;
}

ProbeResult probe_stepwise(const policy::PolicyParams& params,
                           const synth::TaskInstance& task,
                           const vocab::Vocabulary& v,
                           const Episode& episode,
                           const ChunkingConfig& cfg,
                           const Sampling& sampling,
                           Rng& rng,
                           double gamma) {
    ProbeResult res;
    double discount = 1.0;
    for (const auto& turn : episode.turns) {
        const auto mem = memory_for_next_turn(v, turn.memory_out, cfg.memory_budget);
        const auto ctx = build_answer_context(v, task.query, mem);
        const auto ans = policy::sample(params, ctx, cfg.answer_budget,
                                        sampling.temperature, sampling.top_p, rng, v.specials().eos);
        const int r = credit::exact_match(ans.tokens, task.answers, v);
        res.per_turn_reward.push_back(r);
        res.discounted_return += discount * r;
        discount *= gamma;
    }
    return res;
}

} // namespace tamtrl::rollout
