#include "tamtrl/credit.hpp"

#include "tamtrl/errors.hpp"

#include <algorithm>
#include <cmath>
#include <limits>

namespace tamtrl::credit {

RewardMode parse_reward_mode(const std::string& name) {
    if (name == "tamtrl") return RewardMode::tamtrl;
    if (name == "outcome_only") return RewardMode::outcome_only;
    if (name == "no_lnorm") return RewardMode::no_lnorm;
    if (name == "no_mmnorm") return RewardMode::no_mmnorm;
    if (name == "global_reward") return RewardMode::global_reward;
    if (name == "plus_reward") return RewardMode::plus_reward;
    throw ModeError("unknown reward mode: " + name);
}

std::string reward_mode_name(RewardMode mode) {
    switch (mode) {
        case RewardMode::tamtrl: return "tamtrl";
        case RewardMode::outcome_only: return "outcome_only";
        case RewardMode::no_lnorm: return "no_lnorm";
        case RewardMode::no_mmnorm: return "no_mmnorm";
        case RewardMode::global_reward: return "global_reward";
        case RewardMode::plus_reward: return "plus_reward";
    }
    throw ModeError("invalid reward mode value");
}

bool mode_is_gated(RewardMode mode) {
    return mode != RewardMode::plus_reward;
}

double teacher_score(const policy::PolicyParams& teacher,
                     std::span<const int> teacher_context,
                     std::span<const int> memory_tokens,
                     bool sum_instead_of_mean) {
    if (memory_tokens.empty()) {
        throw ModeError("teacher_score: empty memory (the sampler always emits at least one token)");
    }
    const auto probs = policy::teacher_forced_probs(teacher, teacher_context, memory_tokens);
    double s = 0.0;
    for (double p : probs) s += p;
    return sum_instead_of_mean ? s : s / static_cast<double>(probs.size());
}

std::vector<TurnSample> build_turn_samples(const policy::PolicyParams& teacher,
                                           const std::vector<rollout::Episode>& episodes,
                                           const synth::TaskInstance& task,
                                           const vocab::Vocabulary& v,
                                           RewardMode mode,
                                           int query_uid) {
    std::vector<TurnSample> out;
    const bool sum_score = mode == RewardMode::no_lnorm;
    for (const auto& ep : episodes) {
        for (const auto& turn : ep.turns) {
            TurnSample s;
            s.query_uid = query_uid;
            s.turn = turn.turn_index;
            s.rollout = ep.group_index;
            s.student_context = turn.student_context;
            s.gen_tokens = turn.memory_out.tokens;
            s.old_logps = turn.memory_out.logprobs_old;
            s.gen_truncated = turn.memory_out.truncated;
            s.outcome = ep.outcome_reward;

            std::vector<int> filtered;
            if (mode == RewardMode::global_reward) {
                filtered = synth::all_relevant(task);
            } else {
                filtered = synth::filtered_chunk(task, turn.chunk_span.first, turn.chunk_span.second);
            }
            s.teacher_context = rollout::build_student_context(v, task.query, filtered, turn.memory_in);
            s.raw_score = teacher_score(teacher, s.teacher_context, s.gen_tokens, sum_score);
            out.push_back(std::move(s));
        }
        // the answer generation trains too; its reward is the bare outcome
        TurnSample ans;
        ans.query_uid = query_uid;
        ans.turn = static_cast<int>(ep.turns.size());
        ans.rollout = ep.group_index;
        ans.is_answer_step = true;
        ans.student_context = ep.answer_context;
        ans.gen_tokens = ep.answer.tokens;
        ans.old_logps = ep.answer.logprobs_old;
        ans.gen_truncated = ep.answer.truncated;
        ans.outcome = ep.outcome_reward;
        ans.norm_score = 1.0;
        out.push_back(std::move(ans));
    }
    return out;
}

void normalize_batch(RewardBatch& batch) {
    double mn = std::numeric_limits<double>::infinity();
    double mx = -std::numeric_limits<double>::infinity();
    bool any = false;
    for (const auto& s : batch.samples) {
        if (s.is_answer_step) continue;
        mn = std::min(mn, s.raw_score);
        mx = std::max(mx, s.raw_score);
        any = true;
    }
    if (!any) {
        batch.raw_min = batch.raw_max = 0.0;
        return;
    }
    batch.raw_min = mn;
    batch.raw_max = mx;
    for (auto& s : batch.samples) {
        if (s.is_answer_step) continue;
        s.norm_score = (mx > mn) ? (s.raw_score - mn) / (mx - mn) : 0.5;
    }
}

void assign_rewards(RewardBatch& batch, RewardMode mode) {
    for (auto& s : batch.samples) {
        const double r = static_cast<double>(s.outcome);
        if (s.is_answer_step) {
            s.reward = r; // norm_score is pinned to 1 before gating
            continue;
        }
        switch (mode) {
            case RewardMode::tamtrl:
            case RewardMode::no_lnorm:
            case RewardMode::global_reward:
                s.reward = s.norm_score * r;
                break;
            case RewardMode::outcome_only:
                s.reward = r;
                break;
            case RewardMode::no_mmnorm:
                s.reward = s.raw_score * r;
                break;
            case RewardMode::plus_reward:
                s.reward = s.norm_score + r;
                break;
        }
    }
}

std::vector<int> strip_for_match(std::span<const int> tokens, const vocab::Vocabulary& v) {
    std::vector<int> out;
    const auto& sp = v.specials();
    for (int t : tokens) {
        if (t == sp.eos || t == sp.pad || t == sp.query_mark || t == sp.chunk_mark ||
            t == sp.mem_mark || t == sp.gen_mark) {
            continue;
        }
        out.push_back(t);
    }
    return out;
}

int exact_match(std::span<const int> prediction, const std::vector<std::vector<int>>& answers,
                const vocab::Vocabulary& v) {
    const auto pred = strip_for_match(prediction, v);
    for (const auto& a : answers) {
        if (pred == strip_for_match(a, v)) return 1;
    }
    return 0;
}

namespace {

bool contains_subsequence(const std::vector<int>& hay, const std::vector<int>& needle) {
    if (needle.empty()) return false;
    if (needle.size() > hay.size()) return false;
    for (std::size_t i = 0; i + needle.size() <= hay.size(); ++i) {
        if (std::equal(needle.begin(), needle.end(), hay.begin() + static_cast<std::ptrdiff_t>(i))) {
            return true;
        }
    }
    return false;
}

} // namespace

double sub_em(std::span<const int> prediction, const std::vector<std::vector<int>>& answer_items,
              const vocab::Vocabulary& v) {
    if (answer_items.empty()) throw ModeError("sub_em: answer set must be nonempty");
    const auto pred = strip_for_match(prediction, v);
    int covered = 0;
    for (const auto& item : answer_items) {
        if (contains_subsequence(pred, strip_for_match(item, v))) ++covered;
    }
    return static_cast<double>(covered) / static_cast<double>(answer_items.size());
}

double average_at_k(std::span<const double> per_run_scores) {
    if (per_run_scores.empty()) throw ModeError("average_at_k: k must be >= 1");
    double s = 0.0;
    for (double x : per_run_scores) s += x;
    return s / static_cast<double>(per_run_scores.size());
}

} // namespace tamtrl::credit
