#pragma once

#include "tamtrl/policy.hpp"
#include "tamtrl/rollout.hpp"
#include "tamtrl/synth.hpp"
#include "tamtrl/vocab.hpp"

#include <string>
#include <vector>

namespace tamtrl::credit {

enum class RewardMode {
    tamtrl,        // R = p_hat * r
    outcome_only,  // R = r on every turn (uniform credit baseline)
    no_lnorm,      // raw score is the probability sum, not the mean
    no_mmnorm,     // R = raw p * r, min-max normalization skipped
    global_reward, // teacher context uses the whole document's relevant set
    plus_reward,   // R = p_hat + r
};

RewardMode parse_reward_mode(const std::string& name); // ModeError on miss
std::string reward_mode_name(RewardMode mode);
bool mode_is_gated(RewardMode mode); // r=0 forces R=0 for every turn

// One turn's unit of optimization: the student generation to differentiate
// plus everything the reward pipeline attaches to it.
struct TurnSample {
    int query_uid = 0;   // batch-unique id of the (query, rollout round) group
    int turn = 0;
    int rollout = 0;
    bool is_answer_step = false;

    std::vector<int> student_context;
    std::vector<int> gen_tokens;     // memory update or answer tokens
    std::vector<double> old_logps;
    std::vector<int> teacher_context; // empty for the answer step
    bool gen_truncated = false;

    double raw_score = 0.0;  // p  (answer step: unused)
    double norm_score = 0.0; // p_hat in [0, 1]
    int outcome = 0;         // r, shared across the rollout
    double reward = 0.0;     // R
    double advantage = 0.0;  // A, filled by the trainer
};

struct RewardBatch {
    std::vector<TurnSample> samples;
    double raw_min = 0.0;
    double raw_max = 0.0;
};

// Average (or, for the no_lnorm ablation, sum of) teacher-forced token
// probability of the memory update under the privileged filtered context.
double teacher_score(const policy::PolicyParams& teacher,
                     std::span<const int> teacher_context,
                     std::span<const int> memory_tokens,
                     bool sum_instead_of_mean = false);

// Builds turn samples for a group of episodes over one task, computing raw
// teacher scores with the frozen old-policy snapshot. The answer generation
// is appended as an extra sample whose reward is the bare outcome.
std::vector<TurnSample> build_turn_samples(const policy::PolicyParams& teacher,
                                           const std::vector<rollout::Episode>& episodes,
                                           const synth::TaskInstance& task,
                                           const vocab::Vocabulary& v,
                                           RewardMode mode,
                                           int query_uid);

// Min-max normalization of raw scores over the whole batch (memory-turn
// samples only). Degenerate max == min maps everything to 0.5.
void normalize_batch(RewardBatch& batch);

// Fills rewards per the active mode; requires normalize_batch first for the
// modes that use p_hat.
void assign_rewards(RewardBatch& batch, RewardMode mode);

// EOS, PAD and markers stripped before comparison.
std::vector<int> strip_for_match(std::span<const int> tokens, const vocab::Vocabulary& v);
int exact_match(std::span<const int> prediction, const std::vector<std::vector<int>>& answers,
                const vocab::Vocabulary& v);
double sub_em(std::span<const int> prediction, const std::vector<std::vector<int>>& answer_items,
              const vocab::Vocabulary& v);
double average_at_k(std::span<const double> per_run_scores);

} // namespace tamtrl::credit
