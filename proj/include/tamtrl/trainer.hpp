#pragma once

#include "tamtrl/credit.hpp"
#include "tamtrl/policy.hpp"
#include "tamtrl/rollout.hpp"
#include "tamtrl/synth.hpp"
#include "tamtrl/vocab.hpp"

#include <functional>
#include <json.hpp>
#include <optional>
#include <span>
#include <vector>

namespace tamtrl::trainer {

struct TrainConfig {
    double eps_low = 0.2;
    double eps_high = 0.28;
    double beta = 1e-3;
    double learning_rate = 3e-4;
    double adam_b1 = 0.9;
    double adam_b2 = 0.95;
    double weight_decay = 0.01;
    int group_size = 8;     // G
    int rollout_batch = 4;  // s queries per round
    int buffer_target = 0;  // N turn samples; 0 means one full round (s * G)
    int inner_epochs = 1;   // mu
    int warmup_steps = 20;
    int total_steps = 200;
    double std_floor = 1e-6;
    bool overlength_penalty = false;   // optional decay on truncated generations
    double overlength_decay = 0.5;
    double rollout_temperature = 1.0;
    double rollout_top_p = 1.0;
    double eval_temperature = 1.0;
    double eval_top_p = 0.7;
    int eval_k = 4;
    int eval_every = 25;
    int eval_instances = 32;
    int checkpoint_every = 0; // 0 disables periodic checkpoints

    void validate() const;
    int effective_buffer_target() const {
        return buffer_target > 0 ? buffer_target : rollout_batch * group_size;
    }
};

// Pooled z-score over one query's full set of turn samples (all turns of all
// G rollouts), population std with a floor.
void group_advantages(std::span<credit::TurnSample> group, double std_floor);

// Groups samples by query_uid and applies group_advantages to each.
void compute_advantages(std::vector<credit::TurnSample>& samples, double std_floor);

// A group survives iff its outcomes are mixed: 0 < #correct < G.
bool group_survives(const std::vector<rollout::Episode>& group);

// NumericError when a gated mode carries a nonzero reward on an r=0 sample;
// enforced on every optimization batch.
void assert_gating(const credit::RewardBatch& batch, credit::RewardMode mode);

struct StepMetrics {
    int step = 0;
    bool updated = false;
    double mean_reward = 0.0;
    double em = 0.0;             // EM rate of this round's rollouts
    double resp_len = 0.0;       // mean generated tokens per turn
    double surviving_fraction = 0.0;
    long buffer_size = 0;
    double raw_p_min = 0.0, raw_p_max = 0.0, raw_p_mean = 0.0;
    double objective = 0.0;
    double mean_kl = 0.0;
    double mean_ratio = 1.0;
    double lr = 0.0;

    nlohmann::json to_json() const;
};

struct EvalMetrics {
    double em = 0.0;
    double sub_em = 0.0;
    std::vector<double> per_pass_em;
};

// Bias-corrected adaptive-moment optimizer with decoupled weight decay and
// linear warmup; state is aligned with PolicyParams tensor order.
class AdamW {
public:
    explicit AdamW(const policy::PolicyParams& params);
    void step(policy::PolicyParams& params, const policy::PolicyParams& grads,
              const TrainConfig& cfg, double lr);
    long updates() const { return t_; }

private:
    std::vector<std::vector<double>> m_, v_;
    long t_ = 0;
};

// Independent evaluation rollouts (temperature 1.0, top-p 0.7 by default),
// averaged over k passes.
EvalMetrics evaluate(const policy::PolicyParams& params,
                     const std::vector<synth::TaskInstance>& dataset,
                     const vocab::Vocabulary& v,
                     const rollout::ChunkingConfig& ccfg,
                     const TrainConfig& cfg,
                     std::uint64_t seed,
                     int max_instances = 0);

using MetricsSink = std::function<void(const nlohmann::json&)>;

// The outer optimization loop: rollout rounds, teacher scoring with the
// frozen old snapshot, dynamic-sampling buffer, and policy updates.
class Trainer {
public:
    Trainer(vocab::Vocabulary vocab,
            std::vector<synth::TaskInstance> dataset,
            policy::PolicyParams params,
            rollout::ChunkingConfig ccfg,
            TrainConfig cfg,
            credit::RewardMode mode,
            std::uint64_t seed);

    // One outer step. Returns metrics; `updated` says whether the buffer
    // reached its target and a parameter update happened.
    StepMetrics step();

    void run(const MetricsSink& sink = nullptr,
             const std::function<void(int, const policy::PolicyParams&)>& checkpoint_fn = nullptr);

    const policy::PolicyParams& params() const { return params_; }
    const policy::PolicyParams& ref_params() const { return ref_; }
    const vocab::Vocabulary& vocabulary() const { return vocab_; }
    long buffer_size() const { return static_cast<long>(buffer_.size()); }
    int steps_done() const { return step_; }

    // exposed for the end-to-end pipeline tests
    policy::SurrogateBatch make_surrogate(const std::vector<credit::TurnSample>& samples) const;

private:
    void apply_reward_pipeline(credit::RewardBatch& batch) const;

    vocab::Vocabulary vocab_;
    std::vector<synth::TaskInstance> dataset_;
    policy::PolicyParams params_;
    policy::PolicyParams ref_;
    rollout::ChunkingConfig ccfg_;
    TrainConfig cfg_;
    credit::RewardMode mode_;
    std::uint64_t seed_;
    Rng task_rng_;
    AdamW optim_;
    std::vector<credit::TurnSample> buffer_;
    int step_ = 0;
    int query_uid_ = 0;
};

} // namespace tamtrl::trainer
