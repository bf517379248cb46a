#include "tamtrl/trainer.hpp"

#include "tamtrl/errors.hpp"

#include <algorithm>
#include <cmath>
#include <map>
#include <numeric>

namespace tamtrl::trainer {

void TrainConfig::validate() const {
    if (!(eps_low > 0.0 && eps_low <= eps_high && eps_high < 1.0)) {
        throw ConfigError("train: need 0 < eps_low <= eps_high < 1");
    }
    if (beta < 0.0) throw ConfigError("train: beta must be >= 0");
    if (std_floor <= 0.0) throw ConfigError("train: std_floor must be > 0");
    if (group_size < 2) throw ConfigError("train: group_size must be >= 2");
    if (rollout_batch < 1) throw ConfigError("train: rollout_batch must be >= 1");
    if (inner_epochs < 1) throw ConfigError("train: inner_epochs must be >= 1");
    if (learning_rate <= 0.0) throw ConfigError("train: learning_rate must be > 0");
    if (eval_k < 1) throw ConfigError("train: eval_k must be >= 1");
}

void group_advantages(std::span<credit::TurnSample> group, double std_floor) {
    if (group.empty()) return;
    const double n = static_cast<double>(group.size());
    double mean = 0.0;
    for (const auto& s : group) mean += s.reward;
    mean /= n;
    double var = 0.0;
    for (const auto& s : group) var += (s.reward - mean) * (s.reward - mean);
    var /= n; // population variance
    const double denom = std::max(std::sqrt(var), std_floor);
    for (auto& s : group) s.advantage = (s.reward - mean) / denom;
}

void compute_advantages(std::vector<credit::TurnSample>& samples, double std_floor) {
    // samples of one query group are contiguous by construction; group by uid
    std::size_t begin = 0;
    while (begin < samples.size()) {
        std::size_t end = begin + 1;
        while (end < samples.size() && samples[end].query_uid == samples[begin].query_uid) ++end;
        group_advantages(std::span<credit::TurnSample>(samples.data() + begin, end - begin), std_floor);
        begin = end;
    }
}

bool group_survives(const std::vector<rollout::Episode>& group) {
    int correct = 0;
    for (const auto& ep : group) correct += ep.outcome_reward;
    return correct > 0 && correct < static_cast<int>(group.size());
}

nlohmann::json StepMetrics::to_json() const {
    return {{"step", step},
            {"updated", updated},
            {"mean_reward", mean_reward},
            {"em", em},
            {"resp_len", resp_len},
            {"surviving_fraction", surviving_fraction},
            {"buffer_size", buffer_size},
            {"raw_p_min", raw_p_min},
            {"raw_p_max", raw_p_max},
            {"raw_p_mean", raw_p_mean},
            {"objective", objective},
            {"kl", mean_kl},
            {"ratio", mean_ratio},
            {"lr", lr}};
}

AdamW::AdamW(const policy::PolicyParams& params) {
    params.for_each_tensor([this](const std::string&, const std::vector<double>& t) {
        m_.emplace_back(t.size(), 0.0);
        v_.emplace_back(t.size(), 0.0);
    });
}

void AdamW::step(policy::PolicyParams& params, const policy::PolicyParams& grads,
                 const TrainConfig& cfg, double lr) {
    ++t_;
    const double bc1 = 1.0 - std::pow(cfg.adam_b1, static_cast<double>(t_));
    const double bc2 = 1.0 - std::pow(cfg.adam_b2, static_cast<double>(t_));
    constexpr double eps = 1e-8;

    std::size_t ti = 0;
    std::vector<const std::vector<double>*> gtensors;
    grads.for_each_tensor([&gtensors](const std::string&, const std::vector<double>& t) {
        gtensors.push_back(&t);
    });
    params.for_each_tensor([&](const std::string&, std::vector<double>& t) {
        const auto& g = *gtensors[ti];
        auto& m = m_[ti];
        auto& v = v_[ti];
        for (std::size_t i = 0; i < t.size(); ++i) {
            m[i] = cfg.adam_b1 * m[i] + (1.0 - cfg.adam_b1) * g[i];
            v[i] = cfg.adam_b2 * v[i] + (1.0 - cfg.adam_b2) * g[i] * g[i];
            const double mhat = m[i] / bc1;
            const double vhat = v[i] / bc2;
            t[i] -= lr * (mhat / (std::sqrt(vhat) + eps) + cfg.weight_decay * t[i]);
        }
        ++ti;
    });
}

EvalMetrics evaluate(const policy::PolicyParams& params,
                     const std::vector<synth::TaskInstance>& dataset,
                     const vocab::Vocabulary& v,
                     const rollout::ChunkingConfig& ccfg,
                     const TrainConfig& cfg,
                     std::uint64_t seed,
                     int max_instances) {
    if (dataset.empty()) throw ConfigError("evaluate: dataset is empty");
    const int n = max_instances > 0
                      ? std::min<int>(max_instances, static_cast<int>(dataset.size()))
                      : static_cast<int>(dataset.size());
    const rollout::Sampling sampling{cfg.eval_temperature, cfg.eval_top_p};
    EvalMetrics out;
    double sub_sum = 0.0;
    for (int pass = 0; pass < cfg.eval_k; ++pass) {
        double em_sum = 0.0, se_sum = 0.0;
        for (int i = 0; i < n; ++i) {
            Rng rng(derive_seed(seed, {0xea1u, static_cast<std::uint64_t>(pass),
                                       static_cast<std::uint64_t>(i)}));
            const auto ep = rollout::run_episode(params, dataset[static_cast<std::size_t>(i)], v,
                                                 ccfg, sampling, rng, i, 0);
            em_sum += ep.outcome_reward;
            se_sum += credit::sub_em(ep.answer.tokens, dataset[static_cast<std::size_t>(i)].answers, v);
        }
        out.per_pass_em.push_back(em_sum / n);
        sub_sum += se_sum / n;
    }
    out.em = credit::average_at_k(out.per_pass_em);
    out.sub_em = sub_sum / cfg.eval_k;
    return out;
}

Trainer::Trainer(vocab::Vocabulary vocab,
                 std::vector<synth::TaskInstance> dataset,
                 policy::PolicyParams params,
                 rollout::ChunkingConfig ccfg,
                 TrainConfig cfg,
                 credit::RewardMode mode,
                 std::uint64_t seed)
    : vocab_(std::move(vocab)),
      dataset_(std::move(dataset)),
      params_(std::move(params)),
      ref_(params_.snapshot()), // the reference policy is the initial snapshot, never refreshed
      ccfg_(ccfg),
      cfg_(cfg),
      mode_(mode),
      seed_(seed),
      task_rng_(derive_seed(seed, {0x7a5cu})),
      optim_(params_) {
    cfg_.validate();
    ccfg_.validate(params_.cfg.context_window);
    if (dataset_.empty()) throw ConfigError("trainer: dataset is empty");
}

void Trainer::apply_reward_pipeline(credit::RewardBatch& batch) const {
    credit::normalize_batch(batch);
    credit::assign_rewards(batch, mode_);
    if (cfg_.overlength_penalty) {
        for (auto& s : batch.samples) {
            if (s.gen_truncated) s.reward *= cfg_.overlength_decay;
        }
    }
    // outcome gating must hold on every training batch in the gated modes
    if (!cfg_.overlength_penalty) assert_gating(batch, mode_);
}

void assert_gating(const credit::RewardBatch& batch, credit::RewardMode mode) {
    if (!credit::mode_is_gated(mode)) return;
    for (const auto& s : batch.samples) {
        if (s.outcome == 0 && s.reward != 0.0) {
            throw NumericError("reward gating violated: r=0 sample with nonzero reward");
        }
    }
}

policy::SurrogateBatch Trainer::make_surrogate(const std::vector<credit::TurnSample>& samples) const {
    policy::SurrogateBatch batch;
    batch.eps_low = cfg_.eps_low;
    batch.eps_high = cfg_.eps_high;
    batch.beta = cfg_.beta;
    batch.ref = &ref_;
    batch.samples.reserve(samples.size());
    for (const auto& s : samples) {
        policy::SurrogateSample out;
        out.context = s.student_context;
        out.tokens = s.gen_tokens;
        out.old_logps = s.old_logps;
        out.advantage = s.advantage;
        batch.samples.push_back(std::move(out));
    }
    return batch;
}

StepMetrics Trainer::step() {
    StepMetrics metrics;
    metrics.step = ++step_;

    const auto old_params = params_.snapshot();
    const rollout::Sampling sampling{cfg_.rollout_temperature, cfg_.rollout_top_p};

    int episodes_total = 0, episodes_correct = 0, groups_survived = 0;
    long gen_tokens = 0, gen_count = 0;

    for (int qi = 0; qi < cfg_.rollout_batch; ++qi) {
        const auto task_idx = task_rng_.uniform_int(dataset_.size());
        const auto& task = dataset_[task_idx];
        const std::uint64_t group_seed =
            derive_seed(seed_, {0x9011u, static_cast<std::uint64_t>(step_), static_cast<std::uint64_t>(qi)});
        const auto group = rollout::run_group(old_params, task, vocab_, ccfg_, cfg_.group_size,
                                              sampling, group_seed, qi);
        for (const auto& ep : group) {
            ++episodes_total;
            episodes_correct += ep.outcome_reward;
            for (const auto& t : ep.turns) {
                gen_tokens += static_cast<long>(t.memory_out.tokens.size());
                ++gen_count;
            }
        }
        if (!group_survives(group)) continue;
        ++groups_survived;
        auto samples = credit::build_turn_samples(old_params, group, task, vocab_, mode_, query_uid_++);
        buffer_.insert(buffer_.end(), std::make_move_iterator(samples.begin()),
                       std::make_move_iterator(samples.end()));
    }

    metrics.em = episodes_total ? static_cast<double>(episodes_correct) / episodes_total : 0.0;
    metrics.resp_len = gen_count ? static_cast<double>(gen_tokens) / gen_count : 0.0;
    metrics.surviving_fraction = static_cast<double>(groups_survived) / cfg_.rollout_batch;
    metrics.buffer_size = static_cast<long>(buffer_.size());
    metrics.lr = cfg_.learning_rate;

    if (static_cast<int>(buffer_.size()) < cfg_.effective_buffer_target()) {
        return metrics; // NeedMore: keep accumulating surviving groups
    }

    credit::RewardBatch batch;
    batch.samples = std::move(buffer_);
    buffer_.clear();
    apply_reward_pipeline(batch);
    compute_advantages(batch.samples, cfg_.std_floor);

    metrics.raw_p_min = batch.raw_min;
    metrics.raw_p_max = batch.raw_max;
    double p_sum = 0.0, r_sum = 0.0;
    long p_count = 0;
    for (const auto& s : batch.samples) {
        r_sum += s.reward;
        if (!s.is_answer_step) {
            p_sum += s.raw_score;
            ++p_count;
        }
    }
    metrics.raw_p_mean = p_count ? p_sum / p_count : 0.0;
    metrics.mean_reward = batch.samples.empty() ? 0.0 : r_sum / static_cast<double>(batch.samples.size());

    const auto surrogate = make_surrogate(batch.samples);
    const auto pre_step = params_.snapshot();
    const auto optim_backup = optim_;
    try {
        for (int epoch = 0; epoch < cfg_.inner_epochs; ++epoch) {
            auto grads = policy::PolicyParams::zeros_like(params_);
            const auto stats = policy::loss_and_grads(params_, surrogate, grads);
            const double warm = cfg_.warmup_steps > 0
                                    ? std::min(1.0, static_cast<double>(optim_.updates() + 1) / cfg_.warmup_steps)
                                    : 1.0;
            metrics.lr = cfg_.learning_rate * warm;
            optim_.step(params_, grads, cfg_, metrics.lr);
            ++params_.version;
            metrics.objective = stats.objective;
            metrics.mean_kl = stats.mean_kl;
            metrics.mean_ratio = stats.mean_ratio;
        }
    } catch (const NumericError&) {
        params_ = pre_step;
        optim_ = optim_backup;
        throw;
    }
    metrics.updated = true;
    metrics.buffer_size = 0;
    return metrics;
}

void Trainer::run(const MetricsSink& sink,
                  const std::function<void(int, const policy::PolicyParams&)>& checkpoint_fn) {
    for (int s = step_; s < cfg_.total_steps; ++s) {
        const auto metrics = step();
        if (sink) sink(metrics.to_json());
        if (checkpoint_fn && cfg_.checkpoint_every > 0 && metrics.step % cfg_.checkpoint_every == 0) {
            checkpoint_fn(metrics.step, params_);
        }
    }
}

} // namespace tamtrl::trainer
