#pragma once

#include "tamtrl/rng.hpp"

#include <cstdint>
#include <functional>
#include <span>
#include <string>
#include <vector>

namespace tamtrl::policy {

struct ModelConfig {
    int vocab_size = 0;
    int d_model = 64;
    int n_layers = 2;
    int n_heads = 2;
    int context_window = 512;
    std::uint64_t seed = 0;

    int d_ff() const { return 4 * d_model; }
    int d_head() const { return d_model / n_heads; }
    void validate() const; // ConfigError on violation
};

struct LayerParams {
    std::vector<double> wq, wk, wv, wo; // d x d
    std::vector<double> bq, bk, bv, bo; // d
    std::vector<double> w1, b1;         // d x 4d, 4d
    std::vector<double> w2, b2;         // 4d x d, d
};

// The single parameter set behind the student, teacher scorer, old policy and
// reference policy; the latter three are frozen snapshots of it.
struct PolicyParams {
    ModelConfig cfg;
    std::int64_t version = 0;

    std::vector<double> tok_emb; // V x d
    std::vector<double> pos_emb; // W x d
    std::vector<LayerParams> layers;
    std::vector<double> w_out; // d x V
    std::vector<double> b_out; // V

    static PolicyParams init(const ModelConfig& cfg);
    static PolicyParams zeros_like(const PolicyParams& p);

    PolicyParams snapshot() const;
    void zero();
    bool all_finite() const;
    std::size_t num_params() const;

    // Visits every tensor in a fixed, documented order (checkpoint layout,
    // optimizer state and finite-difference indexing all rely on it).
    void for_each_tensor(const std::function<void(const std::string&, std::vector<double>&)>& f);
    void for_each_tensor(const std::function<void(const std::string&, const std::vector<double>&)>& f) const;

    void save(const std::string& path) const;
    static PolicyParams load(const std::string& path);
};

struct Generation {
    std::vector<int> tokens;
    std::vector<double> logprobs_old; // full-softmax log-probs at temperature 1
    bool truncated = false;
};

// Activation record for one forward pass; consumed by backward().
struct LayerCache {
    std::vector<double> res1_in, normed1;      // L x d
    std::vector<double> inv_rms1;              // L
    std::vector<double> q, k, v, att;          // L x d
    std::vector<std::vector<double>> probs;    // n_heads of L x L
    std::vector<double> res2_in, normed2;      // L x d
    std::vector<double> inv_rms2;              // L
    std::vector<double> ff_pre, ff_act;        // L x 4d
};

struct ForwardCache {
    int seq_len = 0;
    std::vector<int> input;
    std::vector<double> h0;          // L x d (embeddings)
    std::vector<LayerCache> layers;
    std::vector<double> res_final, normed_final; // L x d
    std::vector<double> inv_rms_final;           // L
};

// Causal logits, one row of V per position. Deterministic; throws
// ContextOverflow when the input exceeds the context window.
std::vector<double> forward_logits(const PolicyParams& p, std::span<const int> input,
                                   ForwardCache* cache = nullptr);

// Accumulates d(loss)/d(params) into grads given d(loss)/d(logits).
void backward(const PolicyParams& p, const ForwardCache& cache,
              const std::vector<double>& dlogits, PolicyParams& grads);

// Autoregressive nucleus sampling. logprobs_old come from the untruncated
// temperature-1 softmax, not the renormalized sampling distribution.
Generation sample(const PolicyParams& p, std::span<const int> prompt, int max_new,
                  double temperature, double top_p, Rng& rng, int eos_id);

// Teacher-forced per-token probabilities of `target` after `context`,
// from a single forward pass over the concatenation.
std::vector<double> teacher_forced_probs(const PolicyParams& p,
                                         std::span<const int> context,
                                         std::span<const int> target);

struct SurrogateSample {
    std::vector<int> context;
    std::vector<int> tokens;
    std::vector<double> old_logps;
    double advantage = 0.0;
};

struct SurrogateBatch {
    std::vector<SurrogateSample> samples;
    double eps_low = 0.2;
    double eps_high = 0.28;
    double beta = 0.0;
    const PolicyParams* ref = nullptr; // required when beta > 0
};

struct LossStats {
    double loss = 0.0;       // negated objective, for descent
    double objective = 0.0;  // clipped surrogate minus beta * mean KL
    double surrogate = 0.0;  // mean clipped-ratio term
    double mean_kl = 0.0;    // mean exact per-token KL(new || ref)
    double mean_ratio = 1.0;
    long total_tokens = 0;
};

// Token-level clipped surrogate with decoupled bounds and exact full-softmax
// KL to the reference; gradients accumulate into grads.
LossStats loss_and_grads(const PolicyParams& p, const SurrogateBatch& batch, PolicyParams& grads);

// log-softmax of one logit row (helper shared with tests)
std::vector<double> log_softmax(std::span<const double> logits);

} // namespace tamtrl::policy
