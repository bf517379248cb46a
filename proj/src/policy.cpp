#include "tamtrl/policy.hpp"

#include "tamtrl/errors.hpp"
#include "tamtrl/kernels.hpp"

#include <algorithm>
#include <cmath>
#include <cstring>
#include <fstream>
#include <json.hpp>
#include <numeric>

namespace tamtrl::policy {

namespace {

constexpr double kRmsEps = 1e-8;
constexpr double kGeluC = 0.7978845608028654; // sqrt(2/pi)

double gelu(double x) {
    const double u = kGeluC * (x + 0.044715 * x * x * x);
    return 0.5 * x * (1.0 + std::tanh(u));
}

double gelu_grad(double x) {
    const double u = kGeluC * (x + 0.044715 * x * x * x);
    const double t = std::tanh(u);
    const double du = kGeluC * (1.0 + 3.0 * 0.044715 * x * x);
    return 0.5 * (1.0 + t) + 0.5 * x * (1.0 - t * t) * du;
}

// y = x / rms(x); returns 1/rms
double rmsnorm_row(const double* x, double* y, int d) {
    double ss = 0.0;
    for (int i = 0; i < d; ++i) ss += x[i] * x[i];
    const double inv = 1.0 / std::sqrt(ss / d + kRmsEps);
    for (int i = 0; i < d; ++i) y[i] = x[i] * inv;
    return inv;
}

// dx += backward of y = x * inv through inv = f(x)
void rmsnorm_backward_row(const double* x, double inv, const double* dy, double* dx, int d) {
    const double dot_dy_x = kernels::dot(dy, x, d);
    const double c = dot_dy_x * inv * inv * inv / d;
    for (int i = 0; i < d; ++i) dx[i] += dy[i] * inv - x[i] * c;
}

void add_bias_rows(double* x, const double* b, int rows, int cols) {
    for (int r = 0; r < rows; ++r) {
        double* row = x + static_cast<std::size_t>(r) * cols;
        for (int c = 0; c < cols; ++c) row[c] += b[c];
    }
}

void colsum_acc(const double* x, double* out, int rows, int cols) {
    for (int r = 0; r < rows; ++r) {
        kernels::axpy(1.0, x + static_cast<std::size_t>(r) * cols, out, static_cast<std::size_t>(cols));
    }
}

} // namespace

std::vector<double> log_softmax(std::span<const double> logits) {
    const std::size_t n = logits.size();
    std::vector<double> out(n);
    double mx = logits[0];
    for (std::size_t i = 1; i < n; ++i) mx = std::max(mx, logits[i]);
    double sum = 0.0;
    for (std::size_t i = 0; i < n; ++i) sum += std::exp(logits[i] - mx);
    const double lse = mx + std::log(sum);
    for (std::size_t i = 0; i < n; ++i) out[i] = logits[i] - lse;
    return out;
}

void ModelConfig::validate() const {
    if (vocab_size < 2) throw ConfigError("model: vocab_size must be >= 2");
    if (d_model < 1 || n_layers < 1 || n_heads < 1) throw ConfigError("model: sizes must be >= 1");
    if (d_model % n_heads != 0) throw ConfigError("model: d_model must be divisible by n_heads");
    if (context_window < 2) throw ConfigError("model: context_window must be >= 2");
}

PolicyParams PolicyParams::init(const ModelConfig& cfg) {
    cfg.validate();
    PolicyParams p;
    p.cfg = cfg;
    Rng rng(derive_seed(cfg.seed, {0x1417u}));
    const int d = cfg.d_model, V = cfg.vocab_size, W = cfg.context_window, ff = cfg.d_ff();
    auto gauss = [&rng](std::vector<double>& t, std::size_t n) {
        t.resize(n);
        for (auto& x : t) x = rng.gaussian(0.0, 0.02);
    };
    auto zeros = [](std::vector<double>& t, std::size_t n) { t.assign(n, 0.0); };
    gauss(p.tok_emb, static_cast<std::size_t>(V) * d);
    gauss(p.pos_emb, static_cast<std::size_t>(W) * d);
    p.layers.resize(static_cast<std::size_t>(cfg.n_layers));
    for (auto& l : p.layers) {
        gauss(l.wq, static_cast<std::size_t>(d) * d);
        gauss(l.wk, static_cast<std::size_t>(d) * d);
        gauss(l.wv, static_cast<std::size_t>(d) * d);
        gauss(l.wo, static_cast<std::size_t>(d) * d);
        zeros(l.bq, static_cast<std::size_t>(d));
        zeros(l.bk, static_cast<std::size_t>(d));
        zeros(l.bv, static_cast<std::size_t>(d));
        zeros(l.bo, static_cast<std::size_t>(d));
        gauss(l.w1, static_cast<std::size_t>(d) * ff);
        zeros(l.b1, static_cast<std::size_t>(ff));
        gauss(l.w2, static_cast<std::size_t>(ff) * d);
        zeros(l.b2, static_cast<std::size_t>(d));
    }
    gauss(p.w_out, static_cast<std::size_t>(d) * V);
    zeros(p.b_out, static_cast<std::size_t>(V));
    return p;
}

PolicyParams PolicyParams::zeros_like(const PolicyParams& src) {
    PolicyParams p = src;
    p.zero();
    return p;
}

void PolicyParams::zero() {
    for_each_tensor([](const std::string&, std::vector<double>& t) {
        std::fill(t.begin(), t.end(), 0.0);
    });
}

PolicyParams PolicyParams::snapshot() const {
    return *this; // value semantics give a deep, independent copy
}

bool PolicyParams::all_finite() const {
    bool ok = true;
    for_each_tensor([&ok](const std::string&, const std::vector<double>& t) {
        for (double x : t) {
            if (!std::isfinite(x)) { ok = false; return; }
        }
    });
    return ok;
}

std::size_t PolicyParams::num_params() const {
    std::size_t n = 0;
    for_each_tensor([&n](const std::string&, const std::vector<double>& t) { n += t.size(); });
    return n;
}

void PolicyParams::for_each_tensor(const std::function<void(const std::string&, std::vector<double>&)>& f) {
    f("tok_emb", tok_emb);
    f("pos_emb", pos_emb);
    for (std::size_t i = 0; i < layers.size(); ++i) {
        const std::string pre = "layer" + std::to_string(i) + ".";
        auto& l = layers[i];
        f(pre + "wq", l.wq); f(pre + "bq", l.bq);
        f(pre + "wk", l.wk); f(pre + "bk", l.bk);
        f(pre + "wv", l.wv); f(pre + "bv", l.bv);
        f(pre + "wo", l.wo); f(pre + "bo", l.bo);
        f(pre + "w1", l.w1); f(pre + "b1", l.b1);
        f(pre + "w2", l.w2); f(pre + "b2", l.b2);
    }
    f("w_out", w_out);
    f("b_out", b_out);
}

void PolicyParams::for_each_tensor(const std::function<void(const std::string&, const std::vector<double>&)>& f) const {
    const_cast<PolicyParams*>(this)->for_each_tensor(
        [&f](const std::string& name, std::vector<double>& t) { f(name, t); });
}

// ----------------------------------------------------------------- forward --

std::vector<double> forward_logits(const PolicyParams& p, std::span<const int> input,
                                   ForwardCache* cache) {
    const int L = static_cast<int>(input.size());
    const int d = p.cfg.d_model, V = p.cfg.vocab_size;
    const int nh = p.cfg.n_heads, dh = p.cfg.d_head(), ff = p.cfg.d_ff();
    if (L < 1) throw ContextOverflow("forward: empty input");
    if (L > p.cfg.context_window) {
        throw ContextOverflow("forward: input length " + std::to_string(L) + " exceeds context window " +
                              std::to_string(p.cfg.context_window));
    }
    const double att_scale = 1.0 / std::sqrt(static_cast<double>(dh));

    ForwardCache local;
    ForwardCache& c = cache ? *cache : local;
    c.seq_len = L;
    c.input.assign(input.begin(), input.end());
    c.layers.assign(static_cast<std::size_t>(p.cfg.n_layers), LayerCache{});

    const std::size_t Ld = static_cast<std::size_t>(L) * d;
    c.h0.resize(Ld);
    for (int t = 0; t < L; ++t) {
        const int tok = input[static_cast<std::size_t>(t)];
        if (tok < 0 || tok >= V) throw InvalidId(tok);
        const double* te = p.tok_emb.data() + static_cast<std::size_t>(tok) * d;
        const double* pe = p.pos_emb.data() + static_cast<std::size_t>(t) * d;
        double* row = c.h0.data() + static_cast<std::size_t>(t) * d;
        for (int i = 0; i < d; ++i) row[i] = te[i] + pe[i];
    }

    std::vector<double> x = c.h0;
    for (int li = 0; li < p.cfg.n_layers; ++li) {
        const LayerParams& lp = p.layers[static_cast<std::size_t>(li)];
        LayerCache& lc = c.layers[static_cast<std::size_t>(li)];

        lc.res1_in = x;
        lc.normed1.resize(Ld);
        lc.inv_rms1.resize(static_cast<std::size_t>(L));
        for (int t = 0; t < L; ++t) {
            lc.inv_rms1[static_cast<std::size_t>(t)] =
                rmsnorm_row(lc.res1_in.data() + static_cast<std::size_t>(t) * d,
                            lc.normed1.data() + static_cast<std::size_t>(t) * d, d);
        }

        lc.q.resize(Ld); lc.k.resize(Ld); lc.v.resize(Ld);
        kernels::matmul(lc.normed1.data(), lp.wq.data(), lc.q.data(), L, d, d);
        kernels::matmul(lc.normed1.data(), lp.wk.data(), lc.k.data(), L, d, d);
        kernels::matmul(lc.normed1.data(), lp.wv.data(), lc.v.data(), L, d, d);
        add_bias_rows(lc.q.data(), lp.bq.data(), L, d);
        add_bias_rows(lc.k.data(), lp.bk.data(), L, d);
        add_bias_rows(lc.v.data(), lp.bv.data(), L, d);

        lc.att.assign(Ld, 0.0);
        lc.probs.assign(static_cast<std::size_t>(nh), {});
        for (int h = 0; h < nh; ++h) {
            auto& probs = lc.probs[static_cast<std::size_t>(h)];
            probs.assign(static_cast<std::size_t>(L) * L, 0.0);
            const int off = h * dh;
            for (int i = 0; i < L; ++i) {
                const double* qi = lc.q.data() + static_cast<std::size_t>(i) * d + off;
                double* prow = probs.data() + static_cast<std::size_t>(i) * L;
                for (int j = 0; j <= i; ++j) {
                    prow[j] = att_scale * kernels::dot(qi, lc.k.data() + static_cast<std::size_t>(j) * d + off,
                                                       static_cast<std::size_t>(dh));
                }
                kernels::softmax_row(prow, static_cast<std::size_t>(i) + 1); // causal prefix only
                double* out = lc.att.data() + static_cast<std::size_t>(i) * d + off;
                for (int j = 0; j <= i; ++j) {
                    kernels::axpy(prow[j], lc.v.data() + static_cast<std::size_t>(j) * d + off, out,
                                  static_cast<std::size_t>(dh));
                }
            }
        }

        // x += att * wo + bo
        std::vector<double> proj(Ld, 0.0);
        kernels::matmul_acc(lc.att.data(), lp.wo.data(), proj.data(), L, d, d);
        add_bias_rows(proj.data(), lp.bo.data(), L, d);
        for (std::size_t i = 0; i < Ld; ++i) x[i] += proj[i];

        lc.res2_in = x;
        lc.normed2.resize(Ld);
        lc.inv_rms2.resize(static_cast<std::size_t>(L));
        for (int t = 0; t < L; ++t) {
            lc.inv_rms2[static_cast<std::size_t>(t)] =
                rmsnorm_row(lc.res2_in.data() + static_cast<std::size_t>(t) * d,
                            lc.normed2.data() + static_cast<std::size_t>(t) * d, d);
        }

        const std::size_t Lff = static_cast<std::size_t>(L) * ff;
        lc.ff_pre.resize(Lff);
        lc.ff_act.resize(Lff);
        kernels::matmul(lc.normed2.data(), lp.w1.data(), lc.ff_pre.data(), L, d, ff);
        add_bias_rows(lc.ff_pre.data(), lp.b1.data(), L, ff);
        for (std::size_t i = 0; i < Lff; ++i) lc.ff_act[i] = gelu(lc.ff_pre[i]);
        std::vector<double> ff_out(Ld, 0.0);
        kernels::matmul_acc(lc.ff_act.data(), lp.w2.data(), ff_out.data(), L, ff, d);
        add_bias_rows(ff_out.data(), lp.b2.data(), L, d);
        for (std::size_t i = 0; i < Ld; ++i) x[i] += ff_out[i];
    }

    c.res_final = x;
    c.normed_final.resize(Ld);
    c.inv_rms_final.resize(static_cast<std::size_t>(L));
    for (int t = 0; t < L; ++t) {
        c.inv_rms_final[static_cast<std::size_t>(t)] =
            rmsnorm_row(c.res_final.data() + static_cast<std::size_t>(t) * d,
                        c.normed_final.data() + static_cast<std::size_t>(t) * d, d);
    }

    std::vector<double> logits(static_cast<std::size_t>(L) * V, 0.0);
    kernels::matmul_acc(c.normed_final.data(), p.w_out.data(), logits.data(), L, d, V);
    add_bias_rows(logits.data(), p.b_out.data(), L, V);
    return logits;
}

// ---------------------------------------------------------------- backward --

void backward(const PolicyParams& p, const ForwardCache& c,
              const std::vector<double>& dlogits, PolicyParams& grads) {
    const int L = c.seq_len;
    const int d = p.cfg.d_model, V = p.cfg.vocab_size;
    const int nh = p.cfg.n_heads, dh = p.cfg.d_head(), ff = p.cfg.d_ff();
    const double att_scale = 1.0 / std::sqrt(static_cast<double>(dh));
    const std::size_t Ld = static_cast<std::size_t>(L) * d;

    // output head
    std::vector<double> d_normed_final(Ld, 0.0);
    kernels::matmul_a_bt_acc(dlogits.data(), p.w_out.data(), d_normed_final.data(), L, V, d);
    kernels::matmul_at_b_acc(c.normed_final.data(), dlogits.data(), grads.w_out.data(), L, d, V);
    colsum_acc(dlogits.data(), grads.b_out.data(), L, V);

    std::vector<double> dx(Ld, 0.0);
    for (int t = 0; t < L; ++t) {
        rmsnorm_backward_row(c.res_final.data() + static_cast<std::size_t>(t) * d,
                             c.inv_rms_final[static_cast<std::size_t>(t)],
                             d_normed_final.data() + static_cast<std::size_t>(t) * d,
                             dx.data() + static_cast<std::size_t>(t) * d, d);
    }

    for (int li = p.cfg.n_layers - 1; li >= 0; --li) {
        const LayerParams& lp = p.layers[static_cast<std::size_t>(li)];
        const LayerCache& lc = c.layers[static_cast<std::size_t>(li)];
        LayerParams& gl = grads.layers[static_cast<std::size_t>(li)];
        const std::size_t Lff = static_cast<std::size_t>(L) * ff;

        // mlp branch: dx covers d(res2_in + ff_out)
        std::vector<double> d_ff_act(Lff, 0.0);
        kernels::matmul_at_b_acc(lc.ff_act.data(), dx.data(), gl.w2.data(), L, ff, d);
        colsum_acc(dx.data(), gl.b2.data(), L, d);
        kernels::matmul_a_bt_acc(dx.data(), lp.w2.data(), d_ff_act.data(), L, d, ff);
        std::vector<double> d_ff_pre(Lff);
        for (std::size_t i = 0; i < Lff; ++i) d_ff_pre[i] = d_ff_act[i] * gelu_grad(lc.ff_pre[i]);

        std::vector<double> d_normed2(Ld, 0.0);
        kernels::matmul_at_b_acc(lc.normed2.data(), d_ff_pre.data(), gl.w1.data(), L, d, ff);
        colsum_acc(d_ff_pre.data(), gl.b1.data(), L, ff);
        kernels::matmul_a_bt_acc(d_ff_pre.data(), lp.w1.data(), d_normed2.data(), L, ff, d);
        for (int t = 0; t < L; ++t) {
            rmsnorm_backward_row(lc.res2_in.data() + static_cast<std::size_t>(t) * d,
                                 lc.inv_rms2[static_cast<std::size_t>(t)],
                                 d_normed2.data() + static_cast<std::size_t>(t) * d,
                                 dx.data() + static_cast<std::size_t>(t) * d, d);
        }

        // attention branch: dx now covers d(res1_in + attn_proj)
        std::vector<double> d_att(Ld, 0.0);
        kernels::matmul_at_b_acc(lc.att.data(), dx.data(), gl.wo.data(), L, d, d);
        colsum_acc(dx.data(), gl.bo.data(), L, d);
        kernels::matmul_a_bt_acc(dx.data(), lp.wo.data(), d_att.data(), L, d, d);

        std::vector<double> dq(Ld, 0.0), dk(Ld, 0.0), dv(Ld, 0.0);
        std::vector<double> d_prow(static_cast<std::size_t>(L));
        for (int h = 0; h < nh; ++h) {
            const auto& probs = lc.probs[static_cast<std::size_t>(h)];
            const int off = h * dh;
            for (int i = 0; i < L; ++i) {
                const double* prow = probs.data() + static_cast<std::size_t>(i) * L;
                const double* d_att_i = d_att.data() + static_cast<std::size_t>(i) * d + off;
                // d probs and d v
                double dot_p_dp = 0.0;
                for (int j = 0; j <= i; ++j) {
                    d_prow[static_cast<std::size_t>(j)] =
                        kernels::dot(d_att_i, lc.v.data() + static_cast<std::size_t>(j) * d + off,
                                     static_cast<std::size_t>(dh));
                    kernels::axpy(prow[j], d_att_i, dv.data() + static_cast<std::size_t>(j) * d + off,
                                  static_cast<std::size_t>(dh));
                    dot_p_dp += prow[j] * d_prow[static_cast<std::size_t>(j)];
                }
                // softmax backward and score gradients
                double* dq_i = dq.data() + static_cast<std::size_t>(i) * d + off;
                const double* q_i = lc.q.data() + static_cast<std::size_t>(i) * d + off;
                for (int j = 0; j <= i; ++j) {
                    const double ds = prow[j] * (d_prow[static_cast<std::size_t>(j)] - dot_p_dp) * att_scale;
                    if (ds == 0.0) continue;
                    kernels::axpy(ds, lc.k.data() + static_cast<std::size_t>(j) * d + off, dq_i,
                                  static_cast<std::size_t>(dh));
                    kernels::axpy(ds, q_i, dk.data() + static_cast<std::size_t>(j) * d + off,
                                  static_cast<std::size_t>(dh));
                }
            }
        }

        std::vector<double> d_normed1(Ld, 0.0);
        kernels::matmul_at_b_acc(lc.normed1.data(), dq.data(), gl.wq.data(), L, d, d);
        kernels::matmul_at_b_acc(lc.normed1.data(), dk.data(), gl.wk.data(), L, d, d);
        kernels::matmul_at_b_acc(lc.normed1.data(), dv.data(), gl.wv.data(), L, d, d);
        colsum_acc(dq.data(), gl.bq.data(), L, d);
        colsum_acc(dk.data(), gl.bk.data(), L, d);
        colsum_acc(dv.data(), gl.bv.data(), L, d);
        kernels::matmul_a_bt_acc(dq.data(), lp.wq.data(), d_normed1.data(), L, d, d);
        kernels::matmul_a_bt_acc(dk.data(), lp.wk.data(), d_normed1.data(), L, d, d);
        kernels::matmul_a_bt_acc(dv.data(), lp.wv.data(), d_normed1.data(), L, d, d);
        for (int t = 0; t < L; ++t) {
            rmsnorm_backward_row(lc.res1_in.data() + static_cast<std::size_t>(t) * d,
                                 lc.inv_rms1[static_cast<std::size_t>(t)],
                                 d_normed1.data() + static_cast<std::size_t>(t) * d,
                                 dx.data() + static_cast<std::size_t>(t) * d, d);
        }
    }

    // embeddings
    for (int t = 0; t < L; ++t) {
        const int tok = c.input[static_cast<std::size_t>(t)];
        kernels::axpy(1.0, dx.data() + static_cast<std::size_t>(t) * d,
                      grads.tok_emb.data() + static_cast<std::size_t>(tok) * d, static_cast<std::size_t>(d));
        kernels::axpy(1.0, dx.data() + static_cast<std::size_t>(t) * d,
                      grads.pos_emb.data() + static_cast<std::size_t>(t) * d, static_cast<std::size_t>(d));
    }
}

// ---------------------------------------------------------------- sampling --

Generation sample(const PolicyParams& p, std::span<const int> prompt, int max_new,
                  double temperature, double top_p, Rng& rng, int eos_id) {
    if (temperature <= 0.0) throw ConfigError("sample: temperature must be > 0");
    if (top_p <= 0.0 || top_p > 1.0) throw ConfigError("sample: top_p must be in (0, 1]");
    if (static_cast<int>(prompt.size()) > p.cfg.context_window) {
        throw ContextOverflow("sample: prompt exceeds context window");
    }
    Generation gen;
    if (max_new <= 0) {
        gen.truncated = true;
        return gen;
    }

    const int V = p.cfg.vocab_size;
    std::vector<int> seq(prompt.begin(), prompt.end());
    std::vector<int> order(static_cast<std::size_t>(V));

    for (int step = 0; step < max_new; ++step) {
        if (static_cast<int>(seq.size()) >= p.cfg.context_window) {
            gen.truncated = true;
            return gen;
        }
        const auto logits = forward_logits(p, seq);
        const double* last = logits.data() + (seq.size() - 1) * static_cast<std::size_t>(V);

        const auto full_logp = log_softmax(std::span<const double>(last, static_cast<std::size_t>(V)));

        // sampling distribution: temperature softmax then nucleus truncation
        std::vector<double> sp(static_cast<std::size_t>(V));
        for (int i = 0; i < V; ++i) sp[static_cast<std::size_t>(i)] = last[i] / temperature;
        kernels::softmax_row(sp.data(), static_cast<std::size_t>(V));

        std::iota(order.begin(), order.end(), 0);
        std::sort(order.begin(), order.end(),
                  [&sp](int a, int b) { return sp[static_cast<std::size_t>(a)] > sp[static_cast<std::size_t>(b)]; });
        double cum = 0.0;
        std::size_t keep = 0;
        while (keep < order.size()) {
            cum += sp[static_cast<std::size_t>(order[keep])];
            ++keep;
            if (cum >= top_p) break;
        }

        const double u = rng.uniform() * cum;
        double acc = 0.0;
        int tok = order[keep - 1];
        for (std::size_t i = 0; i < keep; ++i) {
            acc += sp[static_cast<std::size_t>(order[i])];
            if (u < acc) { tok = order[i]; break; }
        }

        gen.tokens.push_back(tok);
        gen.logprobs_old.push_back(full_logp[static_cast<std::size_t>(tok)]);
        seq.push_back(tok);
        if (tok == eos_id) return gen;
    }
    gen.truncated = true;
    return gen;
}

std::vector<double> teacher_forced_probs(const PolicyParams& p,
                                         std::span<const int> context,
                                         std::span<const int> target) {
    if (context.empty()) throw ContextOverflow("teacher_forced_probs: empty context");
    const std::size_t total = context.size() + target.size();
    if (static_cast<int>(total) > p.cfg.context_window) {
        throw ContextOverflow("teacher_forced_probs: context + target exceeds context window");
    }
    std::vector<int> seq(context.begin(), context.end());
    seq.insert(seq.end(), target.begin(), target.end());
    const auto logits = forward_logits(p, seq);
    const int V = p.cfg.vocab_size;

    std::vector<double> probs(target.size());
    for (std::size_t i = 0; i < target.size(); ++i) {
        const std::size_t row = context.size() + i - 1;
        const auto lp = log_softmax(std::span<const double>(
            logits.data() + row * static_cast<std::size_t>(V), static_cast<std::size_t>(V)));
        probs[i] = std::exp(lp[static_cast<std::size_t>(target[i])]);
    }
    return probs;
}

// -------------------------------------------------------- surrogate + grads --

LossStats loss_and_grads(const PolicyParams& p, const SurrogateBatch& batch, PolicyParams& grads) {
    LossStats stats;
    for (const auto& s : batch.samples) stats.total_tokens += static_cast<long>(s.tokens.size());
    if (stats.total_tokens == 0) return stats;
    if (batch.beta > 0.0 && batch.ref == nullptr) {
        throw ConfigError("loss_and_grads: beta > 0 requires a reference policy");
    }

    const int V = p.cfg.vocab_size;
    const double inv_total = 1.0 / static_cast<double>(stats.total_tokens);
    double surrogate_sum = 0.0, kl_sum = 0.0, ratio_sum = 0.0;

    for (std::size_t si = 0; si < batch.samples.size(); ++si) {
        const auto& s = batch.samples[si];
        if (s.tokens.empty()) continue;
        if (s.tokens.size() != s.old_logps.size()) {
            throw NumericError("loss_and_grads: tokens/old_logps length mismatch in sample " + std::to_string(si));
        }
        if (s.context.empty()) {
            throw NumericError("loss_and_grads: empty context in sample " + std::to_string(si));
        }
        std::vector<int> seq = s.context;
        seq.insert(seq.end(), s.tokens.begin(), s.tokens.end());

        ForwardCache cache;
        const auto logits = forward_logits(p, seq, &cache);
        std::vector<double> ref_logits;
        if (batch.beta > 0.0) ref_logits = forward_logits(*batch.ref, seq);

        std::vector<double> dlogits(logits.size(), 0.0);
        const std::size_t ctx = s.context.size();

        for (std::size_t i = 0; i < s.tokens.size(); ++i) {
            const std::size_t row = ctx + i - 1;
            const int tok = s.tokens[i];
            const double* lrow = logits.data() + row * static_cast<std::size_t>(V);
            const auto lp = log_softmax(std::span<const double>(lrow, static_cast<std::size_t>(V)));

            const double ratio = std::exp(lp[static_cast<std::size_t>(tok)] - s.old_logps[i]);
            if (!std::isfinite(ratio)) {
                throw NumericError("loss_and_grads: non-finite ratio at sample " + std::to_string(si) +
                                   " position " + std::to_string(i));
            }
            ratio_sum += ratio;
            const double clipped = std::clamp(ratio, 1.0 - batch.eps_low, 1.0 + batch.eps_high);
            const double a = s.advantage;
            const double unclipped_term = ratio * a;
            const double clipped_term = clipped * a;
            surrogate_sum += std::min(unclipped_term, clipped_term);
            const bool unclipped_active = unclipped_term <= clipped_term;

            double* drow = dlogits.data() + row * static_cast<std::size_t>(V);

            // d objective / d logits (objective is maximized; loss negates)
            if (unclipped_active && a != 0.0) {
                const double coef = ratio * a * inv_total;
                for (int k = 0; k < V; ++k) drow[k] -= coef * std::exp(lp[static_cast<std::size_t>(k)]);
                drow[tok] += coef;
            }

            if (batch.beta > 0.0) {
                const double* rrow = ref_logits.data() + row * static_cast<std::size_t>(V);
                const auto lq = log_softmax(std::span<const double>(rrow, static_cast<std::size_t>(V)));
                double kl = 0.0;
                for (int k = 0; k < V; ++k) {
                    kl += std::exp(lp[static_cast<std::size_t>(k)]) *
                          (lp[static_cast<std::size_t>(k)] - lq[static_cast<std::size_t>(k)]);
                }
                kl_sum += kl;
                const double coef = batch.beta * inv_total;
                for (int k = 0; k < V; ++k) {
                    const double pk = std::exp(lp[static_cast<std::size_t>(k)]);
                    drow[k] -= coef * pk * (lp[static_cast<std::size_t>(k)] - lq[static_cast<std::size_t>(k)] - kl);
                }
            }
        }

        // dlogits currently holds d objective; negate for descent direction
        for (auto& g : dlogits) g = -g;
        backward(p, cache, dlogits, grads);
    }

    stats.surrogate = surrogate_sum * inv_total;
    stats.mean_kl = kl_sum * inv_total;
    stats.mean_ratio = ratio_sum * inv_total;
    stats.objective = stats.surrogate - batch.beta * stats.mean_kl;
    stats.loss = -stats.objective;
    if (!std::isfinite(stats.loss)) {
        throw NumericError("loss_and_grads: non-finite loss");
    }
    return stats;
}

// -------------------------------------------------------------- checkpoints --

void PolicyParams::save(const std::string& path) const {
    nlohmann::json header;
    header["format_version"] = 1;
    header["config"] = {{"vocab_size", cfg.vocab_size}, {"d_model", cfg.d_model},
                        {"n_layers", cfg.n_layers},     {"n_heads", cfg.n_heads},
                        {"context_window", cfg.context_window}, {"seed", cfg.seed}};
    header["version"] = version;
    auto names = nlohmann::json::array();
    auto sizes = nlohmann::json::array();
    for_each_tensor([&](const std::string& name, const std::vector<double>& t) {
        names.push_back(name);
        sizes.push_back(t.size());
    });
    header["tensors"] = names;
    header["sizes"] = sizes;

    std::ofstream f(path, std::ios::binary);
    if (!f) throw IoError("cannot open for write: " + path);
    f << header.dump() << "\n";
    for_each_tensor([&f](const std::string&, const std::vector<double>& t) {
        f.write(reinterpret_cast<const char*>(t.data()),
                static_cast<std::streamsize>(t.size() * sizeof(double)));
    });
    if (!f) throw IoError("write failed: " + path);
}

PolicyParams PolicyParams::load(const std::string& path) {
    std::ifstream f(path, std::ios::binary);
    if (!f) throw IoError("cannot open: " + path);
    std::string header_line;
    if (!std::getline(f, header_line)) throw IoError("checkpoint header missing: " + path);
    nlohmann::json header = nlohmann::json::parse(header_line);
    if (header.at("format_version").get<int>() != 1) throw IoError("unsupported checkpoint format");

    ModelConfig cfg;
    const auto& jc = header.at("config");
    cfg.vocab_size = jc.at("vocab_size").get<int>();
    cfg.d_model = jc.at("d_model").get<int>();
    cfg.n_layers = jc.at("n_layers").get<int>();
    cfg.n_heads = jc.at("n_heads").get<int>();
    cfg.context_window = jc.at("context_window").get<int>();
    cfg.seed = jc.at("seed").get<std::uint64_t>();

    PolicyParams p = PolicyParams::init(cfg);
    p.version = header.at("version").get<std::int64_t>();
    p.for_each_tensor([&f, &path](const std::string& name, std::vector<double>& t) {
        f.read(reinterpret_cast<char*>(t.data()), static_cast<std::streamsize>(t.size() * sizeof(double)));
        if (!f) throw IoError("checkpoint truncated at tensor " + name + ": " + path);
    });
    return p;
}

} // namespace tamtrl::policy
