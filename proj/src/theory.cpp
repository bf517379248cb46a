#include "tamtrl/theory.hpp"

#include "tamtrl/errors.hpp"

#include <cmath>

namespace tamtrl::theory {

void check_distribution(const DiscreteDistribution& p) {
    double sum = 0.0;
    for (double x : p) {
        if (x < 0.0) throw SupportError("distribution entry < 0");
        sum += x;
    }
    if (std::abs(sum - 1.0) > 1e-12) throw SupportError("distribution does not sum to 1");
}

double kl(const DiscreteDistribution& p, const DiscreteDistribution& q) {
    if (p.size() != q.size()) throw SupportError("kl: size mismatch");
    double s = 0.0;
    for (std::size_t i = 0; i < p.size(); ++i) {
        if (p[i] == 0.0) continue;
        if (q[i] <= 0.0) throw SupportError("kl: q = 0 on the support of p");
        s += p[i] * std::log(p[i] / q[i]);
    }
    return s;
}

DiscreteDistribution DiscreteJoint::marginal_m() const {
    DiscreteDistribution out(static_cast<std::size_t>(K));
    for (int m = 0; m < K; ++m) out[static_cast<std::size_t>(m)] = prob(m, 0) + prob(m, 1);
    return out;
}

DiscreteDistribution DiscreteJoint::marginal_r() const {
    DiscreteDistribution out(2, 0.0);
    for (int m = 0; m < K; ++m) {
        out[0] += prob(m, 0);
        out[1] += prob(m, 1);
    }
    return out;
}

double entropy(const DiscreteDistribution& p) {
    double h = 0.0;
    for (double x : p) {
        if (x > 0.0) h -= x * std::log(x);
    }
    return h;
}

double mutual_information(const DiscreteJoint& joint) {
    const auto pm = joint.marginal_m();
    const auto pr = joint.marginal_r();
    // H(M) - H(M | r) = H(M) - sum_r P(r) H(M | r = r)
    double h_cond = 0.0;
    for (int r = 0; r < 2; ++r) {
        if (pr[static_cast<std::size_t>(r)] == 0.0) continue;
        DiscreteDistribution cond(static_cast<std::size_t>(joint.K));
        for (int m = 0; m < joint.K; ++m) {
            cond[static_cast<std::size_t>(m)] = joint.prob(m, r) / pr[static_cast<std::size_t>(r)];
        }
        h_cond += pr[static_cast<std::size_t>(r)] * entropy(cond);
    }
    return entropy(pm) - h_cond;
}

double mutual_information_sym(const DiscreteJoint& joint) {
    const auto pm = joint.marginal_m();
    const auto pr = joint.marginal_r();
    double h_cond = 0.0;
    for (int m = 0; m < joint.K; ++m) {
        if (pm[static_cast<std::size_t>(m)] == 0.0) continue;
        DiscreteDistribution cond = {joint.prob(m, 0) / pm[static_cast<std::size_t>(m)],
                                     joint.prob(m, 1) / pm[static_cast<std::size_t>(m)]};
        h_cond += pm[static_cast<std::size_t>(m)] * entropy(cond);
    }
    return entropy(pr) - h_cond;
}

void TheoremInstance::validate() const {
    if (K < 2) throw SupportError("instance: K must be >= 2");
    if (static_cast<int>(pi_theta.size()) != K || static_cast<int>(pi_ref.size()) != K ||
        static_cast<int>(pi_teacher.size()) != K || static_cast<int>(success_prob.size()) != K) {
        throw SupportError("instance: size mismatch");
    }
    check_distribution(pi_theta);
    check_distribution(pi_ref);
    check_distribution(pi_teacher);
    if (beta < 0.0) throw SupportError("instance: beta must be >= 0");
    for (int m = 0; m < K; ++m) {
        const auto i = static_cast<std::size_t>(m);
        if (success_prob[i] < 0.0 || success_prob[i] > 1.0) {
            throw SupportError("instance: success_prob outside [0, 1]");
        }
        if (pi_theta[i] > 0.0 && (pi_ref[i] <= 0.0 || pi_teacher[i] <= 0.0)) {
            throw SupportError("instance: pi_ref and pi_teacher must cover the support of pi_theta");
        }
    }
}

DiscreteJoint TheoremInstance::joint() const {
    DiscreteJoint j;
    j.K = K;
    j.p.resize(static_cast<std::size_t>(K) * 2);
    for (int m = 0; m < K; ++m) {
        const auto i = static_cast<std::size_t>(m);
        j.p[i * 2 + 1] = pi_theta[i] * success_prob[i];
        j.p[i * 2 + 0] = pi_theta[i] * (1.0 - success_prob[i]);
    }
    return j;
}

double objective_lhs(const TheoremInstance& inst) {
    inst.validate();
    double reward_term = 0.0;
    for (int m = 0; m < inst.K; ++m) {
        const auto i = static_cast<std::size_t>(m);
        if (inst.pi_theta[i] == 0.0 || inst.success_prob[i] == 0.0) continue;
        reward_term += inst.pi_theta[i] * inst.success_prob[i] * std::log(inst.pi_teacher[i]);
    }
    return reward_term - inst.beta * kl(inst.pi_theta, inst.pi_ref);
}

double objective_rhs(const TheoremInstance& inst) {
    inst.validate();
    const auto j = inst.joint();
    const auto pr = j.marginal_r();
    const double p_fail = pr[0], p_succ = pr[1];

    // exact Bayes conditionals of the memory given the outcome
    auto conditional = [&j](int r) {
        DiscreteDistribution cond(static_cast<std::size_t>(j.K), 0.0);
        const auto pr_ = j.marginal_r();
        if (pr_[static_cast<std::size_t>(r)] == 0.0) return cond; // weighted by zero below
        for (int m = 0; m < j.K; ++m) {
            cond[static_cast<std::size_t>(m)] = j.prob(m, r) / pr_[static_cast<std::size_t>(r)];
        }
        return cond;
    };

    double succ_term = 0.0;
    if (p_succ > 0.0) {
        const auto cond1 = conditional(1);
        double e_log_teacher = 0.0;
        for (int m = 0; m < inst.K; ++m) {
            const auto i = static_cast<std::size_t>(m);
            if (cond1[i] > 0.0) e_log_teacher += cond1[i] * std::log(inst.pi_teacher[i]);
        }
        succ_term = p_succ * (e_log_teacher - inst.beta * kl(cond1, inst.pi_ref));
    }
    double fail_term = 0.0;
    if (p_fail > 0.0) {
        fail_term = p_fail * (-inst.beta * kl(conditional(0), inst.pi_ref));
    }
    return succ_term + fail_term + inst.beta * mutual_information(j);
}

double kl_chain_residual(const TheoremInstance& inst) {
    inst.validate();
    const auto j = inst.joint();
    const auto pr = j.marginal_r();
    double weighted = 0.0;
    for (int r = 0; r < 2; ++r) {
        if (pr[static_cast<std::size_t>(r)] == 0.0) continue;
        DiscreteDistribution cond(static_cast<std::size_t>(inst.K));
        for (int m = 0; m < inst.K; ++m) {
            cond[static_cast<std::size_t>(m)] = j.prob(m, r) / pr[static_cast<std::size_t>(r)];
        }
        weighted += pr[static_cast<std::size_t>(r)] * kl(cond, inst.pi_ref);
    }
    return kl(inst.pi_theta, inst.pi_ref) - (weighted - mutual_information(j));
}

TheoremInstance random_instance(Rng& rng, int K, double beta_max) {
    auto random_dist = [&rng, K]() {
        DiscreteDistribution d(static_cast<std::size_t>(K));
        double sum = 0.0;
        for (auto& x : d) {
            x = 0.05 + rng.uniform(); // bounded away from zero: supports overlap
            sum += x;
        }
        for (auto& x : d) x /= sum;
        return d;
    };
    TheoremInstance inst;
    inst.K = K;
    inst.pi_theta = random_dist();
    inst.pi_ref = random_dist();
    inst.pi_teacher = random_dist();
    inst.success_prob.resize(static_cast<std::size_t>(K));
    for (auto& s : inst.success_prob) s = rng.uniform();
    inst.beta = rng.uniform() * beta_max;
    return inst;
}

} // namespace tamtrl::theory
