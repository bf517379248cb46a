#pragma once

#include "tamtrl/rng.hpp"

#include <vector>

namespace tamtrl::theory {

// probabilities over K outcomes; entries >= 0, sum 1 within 1e-12
using DiscreteDistribution = std::vector<double>;

void check_distribution(const DiscreteDistribution& p);

// Natural-log KL divergence; SupportError when q = 0 somewhere p > 0.
double kl(const DiscreteDistribution& p, const DiscreteDistribution& q);

// Joint distribution over (memory outcome m, binary reward r):
// p[m * 2 + r]. Entropies and mutual information by enumeration.
struct DiscreteJoint {
    int K = 0;
    std::vector<double> p; // K x 2, row-major

    double prob(int m, int r) const { return p[static_cast<std::size_t>(m) * 2 + r]; }
    DiscreteDistribution marginal_m() const;
    DiscreteDistribution marginal_r() const; // size 2
};

double entropy(const DiscreteDistribution& p);
// I(M; r) = H(M) - H(M | r)
double mutual_information(const DiscreteJoint& joint);
// symmetric route, H(r) - H(r | M); used as an independent check
double mutual_information_sym(const DiscreteJoint& joint);

// One enumerable validation instance: distributions over K candidate
// memories and a per-memory success probability map.
struct TheoremInstance {
    int K = 0;
    DiscreteDistribution pi_theta, pi_ref, pi_teacher;
    std::vector<double> success_prob; // P(r=1 | m), entries in [0,1]
    double beta = 0.0;

    void validate() const;
    DiscreteJoint joint() const; // over (m, r) under pi_theta
};

// E_{m ~ pi_theta}[ log pi_teacher(m) * P(r=1|m) ] - beta * KL(pi_theta || pi_ref)
double objective_lhs(const TheoremInstance& inst);

// success/failure-conditional decomposition plus beta * I(M; r); equals the
// direct objective exactly (degenerate P(r=1) in {0,1} weighted by zero).
double objective_rhs(const TheoremInstance& inst);

// residual of KL(pi_theta || pi_ref) = sum_r P(r) KL(pi_theta(.|r) || pi_ref) - I(M; r)
double kl_chain_residual(const TheoremInstance& inst);

TheoremInstance random_instance(Rng& rng, int K, double beta_max = 2.0);

} // namespace tamtrl::theory
