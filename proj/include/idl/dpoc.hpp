#pragma once

#include <cmath>
#include <tuple>
#include <vector>

#include "idl/errors.hpp"

namespace idl {

// Policy-vs-reference log-probability differences for the chosen, criterion
// and rejected responses of one preference sample.
struct DeltaTriple {
    double d_cho = 0.0;
    double d_crt = 0.0;
    double d_rej = 0.0;
};

struct DpocHyper {
    double beta = 0.1;       // preference temperature
    double lambda_pen = 2.0; // penalty coefficient

    void validate() const {
        if (!(beta > 0.0)) throw ValidationError("beta must be > 0");
        if (lambda_pen < 0.0) throw ValidationError("lambda_pen must be >= 0");
    }
};

inline double sigmoid(double x) {
    if (x >= 0.0) {
        return 1.0 / (1.0 + std::exp(-x));
    }
    double e = std::exp(x);
    return e / (1.0 + e);
}

// -log sigmoid(x) in a form stable for large |x|.
inline double softplus(double x) {
    return std::log1p(std::exp(-std::abs(x))) + std::max(x, 0.0);
}

// Hinge on a reward ordering: zero when r_hi >= r_lo, else the violation.
inline double penalty(double r_hi, double r_lo) {
    return std::max(0.0, r_lo - r_hi);
}

// Preference loss plus the two criterion-anchored hinges. The criterion
// reward is pushed to sit between chosen and rejected.
inline double dpoc_loss(const DeltaTriple& dt, const DpocHyper& h) {
    double dpo = softplus(-h.beta * (dt.d_cho - dt.d_rej));
    return dpo + penalty(h.lambda_pen * dt.d_cho, h.lambda_pen * dt.d_crt) +
           penalty(h.lambda_pen * dt.d_crt, h.lambda_pen * dt.d_rej);
}

struct DpocGrad {
    double g_cho = 0.0;
    double g_crt = 0.0;
    double g_rej = 0.0;
};

// Analytic gradient of dpoc_loss w.r.t. the three deltas. At hinge kinks
// (exact equality) the subgradient with indicator 0 is used.
inline DpocGrad dpoc_grad(const DeltaTriple& dt, const DpocHyper& h) {
    double s = sigmoid(-h.beta * (dt.d_cho - dt.d_rej));
    double i1 = dt.d_crt > dt.d_cho ? 1.0 : 0.0;
    double i2 = dt.d_rej > dt.d_crt ? 1.0 : 0.0;
    DpocGrad g;
    g.g_cho = -h.beta * s - h.lambda_pen * i1;
    g.g_crt = h.lambda_pen * i1 - h.lambda_pen * i2;
    g.g_rej = h.beta * s + h.lambda_pen * i2;
    return g;
}

namespace detail {

// Pairwise summation keeps reductions deterministic and bounds float drift.
inline double pairwise_sum(const std::vector<double>& xs, std::size_t lo, std::size_t hi) {
    if (hi - lo <= 4) {
        double s = 0.0;
        for (std::size_t i = lo; i < hi; ++i) s += xs[i];
        return s;
    }
    std::size_t mid = lo + (hi - lo) / 2;
    return pairwise_sum(xs, lo, mid) + pairwise_sum(xs, mid, hi);
}

}  // namespace detail

inline double pairwise_mean(const std::vector<double>& xs) {
    if (xs.empty()) throw EmptyBatch("mean of empty vector");
    return detail::pairwise_sum(xs, 0, xs.size()) / static_cast<double>(xs.size());
}

struct BatchStats {
    double mean_loss = 0.0;
    double reward_accuracy = 0.0;  // fraction with d_cho > d_rej
    double pivot_rate = 0.0;       // fraction with d_cho >= d_crt >= d_rej
};

inline BatchStats batch_stats(const std::vector<DeltaTriple>& batch, const DpocHyper& h) {
    if (batch.empty()) throw EmptyBatch("batch_stats needs a non-empty batch");
    std::vector<double> losses;
    losses.reserve(batch.size());
    std::size_t acc = 0, pivot = 0;
    for (const auto& dt : batch) {
        losses.push_back(dpoc_loss(dt, h));
        if (dt.d_cho > dt.d_rej) ++acc;
        if (dt.d_cho >= dt.d_crt && dt.d_crt >= dt.d_rej) ++pivot;
    }
    BatchStats s;
    s.mean_loss = pairwise_mean(losses);
    s.reward_accuracy = static_cast<double>(acc) / static_cast<double>(batch.size());
    s.pivot_rate = static_cast<double>(pivot) / static_cast<double>(batch.size());
    return s;
}

}  // namespace idl
