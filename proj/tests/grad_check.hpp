#pragma once

#include <algorithm>
#include <cmath>
#include <functional>
#include <random>
#include <vector>

#include "mae/tensor.hpp"

namespace testutil {

// Central finite differences against the analytic backward pass.
// `loss_fn` must rebuild the graph from the given leaves on every call.
inline double max_grad_rel_err(const std::function<mae::Tensor()>& loss_fn,
                               std::vector<mae::Tensor> leaves, double h = 1e-5) {
    mae::Tensor loss = loss_fn();
    for (auto& leaf : leaves) leaf.zero_grad();
    mae::backward(loss);

    std::vector<std::vector<double>> analytic;
    for (auto& leaf : leaves) analytic.push_back(leaf.grad());

    double worst = 0.0;
    for (std::size_t li = 0; li < leaves.size(); ++li) {
        auto& vals = leaves[li].values();
        for (std::size_t i = 0; i < vals.size(); ++i) {
            double saved = vals[i];
            vals[i] = saved + h;
            double up = loss_fn().item();
            vals[i] = saved - h;
            double dn = loss_fn().item();
            vals[i] = saved;
            double numeric = (up - dn) / (2.0 * h);
            double a = analytic[li][i];
            double rel = std::abs(a - numeric) / std::max({std::abs(a), std::abs(numeric), 1e-6});
            worst = std::max(worst, rel);
        }
    }
    return worst;
}

inline std::vector<double> random_values(std::mt19937_64& rng, std::size_t n,
                                         double lo = -1.0, double hi = 1.0,
                                         double kink_gap = 0.0) {
    std::uniform_real_distribution<double> dist(lo, hi);
    std::vector<double> v(n);
    for (auto& x : v) {
        do {
            x = dist(rng);
        } while (kink_gap > 0.0 && std::abs(x) < kink_gap);
    }
    return v;
}

}  // namespace testutil
