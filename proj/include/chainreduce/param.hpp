#pragma once

#include <cstdint>
#include <vector>

#include "chainreduce/errors.hpp"

namespace chainreduce {

/// Flat parameter/gradient vector with an aggregation weight.
///
/// theta counts how many device gradients have been folded into the
/// vector; it starts at 1 on every device and accumulates through pair
/// aggregation so that a full reduce recovers the arithmetic mean.
struct ParamVector {
    std::vector<double> values;
    double theta = 1.0;

    ParamVector() = default;
    explicit ParamVector(std::vector<double> v, double th = 1.0)
        : values(std::move(v)), theta(th) {}

    std::size_t size() const { return values.size(); }
};

/// Wire tuple for gradient exchange: (sender, gradient-with-theta, iteration).
struct GradientMessage {
    int sender_id = -1;
    ParamVector gradient;
    std::int64_t iteration = 0;
};

struct TrainHyper {
    double eta = 0.05;
    int epochs = 1;
    int agg_rounds_per_epoch = 1;
};

void validate_hyper(const TrainHyper& h);

/// Elementwise mean of all gradients; result theta = N.
ParamVector central_aggregate(const std::vector<ParamVector>& gradients);

/// Inner term of the fixed-graph neighbor rule: (sum_i dw_i + m*dw_own) / (2m).
/// The caller averages these terms over all devices to finish the rule.
ParamVector neighbor_aggregate(const ParamVector& own,
                               const std::vector<ParamVector>& neighbors,
                               int m);

/// theta-weighted average of two gradients; result theta is the sum.
ParamVector pair_aggregate(const ParamVector& receiver, const ParamVector& incoming);

/// w - eta * dw, with theta reset to 1 for the next iteration.
ParamVector sgd_step(const ParamVector& weights, const ParamVector& global_gradient,
                     double eta);

} // namespace chainreduce
