#include "chainreduce/param.hpp"

#include <cstddef>
#include <string>

namespace chainreduce {

namespace {

void require_same_length(const ParamVector& a, const ParamVector& b) {
    if (a.size() != b.size()) {
        throw DimensionMismatch("parameter vectors differ in length: " +
                                std::to_string(a.size()) + " vs " +
                                std::to_string(b.size()));
    }
}

} // namespace

void validate_hyper(const TrainHyper& h) {
    if (h.eta <= 0.0) throw InvalidInput("learning rate must be positive");
    if (h.epochs < 1) throw InvalidInput("epochs must be >= 1");
    if (h.agg_rounds_per_epoch < 1)
        throw InvalidInput("agg_rounds_per_epoch must be >= 1");
}

ParamVector central_aggregate(const std::vector<ParamVector>& gradients) {
    if (gradients.empty()) throw InvalidInput("central_aggregate: empty gradient list");
    const std::size_t len = gradients.front().size();
    ParamVector out(std::vector<double>(len, 0.0),
                    static_cast<double>(gradients.size()));
    for (const auto& g : gradients) {
        require_same_length(gradients.front(), g);
        for (std::size_t k = 0; k < len; ++k) out.values[k] += g.values[k];
    }
    const double inv_n = 1.0 / static_cast<double>(gradients.size());
    for (double& v : out.values) v *= inv_n;
    return out;
}

ParamVector neighbor_aggregate(const ParamVector& own,
                               const std::vector<ParamVector>& neighbors,
                               int m) {
    if (m <= 0 || static_cast<std::size_t>(m) != neighbors.size()) {
        throw InvalidInput("neighbor_aggregate: m must equal the neighbor count");
    }
    const std::size_t len = own.size();
    ParamVector out(std::vector<double>(len, 0.0), 1.0);
    for (const auto& nb : neighbors) {
        require_same_length(own, nb);
        for (std::size_t k = 0; k < len; ++k) out.values[k] += nb.values[k];
    }
    const double md = static_cast<double>(m);
    for (std::size_t k = 0; k < len; ++k) {
        out.values[k] = (out.values[k] + md * own.values[k]) / (2.0 * md);
    }
    return out;
}

ParamVector pair_aggregate(const ParamVector& receiver, const ParamVector& incoming) {
    require_same_length(receiver, incoming);
    if (receiver.theta < 1.0 || incoming.theta < 1.0) {
        throw InvariantViolation("pair_aggregate: theta must be >= 1");
    }
    const double ti = receiver.theta;
    const double tj = incoming.theta;
    ParamVector out(std::vector<double>(receiver.size()), ti + tj);
    for (std::size_t k = 0; k < receiver.size(); ++k) {
        out.values[k] = (ti * receiver.values[k] + tj * incoming.values[k]) / (ti + tj);
    }
    return out;
}

ParamVector sgd_step(const ParamVector& weights, const ParamVector& global_gradient,
                     double eta) {
    require_same_length(weights, global_gradient);
    if (eta <= 0.0) throw InvalidInput("sgd_step: eta must be positive");
    ParamVector out(std::vector<double>(weights.size()), 1.0);
    for (std::size_t k = 0; k < weights.size(); ++k) {
        out.values[k] = weights.values[k] - eta * global_gradient.values[k];
    }
    return out;
}

} // namespace chainreduce
