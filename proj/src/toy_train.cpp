#include "chainreduce/toy_train.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <numbers>
#include <numeric>
#include <random>
#include <sstream>

namespace chainreduce {

namespace {

std::vector<double> class_center(int c, int num_classes, int dim) {
    std::vector<double> center(static_cast<std::size_t>(dim), 0.0);
    const double radius = 3.0;
    if (dim == 1) {
        center[0] = num_classes == 1
                        ? 0.0
                        : radius * (2.0 * c / (num_classes - 1) - 1.0);
    } else {
        const double angle = 2.0 * std::numbers::pi * c / num_classes;
        center[0] = radius * std::cos(angle);
        center[1] = radius * std::sin(angle);
    }
    return center;
}

struct LayoutOffsets {
    int w1, b1, w2, b2;
};

LayoutOffsets offsets(const ModelLayout& l) {
    LayoutOffsets o{};
    o.w1 = 0;
    o.b1 = o.w1 + l.input_dim * l.hidden_dim;
    o.w2 = o.b1 + l.hidden_dim;
    o.b2 = o.w2 + l.hidden_dim * l.num_classes;
    return o;
}

} // namespace

SyntheticDataset generate_blobs(int num_classes, int per_class, int dim, double spread,
                                std::uint64_t seed) {
    if (num_classes < 1 || per_class < 1 || dim < 1)
        throw InvalidInput("generate_blobs: counts must be positive");
    if (spread <= 0.0) throw InvalidInput("generate_blobs: spread must be positive");

    SyntheticDataset ds;
    ds.num_classes = num_classes;
    ds.seed = seed;
    std::mt19937_64 rng(seed);
    std::normal_distribution<double> noise(0.0, spread);
    for (int c = 0; c < num_classes; ++c) {
        const auto center = class_center(c, num_classes, dim);
        for (int s = 0; s < per_class; ++s) {
            Sample sample;
            sample.label = c;
            sample.x.resize(static_cast<std::size_t>(dim));
            for (int j = 0; j < dim; ++j) sample.x[j] = center[j] + noise(rng);
            ds.samples.push_back(std::move(sample));
        }
    }
    std::vector<std::size_t> idx(ds.samples.size());
    std::iota(idx.begin(), idx.end(), 0);
    std::shuffle(idx.begin(), idx.end(), rng);
    const std::size_t n_train = (idx.size() * 8) / 10;
    ds.train_idx.assign(idx.begin(), idx.begin() + static_cast<std::ptrdiff_t>(n_train));
    ds.test_idx.assign(idx.begin() + static_cast<std::ptrdiff_t>(n_train), idx.end());
    return ds;
}

ToyModel init_model(const ModelLayout& layout, std::uint64_t seed) {
    if (layout.input_dim < 1 || layout.hidden_dim < 1 || layout.num_classes < 1)
        throw InvalidInput("init_model: layout dimensions must be positive");
    ToyModel m;
    m.layout = layout;
    m.weights.values.resize(static_cast<std::size_t>(layout.weight_count()));
    m.weights.theta = 1.0;
    std::mt19937_64 rng(seed);
    const auto o = offsets(layout);
    auto fill = [&](int begin, int count, int fan_in) {
        const double s = std::sqrt(2.0 / fan_in);
        std::normal_distribution<double> d(0.0, s);
        for (int k = 0; k < count; ++k)
            m.weights.values[static_cast<std::size_t>(begin + k)] = d(rng);
    };
    fill(o.w1, layout.input_dim * layout.hidden_dim, layout.input_dim);
    fill(o.w2, layout.hidden_dim * layout.num_classes, layout.hidden_dim);
    // biases start at zero
    return m;
}

std::pair<double, ParamVector> forward_loss_grad(const ToyModel& model,
                                                 std::span<const Sample> batch) {
    if (batch.empty()) throw InvalidInput("forward_loss_grad: empty batch");
    const auto& l = model.layout;
    if (static_cast<int>(model.weights.size()) != l.weight_count())
        throw DimensionMismatch("forward_loss_grad: weight length does not match layout");
    const auto o = offsets(l);
    const double* w = model.weights.values.data();

    ParamVector grad(std::vector<double>(model.weights.size(), 0.0), 1.0);
    double* g = grad.values.data();
    double loss = 0.0;

    std::vector<double> hidden(static_cast<std::size_t>(l.hidden_dim));
    std::vector<double> pre(static_cast<std::size_t>(l.hidden_dim));
    std::vector<double> logits(static_cast<std::size_t>(l.num_classes));
    std::vector<double> dlogit(static_cast<std::size_t>(l.num_classes));
    std::vector<double> dhidden(static_cast<std::size_t>(l.hidden_dim));

    const double inv_b = 1.0 / static_cast<double>(batch.size());
    for (const auto& s : batch) {
        if (static_cast<int>(s.x.size()) != l.input_dim)
            throw DimensionMismatch("forward_loss_grad: feature dim mismatch");
        if (s.label < 0 || s.label >= l.num_classes)
            throw InvalidInput("forward_loss_grad: label out of range");

        for (int j = 0; j < l.hidden_dim; ++j) {
            double acc = w[o.b1 + j];
            for (int i = 0; i < l.input_dim; ++i)
                acc += s.x[static_cast<std::size_t>(i)] * w[o.w1 + i * l.hidden_dim + j];
            pre[static_cast<std::size_t>(j)] = acc;
            hidden[static_cast<std::size_t>(j)] = acc > 0.0 ? acc : 0.0;
        }
        double max_logit = -1e300;
        for (int k = 0; k < l.num_classes; ++k) {
            double acc = w[o.b2 + k];
            for (int j = 0; j < l.hidden_dim; ++j)
                acc += hidden[static_cast<std::size_t>(j)] * w[o.w2 + j * l.num_classes + k];
            logits[static_cast<std::size_t>(k)] = acc;
            max_logit = std::max(max_logit, acc);
        }
        double z = 0.0;
        for (int k = 0; k < l.num_classes; ++k)
            z += std::exp(logits[static_cast<std::size_t>(k)] - max_logit);
        const double log_z = std::log(z) + max_logit;
        loss += (log_z - logits[static_cast<std::size_t>(s.label)]) * inv_b;

        for (int k = 0; k < l.num_classes; ++k) {
            const double p = std::exp(logits[static_cast<std::size_t>(k)] - log_z);
            dlogit[static_cast<std::size_t>(k)] = (p - (k == s.label ? 1.0 : 0.0)) * inv_b;
        }
        for (int k = 0; k < l.num_classes; ++k) {
            g[o.b2 + k] += dlogit[static_cast<std::size_t>(k)];
            for (int j = 0; j < l.hidden_dim; ++j)
                g[o.w2 + j * l.num_classes + k] +=
                    hidden[static_cast<std::size_t>(j)] * dlogit[static_cast<std::size_t>(k)];
        }
        for (int j = 0; j < l.hidden_dim; ++j) {
            double acc = 0.0;
            if (pre[static_cast<std::size_t>(j)] > 0.0) {
                for (int k = 0; k < l.num_classes; ++k)
                    acc += w[o.w2 + j * l.num_classes + k] * dlogit[static_cast<std::size_t>(k)];
            }
            dhidden[static_cast<std::size_t>(j)] = acc;
        }
        for (int j = 0; j < l.hidden_dim; ++j) {
            g[o.b1 + j] += dhidden[static_cast<std::size_t>(j)];
            for (int i = 0; i < l.input_dim; ++i)
                g[o.w1 + i * l.hidden_dim + j] +=
                    s.x[static_cast<std::size_t>(i)] * dhidden[static_cast<std::size_t>(j)];
        }
    }
    return {loss, grad};
}

double evaluate(const ToyModel& model, std::span<const Sample> test) {
    if (test.empty()) throw InvalidInput("evaluate: empty test slice");
    const auto& l = model.layout;
    const auto o = offsets(l);
    const double* w = model.weights.values.data();
    std::vector<double> hidden(static_cast<std::size_t>(l.hidden_dim));
    std::size_t correct = 0;
    for (const auto& s : test) {
        for (int j = 0; j < l.hidden_dim; ++j) {
            double acc = w[o.b1 + j];
            for (int i = 0; i < l.input_dim; ++i)
                acc += s.x[static_cast<std::size_t>(i)] * w[o.w1 + i * l.hidden_dim + j];
            hidden[static_cast<std::size_t>(j)] = acc > 0.0 ? acc : 0.0;
        }
        int best = 0;
        double best_v = -1e300;
        for (int k = 0; k < l.num_classes; ++k) {
            double acc = w[o.b2 + k];
            for (int j = 0; j < l.hidden_dim; ++j)
                acc += hidden[static_cast<std::size_t>(j)] * w[o.w2 + j * l.num_classes + k];
            if (acc > best_v) {  // strict: ties keep the lowest class index
                best_v = acc;
                best = k;
            }
        }
        if (best == s.label) ++correct;
    }
    return static_cast<double>(correct) / static_cast<double>(test.size());
}

Partition partition_indices(const std::vector<std::size_t>& indices, int num_devices,
                            std::uint64_t seed) {
    if (num_devices < 1) throw InvalidInput("partition: num_devices must be >= 1");
    if (static_cast<std::size_t>(num_devices) > indices.size())
        throw InvalidInput("partition: more devices than samples");
    Partition p;
    p.order = indices;
    std::mt19937_64 rng(seed);
    std::shuffle(p.order.begin(), p.order.end(), rng);
    const std::size_t n = p.order.size();
    const std::size_t base = n / static_cast<std::size_t>(num_devices);
    const std::size_t extra = n % static_cast<std::size_t>(num_devices);
    std::size_t begin = 0;
    for (int d = 0; d < num_devices; ++d) {
        const std::size_t sz = base + (static_cast<std::size_t>(d) < extra ? 1 : 0);
        p.ranges.emplace_back(begin, begin + sz);
        begin += sz;
    }
    return p;
}

Partition partition_dataset(const SyntheticDataset& ds, int num_devices) {
    return partition_indices(ds.train_idx, num_devices, ds.seed ^ 0x9e3779b97f4a7c15ULL);
}

std::vector<Sample> gather(const SyntheticDataset& ds, const std::vector<std::size_t>& idx) {
    std::vector<Sample> out;
    out.reserve(idx.size());
    for (auto i : idx) out.push_back(ds.samples.at(i));
    return out;
}

void export_csv(const SyntheticDataset& ds, const std::string& path) {
    std::ofstream f(path);
    if (!f) throw InvalidInput("export_csv: cannot open " + path);
    f.precision(17);
    const int d = ds.dim();
    for (int j = 0; j < d; ++j) f << "f" << j << ",";
    f << "label\n";
    for (const auto& s : ds.samples) {
        for (double v : s.x) f << v << ",";
        f << s.label << "\n";
    }
}

SyntheticDataset import_csv(const std::string& path, std::uint64_t seed) {
    std::ifstream f(path);
    if (!f) throw InvalidInput("import_csv: cannot open " + path);
    SyntheticDataset ds;
    ds.seed = seed;
    std::string line;
    if (!std::getline(f, line)) throw InvalidInput("import_csv: empty file");
    int max_label = -1;
    while (std::getline(f, line)) {
        if (line.empty()) continue;
        std::stringstream ss(line);
        std::string cell;
        std::vector<double> fields;
        while (std::getline(ss, cell, ',')) fields.push_back(std::stod(cell));
        if (fields.size() < 2) throw InvalidInput("import_csv: malformed row");
        Sample s;
        s.label = static_cast<int>(fields.back());
        fields.pop_back();
        s.x = std::move(fields);
        max_label = std::max(max_label, s.label);
        ds.samples.push_back(std::move(s));
    }
    ds.num_classes = max_label + 1;
    std::vector<std::size_t> idx(ds.samples.size());
    std::iota(idx.begin(), idx.end(), 0);
    std::mt19937_64 rng(seed);
    std::shuffle(idx.begin(), idx.end(), rng);
    const std::size_t n_train = (idx.size() * 8) / 10;
    ds.train_idx.assign(idx.begin(), idx.begin() + static_cast<std::ptrdiff_t>(n_train));
    ds.test_idx.assign(idx.begin() + static_cast<std::ptrdiff_t>(n_train), idx.end());
    return ds;
}

} // namespace chainreduce
