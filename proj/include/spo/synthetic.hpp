#pragma once

#include <array>
#include <vector>

#include "spo/rng.hpp"
#include "spo/types.hpp"

namespace spo {

// Conditional Gaussian mixture used as the base model's training data.
// Samples are drawn around mode_centers[true_label] with std `train_std`;
// with probability `mislabel_prob` the reported label is replaced by a
// different, uniformly chosen one.
struct SyntheticDataSpec {
    std::vector<Sample> mode_centers = {{2.0, 2.0}, {-2.0, 2.0}, {-2.0, -2.0}, {2.0, -2.0}};
    double train_std = 0.6;
    double mislabel_prob = 0.1;

    int num_classes() const { return static_cast<int>(mode_centers.size()); }
    int data_dim() const { return static_cast<int>(mode_centers.front().size()); }

    friend bool operator==(const SyntheticDataSpec&, const SyntheticDataSpec&) = default;
};

struct LabeledSample {
    Sample x0;
    Condition label;       // possibly corrupted
    Condition true_label;
};

LabeledSample draw_training_sample(const SyntheticDataSpec& spec, RngStream& rng);

// Conditions spread evenly over labels: i-th entry has label i mod M.
std::vector<Condition> balanced_conditions(std::size_t n, int num_classes);

}  // namespace spo
