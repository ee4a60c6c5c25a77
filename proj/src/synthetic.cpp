#include "spo/synthetic.hpp"

namespace spo {

LabeledSample draw_training_sample(const SyntheticDataSpec& spec, RngStream& rng) {
    const int m = spec.num_classes();
    const int truth = static_cast<int>(rng.index(static_cast<std::size_t>(m)));
    LabeledSample s;
    s.true_label = Condition(truth);
    s.x0 = spec.mode_centers[static_cast<std::size_t>(truth)];
    for (auto& v : s.x0) v += spec.train_std * rng.normal();
    int label = truth;
    if (m > 1 && rng.uniform() < spec.mislabel_prob) {
        label = (truth + 1 + static_cast<int>(rng.index(static_cast<std::size_t>(m - 1)))) % m;
    }
    s.label = Condition(label);
    return s;
}

std::vector<Condition> balanced_conditions(std::size_t n, int num_classes) {
    std::vector<Condition> out;
    out.reserve(n);
    for (std::size_t i = 0; i < n; ++i) out.emplace_back(static_cast<int>(i % static_cast<std::size_t>(num_classes)));
    return out;
}

}  // namespace spo
