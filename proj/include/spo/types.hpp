#pragma once

#include <compare>
#include <span>
#include <vector>

namespace spo {

// A point in data space (x_t, x_0 or an estimate of x_0).
using Sample = std::vector<double>;

// Class label of a mixture mode, or the unconditional sentinel used by
// classifier-free guidance.
class Condition {
public:
    static constexpr int kUnconditional = -1;

    constexpr Condition() = default;
    constexpr explicit Condition(int label) : label_(label) {}
    static constexpr Condition unconditional() { return Condition(kUnconditional); }

    constexpr int label() const { return label_; }
    constexpr bool is_unconditional() const { return label_ == kUnconditional; }
    constexpr bool valid(int num_classes) const {
        return is_unconditional() || (label_ >= 0 && label_ < num_classes);
    }

    friend constexpr auto operator<=>(Condition, Condition) = default;

private:
    int label_ = kUnconditional;
};

inline double squared_distance(std::span<const double> a, std::span<const double> b) {
    double s = 0.0;
    for (std::size_t i = 0; i < a.size(); ++i) {
        const double d = a[i] - b[i];
        s += d * d;
    }
    return s;
}

bool all_finite(std::span<const double> v);

}  // namespace spo
