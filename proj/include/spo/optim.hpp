#pragma once

#include <cmath>
#include <span>
#include <vector>

namespace spo {

double l2_norm(std::span<const double> v);

// Scales g in place so that ||g|| <= max_norm. Returns the norm before clipping.
double clip_grad_norm(std::span<double> g, double max_norm);

// params -= lr * grad
void sgd_step(std::span<double> params, std::span<const double> grad, double lr);

class Adam {
public:
    explicit Adam(std::size_t n, double lr = 1e-3, double beta1 = 0.9, double beta2 = 0.999, double eps = 1e-8)
        : lr_(lr), b1_(beta1), b2_(beta2), eps_(eps), m_(n, 0.0), v_(n, 0.0) {}

    void step(std::span<double> params, std::span<const double> grad);
    void set_lr(double lr) { lr_ = lr; }
    double lr() const { return lr_; }

private:
    double lr_, b1_, b2_, eps_;
    long t_ = 0;
    std::vector<double> m_, v_;
};

}  // namespace spo
