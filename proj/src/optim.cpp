#include "spo/optim.hpp"

#include "spo/kernels.hpp"

namespace spo {

double l2_norm(std::span<const double> v) { return std::sqrt(kernels::dot(v, v)); }

double clip_grad_norm(std::span<double> g, double max_norm) {
    const double n = l2_norm(g);
    if (n > max_norm && n > 0.0) {
        const double s = max_norm / n;
        for (auto& x : g) x *= s;
    }
    return n;
}

void sgd_step(std::span<double> params, std::span<const double> grad, double lr) {
    kernels::axpy(-lr, grad, params);
}

void Adam::step(std::span<double> params, std::span<const double> grad) {
    ++t_;
    const double c1 = 1.0 - std::pow(b1_, static_cast<double>(t_));
    const double c2 = 1.0 - std::pow(b2_, static_cast<double>(t_));
    for (std::size_t i = 0; i < params.size(); ++i) {
        m_[i] = b1_ * m_[i] + (1.0 - b1_) * grad[i];
        v_[i] = b2_ * v_[i] + (1.0 - b2_) * grad[i] * grad[i];
        params[i] -= lr_ * (m_[i] / c1) / (std::sqrt(v_[i] / c2) + eps_);
    }
}

}  // namespace spo
