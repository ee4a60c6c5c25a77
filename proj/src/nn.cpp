#include "spo/nn.hpp"

#include <cassert>
#include <cmath>

#include "spo/kernels.hpp"
#include "spo/types.hpp"

namespace spo {

bool all_finite(std::span<const double> v) {
    for (double x : v) {
        if (!std::isfinite(x)) return false;
    }
    return true;
}

}  // namespace spo

namespace spo::nn {

void forward(const Dense& layer, std::span<const double> params,
             std::span<const double> x, std::span<double> y) {
    assert(x.size() == layer.in && y.size() == layer.out);
    kernels::active().gemv(params.data() + layer.offset, x.data(),
                           params.data() + layer.bias_offset(), y.data(), layer.out, layer.in);
}

void backward(const Dense& layer, std::span<const double> params,
              std::span<const double> x, std::span<const double> dy,
              std::span<double> grad, std::span<double> dx) {
    const auto& k = kernels::active();
    k.ger_acc(dy.data(), x.data(), grad.data() + layer.offset, layer.out, layer.in);
    double* gb = grad.data() + layer.bias_offset();
    for (std::size_t r = 0; r < layer.out; ++r) gb[r] += dy[r];
    if (!dx.empty()) {
        k.gemv_t_acc(params.data() + layer.offset, dy.data(), dx.data(), layer.out, layer.in);
    }
}

void init_xavier(const Dense& layer, std::span<double> params, RngStream& rng, double gain) {
    const double a = gain * std::sqrt(6.0 / static_cast<double>(layer.in + layer.out));
    for (std::size_t i = 0; i < layer.out * layer.in; ++i) {
        params[layer.offset + i] = a * (2.0 * rng.uniform() - 1.0);
    }
    for (std::size_t r = 0; r < layer.out; ++r) params[layer.bias_offset() + r] = 0.0;
}

std::vector<double> timestep_embedding(int t, std::size_t dim) {
    std::vector<double> e(dim);
    const std::size_t half = dim / 2;
    for (std::size_t i = 0; i < half; ++i) {
        const double freq = std::exp(-std::log(10000.0) * static_cast<double>(i) / static_cast<double>(half));
        e[i] = std::sin(t * freq);
        e[half + i] = std::cos(t * freq);
    }
    return e;
}

}  // namespace spo::nn
