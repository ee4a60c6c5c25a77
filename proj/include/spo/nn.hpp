#pragma once

// Fully connected layers addressed inside one flat parameter vector. Every
// network in the project (denoiser, scorer) keeps its weights as a single
// std::vector<double> so optimizers, gradient checks and checkpoints can
// treat parameters uniformly.

#include <cmath>
#include <cstddef>
#include <span>
#include <vector>

#include "spo/rng.hpp"

namespace spo::nn {

struct Dense {
    std::size_t in = 0;
    std::size_t out = 0;
    std::size_t offset = 0;  // weights (out x in, row-major) then bias (out)

    std::size_t size() const { return out * in + out; }
    std::size_t bias_offset() const { return offset + out * in; }
};

class Layout {
public:
    Dense add_dense(std::size_t in, std::size_t out) {
        Dense d{in, out, total_};
        total_ += d.size();
        return d;
    }
    std::size_t add_block(std::size_t n) {
        const std::size_t off = total_;
        total_ += n;
        return off;
    }
    std::size_t total() const { return total_; }

private:
    std::size_t total_ = 0;
};

// y = W x + b
void forward(const Dense& layer, std::span<const double> params,
             std::span<const double> x, std::span<double> y);

// Accumulates dW, db into grad and, when dx is non-empty, W^T dy into dx.
void backward(const Dense& layer, std::span<const double> params,
              std::span<const double> x, std::span<const double> dy,
              std::span<double> grad, std::span<double> dx);

// Uniform(-a, a) weights with a = gain * sqrt(6 / (in + out)); zero bias.
void init_xavier(const Dense& layer, std::span<double> params, RngStream& rng, double gain = 1.0);

inline double silu(double x) { return x / (1.0 + std::exp(-x)); }
inline double silu_grad(double x) {
    const double s = 1.0 / (1.0 + std::exp(-x));
    return s * (1.0 + x * (1.0 - s));
}

// Sinusoidal embedding of an integer timestep: sin in the first half,
// cos in the second, geometric frequencies from 1 down to 1/10000.
std::vector<double> timestep_embedding(int t, std::size_t dim);

}  // namespace spo::nn
