#pragma once

// Conditional noise-prediction network eps(x_t, t, c).
//
// Input is the concatenation [x_t, sinusoidal(t), embed(c)] followed by
// `depth` SiLU hidden layers and a linear output of size data_dim. The
// condition table has num_classes + 1 rows; the last row is the learned
// unconditional embedding used by classifier-free guidance.

#include <cstddef>
#include <span>
#include <vector>

#include "spo/nn.hpp"
#include "spo/rng.hpp"
#include "spo/types.hpp"

namespace spo {

struct DenoiserArch {
    int data_dim = 2;
    int num_classes = 4;
    int cond_dim = 16;
    int time_dim = 64;
    int hidden = 128;
    int depth = 3;

    friend bool operator==(const DenoiserArch&, const DenoiserArch&) = default;
};

class DenoiserParams {
public:
    DenoiserParams() = default;
    // All weights zero.
    explicit DenoiserParams(const DenoiserArch& arch);

    // Xavier hidden layers, N(0, 1) condition table; the output layer stays
    // zero when zero_output is set, so the untrained model predicts eps = 0.
    static DenoiserParams initialized(const DenoiserArch& arch, RngStream& rng, bool zero_output = true);

    const DenoiserArch& arch() const { return arch_; }
    std::span<const double> weights() const { return weights_; }
    std::span<double> weights() { return weights_; }
    std::size_t size() const { return weights_.size(); }

    std::size_t cond_offset() const { return cond_offset_; }
    const std::vector<nn::Dense>& layers() const { return layers_; }
    std::size_t input_dim() const;

    friend bool operator==(const DenoiserParams& a, const DenoiserParams& b) {
        return a.arch_ == b.arch_ && a.weights_ == b.weights_;
    }

private:
    DenoiserArch arch_;
    std::size_t cond_offset_ = 0;
    std::vector<nn::Dense> layers_;  // hidden layers then output
    std::vector<double> weights_;
};

// Activations kept from a forward pass for backpropagation.
struct DenoiserTrace {
    Condition cond;
    std::vector<double> input;
    std::vector<std::vector<double>> pre;   // pre-activation per hidden layer
    std::vector<std::vector<double>> post;  // SiLU output per hidden layer
};

// Deterministic forward pass. Throws NumericError on a non-finite result
// (which is what non-finite weights produce) and std::out_of_range for an
// invalid condition.
Sample predict_noise(const DenoiserParams& params, std::span<const double> x_t, int t, Condition c);
Sample predict_noise(const DenoiserParams& params, std::span<const double> x_t, int t, Condition c,
                     DenoiserTrace& trace);

// Accumulates d(loss)/d(params) into grad given d(loss)/d(eps).
void backprop_noise(const DenoiserParams& params, const DenoiserTrace& trace,
                    std::span<const double> d_eps, std::span<double> grad);

// eps_u + scale * (eps_c - eps_u).
Sample guided_noise(const DenoiserParams& params, std::span<const double> x_t, int t, Condition c, double scale);

// Traced variant of whichever noise estimate a transition uses: guided
// when scale > 0 and c is conditional, the plain c-conditioned estimate
// otherwise.
struct NoiseTrace {
    bool guided = false;
    double scale = 0.0;
    DenoiserTrace cond;
    DenoiserTrace uncond;
};

bool uses_guidance(Condition c, double scale);
Sample transition_noise(const DenoiserParams& params, std::span<const double> x_t, int t, Condition c,
                        double scale);
Sample transition_noise(const DenoiserParams& params, std::span<const double> x_t, int t, Condition c,
                        double scale, NoiseTrace& trace);
void backprop_transition_noise(const DenoiserParams& params, const NoiseTrace& trace,
                               std::span<const double> d_eps, std::span<double> grad);

}  // namespace spo
