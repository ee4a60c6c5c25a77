#include "spo/denoiser.hpp"

#include <stdexcept>
#include <string>

#include "spo/errors.hpp"

namespace spo {

DenoiserParams::DenoiserParams(const DenoiserArch& arch) : arch_(arch) {
    if (arch.data_dim < 1 || arch.num_classes < 1 || arch.cond_dim < 1 || arch.time_dim < 2 ||
        arch.hidden < 1 || arch.depth < 1) {
        throw ConfigError("invalid denoiser architecture");
    }
    nn::Layout layout;
    cond_offset_ = layout.add_block(static_cast<std::size_t>((arch.num_classes + 1) * arch.cond_dim));
    std::size_t in = input_dim();
    for (int l = 0; l < arch.depth; ++l) {
        layers_.push_back(layout.add_dense(in, static_cast<std::size_t>(arch.hidden)));
        in = static_cast<std::size_t>(arch.hidden);
    }
    layers_.push_back(layout.add_dense(in, static_cast<std::size_t>(arch.data_dim)));
    weights_.assign(layout.total(), 0.0);
}

std::size_t DenoiserParams::input_dim() const {
    return static_cast<std::size_t>(arch_.data_dim + arch_.time_dim + arch_.cond_dim);
}

DenoiserParams DenoiserParams::initialized(const DenoiserArch& arch, RngStream& rng, bool zero_output) {
    DenoiserParams p(arch);
    const std::size_t table = static_cast<std::size_t>((arch.num_classes + 1) * arch.cond_dim);
    for (std::size_t i = 0; i < table; ++i) p.weights_[p.cond_offset_ + i] = rng.normal();
    for (std::size_t l = 0; l + 1 < p.layers_.size(); ++l) nn::init_xavier(p.layers_[l], p.weights_, rng);
    if (!zero_output) nn::init_xavier(p.layers_.back(), p.weights_, rng);
    return p;
}

namespace {

std::size_t cond_row(const DenoiserParams& params, Condition c) {
    if (!c.valid(params.arch().num_classes)) {
        throw std::out_of_range("condition label " + std::to_string(c.label()) + " out of range");
    }
    return c.is_unconditional() ? static_cast<std::size_t>(params.arch().num_classes)
                                : static_cast<std::size_t>(c.label());
}

}  // namespace

Sample predict_noise(const DenoiserParams& params, std::span<const double> x_t, int t, Condition c,
                     DenoiserTrace& trace) {
    const auto& arch = params.arch();
    const auto w = params.weights();
    const std::size_t row = cond_row(params, c);

    trace.cond = c;
    trace.input.resize(params.input_dim());
    std::copy(x_t.begin(), x_t.end(), trace.input.begin());
    const auto temb = nn::timestep_embedding(t, static_cast<std::size_t>(arch.time_dim));
    std::copy(temb.begin(), temb.end(), trace.input.begin() + arch.data_dim);
    const double* emb = w.data() + params.cond_offset() + row * static_cast<std::size_t>(arch.cond_dim);
    std::copy(emb, emb + arch.cond_dim, trace.input.begin() + arch.data_dim + arch.time_dim);

    const auto& layers = params.layers();
    const std::size_t hidden = layers.size() - 1;
    trace.pre.resize(hidden);
    trace.post.resize(hidden);
    std::span<const double> h = trace.input;
    for (std::size_t l = 0; l < hidden; ++l) {
        trace.pre[l].resize(layers[l].out);
        trace.post[l].resize(layers[l].out);
        nn::forward(layers[l], w, h, trace.pre[l]);
        for (std::size_t i = 0; i < layers[l].out; ++i) trace.post[l][i] = nn::silu(trace.pre[l][i]);
        h = trace.post[l];
    }
    Sample eps(static_cast<std::size_t>(arch.data_dim));
    nn::forward(layers.back(), w, h, eps);
    if (!all_finite(eps)) throw NumericError("denoiser produced a non-finite output");
    return eps;
}

Sample predict_noise(const DenoiserParams& params, std::span<const double> x_t, int t, Condition c) {
    DenoiserTrace trace;
    return predict_noise(params, x_t, t, c, trace);
}

void backprop_noise(const DenoiserParams& params, const DenoiserTrace& trace,
                    std::span<const double> d_eps, std::span<double> grad) {
    const auto& arch = params.arch();
    const auto w = params.weights();
    const auto& layers = params.layers();
    const std::size_t hidden = layers.size() - 1;

    std::vector<double> dh(layers.back().in, 0.0);
    nn::backward(layers.back(), w, trace.post[hidden - 1], d_eps, grad, dh);
    for (std::size_t l = hidden; l-- > 0;) {
        std::vector<double> dpre(layers[l].out);
        for (std::size_t i = 0; i < dpre.size(); ++i) dpre[i] = dh[i] * nn::silu_grad(trace.pre[l][i]);
        std::span<const double> in = l == 0 ? std::span<const double>(trace.input)
                                            : std::span<const double>(trace.post[l - 1]);
        std::vector<double> din(layers[l].in, 0.0);
        nn::backward(layers[l], w, in, dpre, grad, din);
        dh = std::move(din);
    }
    // dh now holds d(loss)/d(input); route the embedding slice to its table row.
    const std::size_t row = trace.cond.is_unconditional() ? static_cast<std::size_t>(arch.num_classes)
                                                          : static_cast<std::size_t>(trace.cond.label());
    double* gemb = grad.data() + params.cond_offset() + row * static_cast<std::size_t>(arch.cond_dim);
    const std::size_t base = static_cast<std::size_t>(arch.data_dim + arch.time_dim);
    for (int i = 0; i < arch.cond_dim; ++i) gemb[i] += dh[base + static_cast<std::size_t>(i)];
}

Sample guided_noise(const DenoiserParams& params, std::span<const double> x_t, int t, Condition c,
                    double scale) {
    const Sample ec = predict_noise(params, x_t, t, c);
    const Sample eu = predict_noise(params, x_t, t, Condition::unconditional());
    Sample out(ec.size());
    for (std::size_t i = 0; i < out.size(); ++i) out[i] = (1.0 - scale) * eu[i] + scale * ec[i];
    return out;
}

bool uses_guidance(Condition c, double scale) { return scale > 0.0 && !c.is_unconditional(); }

Sample transition_noise(const DenoiserParams& params, std::span<const double> x_t, int t, Condition c,
                        double scale, NoiseTrace& trace) {
    trace.guided = uses_guidance(c, scale);
    trace.scale = scale;
    Sample ec = predict_noise(params, x_t, t, c, trace.cond);
    if (!trace.guided) return ec;
    const Sample eu = predict_noise(params, x_t, t, Condition::unconditional(), trace.uncond);
    for (std::size_t i = 0; i < ec.size(); ++i) ec[i] = (1.0 - scale) * eu[i] + scale * ec[i];
    return ec;
}

Sample transition_noise(const DenoiserParams& params, std::span<const double> x_t, int t, Condition c,
                        double scale) {
    if (uses_guidance(c, scale)) return guided_noise(params, x_t, t, c, scale);
    return predict_noise(params, x_t, t, c);
}

void backprop_transition_noise(const DenoiserParams& params, const NoiseTrace& trace,
                               std::span<const double> d_eps, std::span<double> grad) {
    if (!trace.guided) {
        backprop_noise(params, trace.cond, d_eps, grad);
        return;
    }
    std::vector<double> dc(d_eps.size()), du(d_eps.size());
    for (std::size_t i = 0; i < d_eps.size(); ++i) {
        dc[i] = trace.scale * d_eps[i];
        du[i] = (1.0 - trace.scale) * d_eps[i];
    }
    backprop_noise(params, trace.cond, dc, grad);
    backprop_noise(params, trace.uncond, du, grad);
}

}  // namespace spo
