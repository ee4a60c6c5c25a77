#include "spo/scorer.hpp"

#include <algorithm>
#include <cmath>
#include <stdexcept>
#include <string>

#include "spo/diffusion.hpp"
#include "spo/errors.hpp"
#include "spo/kernels.hpp"
#include "spo/optim.hpp"

namespace spo {

namespace {
constexpr double kLayerNormEps = 1e-5;
}

ScorerParams::ScorerParams(const ScorerArch& arch, double tau) : arch_(arch), tau_(tau) {
    if (!(tau > 0.0)) throw ConfigError("scorer temperature must be positive");
    if (arch.data_dim < 1 || arch.num_classes < 1 || arch.embed_dim < 1 || arch.time_dim < 2 ||
        arch.hidden < 1 || arch.depth < 1) {
        throw ConfigError("invalid scorer architecture");
    }
    nn::Layout layout;
    embed_offset_ = layout.add_block(static_cast<std::size_t>(arch.num_classes * arch.embed_dim));
    const auto h = static_cast<std::size_t>(arch.hidden);
    std::size_t in = static_cast<std::size_t>(arch.data_dim);
    for (int l = 0; l < arch.depth; ++l) {
        layers_.push_back(layout.add_dense(in, h));
        modulation_.push_back(layout.add_dense(static_cast<std::size_t>(arch.time_dim), 2 * h));
        in = h;
    }
    layers_.push_back(layout.add_dense(h, static_cast<std::size_t>(arch.embed_dim)));
    weights_.assign(layout.total(), 0.0);
}

ScorerParams ScorerParams::initialized(const ScorerArch& arch, RngStream& rng, double tau) {
    ScorerParams p(arch, tau);
    const std::size_t table = static_cast<std::size_t>(arch.num_classes * arch.embed_dim);
    const double s = 1.0 / std::sqrt(static_cast<double>(arch.embed_dim));
    for (std::size_t i = 0; i < table; ++i) p.weights_[p.embed_offset_ + i] = s * rng.normal();
    for (const auto& layer : p.layers_) nn::init_xavier(layer, p.weights_, rng);
    // modulation layers stay zero: identity modulation at initialization
    return p;
}

double scorer_forward(const ScorerParams& params, std::span<const double> x, int t, Condition c,
                      ScorerTrace& tr) {
    const auto& arch = params.arch();
    if (c.is_unconditional() || !c.valid(arch.num_classes)) {
        throw std::out_of_range("scorer needs a conditional label, got " + std::to_string(c.label()));
    }
    const auto w = params.weights();
    const auto& layers = params.layers();
    const std::size_t depth = static_cast<std::size_t>(arch.depth);
    const std::size_t h = static_cast<std::size_t>(arch.hidden);

    tr.cond = c;
    tr.input.assign(x.begin(), x.end());
    if (arch.time_conditioned) tr.temb = nn::timestep_embedding(t, static_cast<std::size_t>(arch.time_dim));
    tr.pre.resize(depth);
    tr.normed.resize(depth);
    tr.inv_std.resize(depth);
    tr.mod.resize(depth);
    tr.act.resize(depth);
    tr.post.resize(depth);

    std::span<const double> in = tr.input;
    for (std::size_t l = 0; l < depth; ++l) {
        tr.pre[l].resize(h);
        nn::forward(layers[l], w, in, tr.pre[l]);
        double mean = 0.0;
        for (double v : tr.pre[l]) mean += v;
        mean /= static_cast<double>(h);
        double var = 0.0;
        for (double v : tr.pre[l]) var += (v - mean) * (v - mean);
        var /= static_cast<double>(h);
        const double inv = 1.0 / std::sqrt(var + kLayerNormEps);
        tr.inv_std[l] = inv;
        tr.normed[l].resize(h);
        for (std::size_t i = 0; i < h; ++i) tr.normed[l][i] = (tr.pre[l][i] - mean) * inv;

        tr.act[l] = tr.normed[l];
        if (arch.time_conditioned) {
            tr.mod[l].resize(2 * h);
            nn::forward(params.modulation()[l], w, tr.temb, tr.mod[l]);
            for (std::size_t i = 0; i < h; ++i) {
                tr.act[l][i] = tr.normed[l][i] * (1.0 + tr.mod[l][i]) + tr.mod[l][h + i];
            }
        }
        tr.post[l].resize(h);
        for (std::size_t i = 0; i < h; ++i) tr.post[l][i] = nn::silu(tr.act[l][i]);
        in = tr.post[l];
    }
    tr.feature.resize(static_cast<std::size_t>(arch.embed_dim));
    nn::forward(layers.back(), w, in, tr.feature);
    const double* e = w.data() + params.embed_offset() +
                      static_cast<std::size_t>(c.label()) * static_cast<std::size_t>(arch.embed_dim);
    const double s = kernels::active().dot(tr.feature.data(), e, tr.feature.size());
    if (!std::isfinite(s)) throw NumericError("scorer produced a non-finite score");
    return s;
}

double scorer_forward(const ScorerParams& params, std::span<const double> x, int t, Condition c) {
    ScorerTrace tr;
    return scorer_forward(params, x, t, c, tr);
}

void scorer_backward(const ScorerParams& params, const ScorerTrace& tr, double d_score, std::span<double> grad) {
    const auto& arch = params.arch();
    const auto w = params.weights();
    const auto& layers = params.layers();
    const std::size_t depth = static_cast<std::size_t>(arch.depth);
    const std::size_t h = static_cast<std::size_t>(arch.hidden);
    const std::size_t ed = static_cast<std::size_t>(arch.embed_dim);

    const std::size_t erow = params.embed_offset() + static_cast<std::size_t>(tr.cond.label()) * ed;
    std::vector<double> dfeat(ed);
    for (std::size_t i = 0; i < ed; ++i) {
        dfeat[i] = d_score * w[erow + i];
        grad[erow + i] += d_score * tr.feature[i];
    }
    std::vector<double> dh(h, 0.0);
    nn::backward(layers.back(), w, tr.post[depth - 1], dfeat, grad, dh);

    for (std::size_t l = depth; l-- > 0;) {
        std::vector<double> dact(h);
        for (std::size_t i = 0; i < h; ++i) dact[i] = dh[i] * nn::silu_grad(tr.act[l][i]);
        std::vector<double> dnorm(h);
        if (arch.time_conditioned) {
            std::vector<double> dmod(2 * h);
            for (std::size_t i = 0; i < h; ++i) {
                dnorm[i] = dact[i] * (1.0 + tr.mod[l][i]);
                dmod[i] = dact[i] * tr.normed[l][i];
                dmod[h + i] = dact[i];
            }
            nn::backward(params.modulation()[l], w, tr.temb, dmod, grad, {});
        } else {
            dnorm = dact;
        }
        double mean_d = 0.0, mean_dn = 0.0;
        for (std::size_t i = 0; i < h; ++i) {
            mean_d += dnorm[i];
            mean_dn += dnorm[i] * tr.normed[l][i];
        }
        mean_d /= static_cast<double>(h);
        mean_dn /= static_cast<double>(h);
        std::vector<double> dpre(h);
        for (std::size_t i = 0; i < h; ++i) {
            dpre[i] = tr.inv_std[l] * (dnorm[i] - mean_d - tr.normed[l][i] * mean_dn);
        }
        std::span<const double> in = l == 0 ? std::span<const double>(tr.input) : std::span<const double>(tr.post[l - 1]);
        std::vector<double> din(l == 0 ? 0 : h, 0.0);
        nn::backward(layers[l], w, in, dpre, grad, din);
        dh = std::move(din);
    }
}

Sample PreferenceScorer::preprocess(std::span<const double> x_t, int t, Condition c) const {
    if (!use_x0_estimate || t == 0) return Sample(x_t.begin(), x_t.end());
    if (!x0_estimator) throw ConfigError("scorer uses x0 estimates but has no estimator model");
    return estimate_x0(*x0_estimator, x_t, t, c, sched);
}

double PreferenceScorer::score(std::span<const double> x_t, int t, Condition c) const {
    return scorer_forward(params, preprocess(x_t, t, c), t, c);
}

double pair_preference_loss(const ScorerParams& params, std::span<const double> a, std::span<const double> b,
                            int t, Condition c, PreferenceLabel label, std::span<double> grad) {
    ScorerTrace ta, tb;
    const double sa = scorer_forward(params, a, t, c, ta);
    const double sb = scorer_forward(params, b, t, c, tb);
    const double pa = pairwise_prob(sa, sb, params.tau());
    double loss = 0.0;
    double target = 0.5;
    switch (label) {
        case PreferenceLabel::WinA:
            loss = preference_loss(pa, label);
            target = 1.0;
            break;
        case PreferenceLabel::WinB:
            loss = preference_loss(1.0 - pa, label);
            target = 0.0;
            break;
        case PreferenceLabel::Tie:
            loss = preference_loss(pa, label);
            break;
    }
    if (!grad.empty()) {
        // d loss / d (tau (sa - sb)) = p_a - target for all three labels
        const double du = pa - target;
        scorer_backward(params, ta, params.tau() * du, grad);
        scorer_backward(params, tb, -params.tau() * du, grad);
    }
    return loss;
}

std::vector<std::pair<int, int>> default_bands(int t_max, int width) {
    std::vector<std::pair<int, int>> bands;
    for (int lo = 0; lo < t_max; lo += width) bands.emplace_back(lo, std::min(lo + width, t_max));
    return bands;
}

std::vector<BandAccuracy> band_accuracy(const PreferenceScorer& scorer, std::span<const CleanPair> pairs,
                                        const std::vector<std::pair<int, int>>& bands, int draws, RngStream& rng) {
    std::vector<BandAccuracy> out;
    for (const auto& [lo, hi] : bands) {
        BandAccuracy acc{lo, hi, 0.0, 0};
        std::size_t correct = 0;
        for (const auto& pair : pairs) {
            if (pair.label == PreferenceLabel::Tie) continue;
            for (int k = 0; k < draws; ++k) {
                const int t = rng.integer(lo, hi);
                const NoisyPair np = make_noisy_pair(pair, t, rng, scorer.sched);
                const double sa = scorer.score(np.a, t, pair.c);
                const double sb = scorer.score(np.b, t, pair.c);
                const bool says_a = sa > sb;
                correct += (says_a == (pair.label == PreferenceLabel::WinA)) ? 1 : 0;
                ++acc.n;
            }
        }
        acc.accuracy = acc.n ? static_cast<double>(correct) / static_cast<double>(acc.n) : 0.0;
        out.push_back(acc);
    }
    return out;
}

ScorerTrainResult train_preference_scorer(std::span<const CleanPair> pairs, const NoiseSchedule& sched,
                                          std::shared_ptr<const DenoiserParams> base,
                                          const ScorerTrainConfig& config, RngStream& rng) {
    if (pairs.empty()) throw ConfigError("scorer training needs at least one pair");
    RngStream init_rng = rng.derive(0);
    RngStream batch_rng = rng.derive(1);
    RngStream val_rng = rng.derive(2);

    const std::size_t n_val = std::min(pairs.size() - 1,
                                       static_cast<std::size_t>(config.validation_fraction * static_cast<double>(pairs.size())));
    const auto train = pairs.subspan(0, pairs.size() - n_val);
    const auto held_out = pairs.subspan(pairs.size() - n_val);

    ScorerTrainResult result;
    result.scorer.params = ScorerParams::initialized(config.arch, init_rng, config.tau);
    result.scorer.x0_estimator = std::move(base);
    result.scorer.sched = sched;
    result.scorer.use_x0_estimate = config.use_x0_estimate;

    auto& params = result.scorer.params;
    Adam adam(params.size(), config.lr);
    std::vector<double> grad(params.size());
    for (long step = 0; step < config.steps; ++step) {
        std::fill(grad.begin(), grad.end(), 0.0);
        double loss = 0.0;
        for (int i = 0; i < config.batch; ++i) {
            const CleanPair& pair = train[batch_rng.index(train.size())];
            const int t = batch_rng.integer(0, sched.t_max());
            const NoisyPair np = make_noisy_pair(pair, t, batch_rng, sched);
            const Sample a = result.scorer.preprocess(np.a, t, pair.c);
            const Sample b = result.scorer.preprocess(np.b, t, pair.c);
            loss += pair_preference_loss(params, a, b, t, pair.c, pair.label, grad);
        }
        const double inv = 1.0 / config.batch;
        loss *= inv;
        for (auto& g : grad) g *= inv;
        if (!std::isfinite(loss) || !all_finite(grad)) throw TrainingError("scorer loss is not finite", step);
        if (config.lr > 0.0) adam.step(params.weights(), grad);
        result.loss_curve.push_back(loss);
    }
    if (!held_out.empty()) {
        result.validation =
            band_accuracy(result.scorer, held_out, default_bands(sched.t_max()), config.validation_draws, val_rng);
    }
    return result;
}

ScorerTrainResult train_step_aware(std::span<const CleanPair> pairs, const NoiseSchedule& sched,
                                   std::shared_ptr<const DenoiserParams> base, ScorerTrainConfig config,
                                   RngStream& rng) {
    config.arch.time_conditioned = true;
    return train_preference_scorer(pairs, sched, std::move(base), config, rng);
}

ScorerTrainResult train_step_agnostic(std::span<const CleanPair> pairs, const NoiseSchedule& sched,
                                      std::shared_ptr<const DenoiserParams> base, ScorerTrainConfig config,
                                      RngStream& rng) {
    config.arch.time_conditioned = false;
    return train_preference_scorer(pairs, sched, std::move(base), config, rng);
}

std::pair<std::size_t, std::size_t> extreme_indices(std::span<const double> scores) {
    std::size_t win = 0, lose = 0;
    for (std::size_t i = 1; i < scores.size(); ++i) {
        if (scores[i] > scores[win]) win = i;
        if (scores[i] <= scores[lose]) lose = i;
    }
    return {win, lose};
}

CandidateLabels label_candidates(const PreferenceScorer& scorer, std::span<const Sample> candidates, int t,
                                 Condition c, int kappa, int gate_t) {
    if (candidates.size() < 2) throw std::invalid_argument("label_candidates needs at least two candidates");
    CandidateLabels out;
    if (gate_t > kappa) {
        out.tie_all = true;
        return out;
    }
    out.scores.reserve(candidates.size());
    for (const auto& x : candidates) out.scores.push_back(scorer.score(x, t, c));
    std::tie(out.win, out.lose) = extreme_indices(out.scores);
    return out;
}

std::vector<CleanPair> generate_clean_pairs(const DenoiserParams& base, const NoiseSchedule& sched,
                                            const SamplerGrid& grid, double guidance, const OracleSpec& oracle,
                                            std::size_t n, RngStream& rng) {
    std::vector<CleanPair> pairs(n);
    for (std::size_t i = 0; i < n; ++i) {
        RngStream r = rng.derive(i);
        CleanPair& p = pairs[i];
        p.c = Condition(static_cast<int>(i % static_cast<std::size_t>(oracle.num_classes())));
        p.a = rollout(base, p.c, grid, guidance, sched, r).back();
        p.b = rollout(base, p.c, grid, guidance, sched, r).back();
        p.label = oracle_label(p.a, p.b, p.c, oracle);
    }
    return pairs;
}

}  // namespace spo
