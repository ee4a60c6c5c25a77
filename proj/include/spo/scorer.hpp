#pragma once

// Timestep-conditioned preference scorer.
//
// score(x, t, c) = <f(x, t), e_c>, where e_c is a learned per-label
// embedding and f is an MLP whose hidden activations are layer-normalized
// and then modulated as n * (1 + gamma_l(t)) + shift_l(t), with
// (gamma_l, shift_l) a linear map of the sinusoidal embedding of t. The
// modulation layers start at zero. With time conditioning disabled the
// modulation is skipped entirely, so the score ignores t.

#include <cstddef>
#include <memory>
#include <span>
#include <vector>

#include "spo/denoiser.hpp"
#include "spo/nn.hpp"
#include "spo/preference.hpp"
#include "spo/rng.hpp"
#include "spo/schedule.hpp"

namespace spo {

struct ScorerArch {
    int data_dim = 2;
    int num_classes = 4;
    int embed_dim = 16;
    int time_dim = 64;
    int hidden = 64;
    int depth = 2;
    bool time_conditioned = true;

    friend bool operator==(const ScorerArch&, const ScorerArch&) = default;
};

class ScorerParams {
public:
    ScorerParams() = default;
    explicit ScorerParams(const ScorerArch& arch, double tau = 1.0);
    static ScorerParams initialized(const ScorerArch& arch, RngStream& rng, double tau = 1.0);

    const ScorerArch& arch() const { return arch_; }
    double tau() const { return tau_; }
    std::span<const double> weights() const { return weights_; }
    std::span<double> weights() { return weights_; }
    std::size_t size() const { return weights_.size(); }

    std::size_t embed_offset() const { return embed_offset_; }
    const std::vector<nn::Dense>& layers() const { return layers_; }
    const std::vector<nn::Dense>& modulation() const { return modulation_; }

    friend bool operator==(const ScorerParams& a, const ScorerParams& b) {
        return a.arch_ == b.arch_ && a.tau_ == b.tau_ && a.weights_ == b.weights_;
    }

private:
    ScorerArch arch_;
    double tau_ = 1.0;
    std::size_t embed_offset_ = 0;
    std::vector<nn::Dense> layers_;      // depth hidden layers then the output layer
    std::vector<nn::Dense> modulation_;  // one per hidden layer, time_dim -> 2 * hidden
    std::vector<double> weights_;
};

struct ScorerTrace {
    Condition cond;
    std::vector<double> input;
    std::vector<double> temb;
    std::vector<std::vector<double>> pre;    // dense output
    std::vector<std::vector<double>> normed; // layer-normalized
    std::vector<double> inv_std;
    std::vector<std::vector<double>> mod;    // [gamma, shift]
    std::vector<std::vector<double>> act;    // modulated, pre-SiLU
    std::vector<std::vector<double>> post;   // SiLU output
    std::vector<double> feature;             // f(x, t)
};

// Raw network score on an already preprocessed input.
double scorer_forward(const ScorerParams& params, std::span<const double> x, int t, Condition c);
double scorer_forward(const ScorerParams& params, std::span<const double> x, int t, Condition c,
                      ScorerTrace& trace);
void scorer_backward(const ScorerParams& params, const ScorerTrace& trace, double d_score,
                     std::span<double> grad);

// A scorer plus the preprocessing applied to noisy inputs: with
// use_x0_estimate the network sees estimate_x0(x0_estimator, x_t, t, c)
// instead of x_t. The estimator is the frozen base denoiser.
struct PreferenceScorer {
    ScorerParams params;
    std::shared_ptr<const DenoiserParams> x0_estimator;
    NoiseSchedule sched = NoiseSchedule::linear();
    bool use_x0_estimate = true;

    Sample preprocess(std::span<const double> x_t, int t, Condition c) const;
    double score(std::span<const double> x_t, int t, Condition c) const;
};

struct ScorerTrainConfig {
    ScorerArch arch;
    double tau = 1.0;
    bool use_x0_estimate = true;
    long steps = 3000;
    int batch = 64;
    double lr = 2e-3;
    double validation_fraction = 0.1;
    int validation_draws = 4;  // noise draws per held-out pair per band

    friend bool operator==(const ScorerTrainConfig&, const ScorerTrainConfig&) = default;
};

struct BandAccuracy {
    int lo = 0;
    int hi = 0;
    double accuracy = 0.0;
    std::size_t n = 0;
};

struct ScorerTrainResult {
    PreferenceScorer scorer;
    std::vector<BandAccuracy> validation;  // bands of width 250 over [0, T_max]
    std::vector<double> loss_curve;
};

// Loss of one labeled noisy pair at timestep t (already preprocessed inputs);
// accumulates the gradient into grad when non-empty.
double pair_preference_loss(const ScorerParams& params, std::span<const double> a, std::span<const double> b,
                            int t, Condition c, PreferenceLabel label, std::span<double> grad = {});

// Splits pairs into train / held-out, trains with Adam on noised pairs with
// t ~ U[0, T_max], and reports held-out accuracy per noise band. The
// architecture's time_conditioned flag selects step-aware or step-agnostic.
ScorerTrainResult train_preference_scorer(std::span<const CleanPair> pairs, const NoiseSchedule& sched,
                                          std::shared_ptr<const DenoiserParams> base,
                                          const ScorerTrainConfig& config, RngStream& rng);

ScorerTrainResult train_step_aware(std::span<const CleanPair> pairs, const NoiseSchedule& sched,
                                   std::shared_ptr<const DenoiserParams> base, ScorerTrainConfig config,
                                   RngStream& rng);
ScorerTrainResult train_step_agnostic(std::span<const CleanPair> pairs, const NoiseSchedule& sched,
                                      std::shared_ptr<const DenoiserParams> base, ScorerTrainConfig config,
                                      RngStream& rng);

// Held-out accuracy on non-tied pairs for timesteps drawn uniformly from each band.
std::vector<BandAccuracy> band_accuracy(const PreferenceScorer& scorer, std::span<const CleanPair> pairs,
                                        const std::vector<std::pair<int, int>>& bands, int draws, RngStream& rng);

std::vector<std::pair<int, int>> default_bands(int t_max, int width = 250);

// Outcome of ranking a candidate set.
struct CandidateLabels {
    bool tie_all = false;
    std::size_t win = 0;
    std::size_t lose = 0;
    std::vector<double> scores;
};

// TIE_ALL when gate_t > kappa. Otherwise scores every candidate at timestep
// t and returns the argmax / argmin; equal scores resolve to the lowest
// index for the winner and the highest index for the loser.
CandidateLabels label_candidates(const PreferenceScorer& scorer, std::span<const Sample> candidates, int t,
                                 Condition c, int kappa, int gate_t);
inline CandidateLabels label_candidates(const PreferenceScorer& scorer, std::span<const Sample> candidates,
                                        int t, Condition c, int kappa) {
    return label_candidates(scorer, candidates, t, c, kappa, t);
}

// Argmax / argmin over precomputed scores with the same tie-break.
std::pair<std::size_t, std::size_t> extreme_indices(std::span<const double> scores);

// Two independent base-model rollouts per pair, labeled by the oracle.
// Conditions cycle through the labels.
std::vector<CleanPair> generate_clean_pairs(const DenoiserParams& base, const NoiseSchedule& sched,
                                            const SamplerGrid& grid, double guidance, const OracleSpec& oracle,
                                            std::size_t n, RngStream& rng);

}  // namespace spo
