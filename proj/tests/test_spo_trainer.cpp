#include <doctest.h>

#include <cmath>
#include <set>

#include "spo/diffusion.hpp"
#include "spo/errors.hpp"
#include "spo/spo.hpp"
#include "support.hpp"

using namespace spo;
using doctest::Approx;

namespace {

const NoiseSchedule& sched() {
    static const NoiseSchedule s = NoiseSchedule::linear();
    return s;
}

PreferenceScorer tiny_scorer(std::uint64_t seed = 1) {
    PreferenceScorer sc;
    sc.params = test::random_scorer(test::tiny_scorer_arch(true), seed);
    sc.use_x0_estimate = false;
    return sc;
}

// Pairs on consecutive grid steps with positive transition variance.
std::vector<StepPreferencePair> random_pairs(std::size_t n, std::uint64_t seed, bool with_loser_parent = false) {
    RngStream rng(seed);
    const auto g = SamplerGrid::uniform(1000, 20, 1.0);
    std::vector<StepPreferencePair> out;
    for (std::size_t i = 0; i < n; ++i) {
        StepPreferencePair p;
        const std::size_t k = rng.index(19);
        p.t_from = g.timesteps[k];
        p.t_to = g.timesteps[k + 1];
        p.parent = rng.normal_vector(2);
        p.x_w = rng.normal_vector(2);
        p.x_l = rng.normal_vector(2);
        if (with_loser_parent && i % 2) p.loser_parent = rng.normal_vector(2);
        p.c = Condition(static_cast<int>(i % 4));
        out.push_back(std::move(p));
    }
    return out;
}

// Winner and loser drawn from the model's own transition, as in a rollout.
void resample_children(std::vector<StepPreferencePair>& pairs, const DenoiserParams& model, const SpoConfig& cfg,
                       std::uint64_t seed) {
    RngStream rng(seed);
    for (auto& p : pairs) {
        const auto tw = ddim_transition(model, p.parent, p.t_from, p.t_to, p.c, cfg.guidance, cfg.eta, sched());
        const auto tl = ddim_transition(model, p.parent_l(), p.t_from, p.t_to, p.c, cfg.guidance, cfg.eta, sched());
        p.x_w = sample_step(tw, rng);
        p.x_l = sample_step(tl, rng);
    }
}

DenoiserParams perturbed(const DenoiserParams& p, std::uint64_t seed, double scale) {
    DenoiserParams q = p;
    RngStream rng(seed);
    for (auto& w : q.weights()) w += scale * rng.normal();
    return q;
}

}  // namespace

TEST_SUITE("spo_trainer") {

TEST_CASE("config validation") {
    SpoConfig c;
    CHECK_NOTHROW(c.validate(1000));
    c.beta = 0.0;
    CHECK_THROWS_AS(c.validate(1000), ConfigError);
    c = {};
    c.kappa = 1001;
    CHECK_THROWS_AS(c.validate(1000), ConfigError);
    c = {};
    c.inner_steps = 21;
    CHECK_THROWS_AS(c.validate(1000), ConfigError);
    c = {};
    c.k = 0;
    CHECK_THROWS_AS(c.validate(1000), ConfigError);
    CHECK(parse_resampler("none") == Resampler::None);
    CHECK(parse_pair_choice("random_pair") == PairChoice::RandomPair);
    CHECK_THROWS_AS(parse_resampler("best"), ConfigError);
    for (auto r : {Resampler::None, Resampler::Win, Resampler::Lose, Resampler::Random})
        CHECK(parse_resampler(to_string(r)) == r);
}

TEST_CASE("dpo_pair_loss is ln 2 when policy equals reference") {
    const auto p = test::random_denoiser(test::tiny_arch(), 3);
    SpoConfig cfg;
    for (const auto& pair : random_pairs(100, 5, true)) {
        CHECK(std::abs(dpo_pair_loss(p, p, pair, cfg, sched()) - std::log(2.0)) <= 1e-9);
    }
    const auto pairs = random_pairs(50, 6);
    CHECK(std::abs(spo_batch_loss_detail(p, p, pairs, cfg, sched()).loss - std::log(2.0)) <= 1e-9);
}

TEST_CASE("dpo_pair_loss limits and the swap identity") {
    const auto ref = test::random_denoiser(test::tiny_arch(), 3);
    const auto pol = perturbed(ref, 4, 0.05);
    SpoConfig cfg;
    cfg.beta = 1e-12;
    for (const auto& pair : random_pairs(20, 7)) CHECK(std::abs(dpo_pair_loss(pol, ref, pair, cfg, sched()) - std::log(2.0)) < 1e-9);
    cfg.beta = 10.0;
    int nonzero = 0;
    for (auto pair : random_pairs(50, 8, true)) {
        const double u = dpo_margin(pol, ref, pair, cfg, sched());
        const double loss = dpo_pair_loss(pol, ref, pair, cfg, sched());
        CHECK(loss == Approx(std::log1p(std::exp(-u))).epsilon(1e-12));
        std::swap(pair.x_w, pair.x_l);
        if (pair.loser_parent) std::swap(pair.parent, *pair.loser_parent);
        const double swapped = dpo_pair_loss(pol, ref, pair, cfg, sched());
        CHECK(dpo_margin(pol, ref, pair, cfg, sched()) == Approx(-u).epsilon(1e-12));
        // -log sigma(-u) = u - log sigma(u)
        CHECK(swapped - loss == Approx(u).epsilon(1e-9).scale(1.0));
        nonzero += std::abs(u) > 1e-6;
    }
    CHECK(nonzero > 40);
}

TEST_CASE("tied pairs contribute nothing") {
    const auto ref = test::random_denoiser(test::tiny_arch(), 3);
    const auto pol = perturbed(ref, 4, 0.05);
    SpoConfig cfg;
    RolloutBatch b;
    b.pairs = random_pairs(10, 9);
    for (auto& p : b.pairs) p.tied = true;
    CHECK(spo_batch_loss(pol, ref, b, cfg, sched()) == 0.0);
    for (double g : loss_gradient(pol, ref, b, cfg, sched())) CHECK(g == 0.0);
    CHECK(b.tied() == 10);
    CHECK(b.untied() == 0);
}

TEST_CASE("batch loss is the mean of per-pair losses over untied pairs") {
    const auto ref = test::random_denoiser(test::tiny_arch(), 3);
    const auto pol = perturbed(ref, 4, 0.05);
    SpoConfig cfg;
    RolloutBatch b;
    b.pairs = random_pairs(30, 10, true);
    for (std::size_t i = 0; i < b.pairs.size(); i += 3) b.pairs[i].tied = true;
    double sum = 0.0;
    int n = 0;
    for (const auto& p : b.pairs) {
        if (p.tied) continue;
        sum += dpo_pair_loss(pol, ref, p, cfg, sched());
        ++n;
    }
    CHECK(spo_batch_loss(pol, ref, b, cfg, sched()) == Approx(sum / n).epsilon(1e-13));
}

TEST_CASE("loss_gradient matches finite differences (width 8)") {
    const auto ref = test::random_denoiser(test::tiny_arch(8, 2), 21);
    for (int inst = 0; inst < 10; ++inst) {
        auto pol = perturbed(ref, 30 + inst, 0.02);
        SpoConfig cfg;
        cfg.guided_logprob = inst % 2 == 0;
        RolloutBatch b;
        b.pairs = random_pairs(10, 40 + inst, true);
        resample_children(b.pairs, ref, cfg, 60 + inst);
        const auto grad = loss_gradient(pol, ref, b, cfg, sched());
        const double err = test::fd_relative_error(
            pol.weights(), [&] { return spo_batch_loss(pol, ref, b, cfg, sched()); }, grad);
        CHECK(err <= 1e-3);
    }
}

TEST_CASE("gradient at initialization: hand derivation on the output bias") {
    // With a zero output layer the noise estimate is exactly the output bias
    // b (guided or not), so the transition mean is x_coef x + eps_coef b and
    // policy = reference at b = 0. For u = beta (ratio_w - ratio_l):
    //   d ratio(x) / d b = eps_coef (x - mean) / sigma^2
    //   d loss / d u = -sigmoid(-u) = -1/2 at u = 0
    // so d loss / d b_i = -(beta / 2) eps_coef (x_w - x_l)_i / sigma^2.
    RngStream rng(2);
    const auto p = DenoiserParams::initialized(test::tiny_arch(), rng, true);
    const std::size_t bias = p.layers().back().bias_offset();
    for (double beta : {1.0, 10.0}) {
        SpoConfig cfg;
        cfg.beta = beta;
        RolloutBatch b;
        b.pairs = random_pairs(1, 50 + static_cast<std::uint64_t>(beta));
        const auto& pr = b.pairs[0];
        const auto k = transition_coeffs(sched(), pr.t_from, pr.t_to, cfg.eta);
        const auto grad = loss_gradient(p, p, b, cfg, sched());
        for (std::size_t i = 0; i < 2; ++i) {
            const double hand = -(beta / 2.0) * k.eps_coef * (pr.x_w[i] - pr.x_l[i]) / (k.std * k.std);
            CHECK(grad[bias + i] == Approx(hand).epsilon(1e-10));
        }
    }
}

TEST_CASE("sample_candidates") {
    const auto pol = test::random_denoiser(test::tiny_arch(), 3);
    const Sample x{0.3, -0.2};
    SpoConfig cfg;
    RngStream rng(1);
    const auto cs = sample_candidates(pol, x, 0, Condition(1), cfg, sched(), rng);
    REQUIRE(cs.candidates.size() == 4);
    CHECK(cs.parent == x);
    CHECK(cs.t_from == 1000);
    CHECK(cs.t_to == 950);
    const auto tr = ddim_transition(pol, x, 1000, 950, Condition(1), cfg.guidance, cfg.eta, sched());
    for (std::size_t i = 0; i < 4; ++i) {
        CHECK(cs.first_steps[i].transition.mean == tr.mean);
        CHECK(cs.first_steps[i].transition.std == tr.std);
        CHECK(cs.first_steps[i].sample == cs.candidates[i]);
        for (std::size_t j = i + 1; j < 4; ++j) CHECK(squared_distance(cs.candidates[i], cs.candidates[j]) > 0.0);
    }

    cfg.k = 1;
    CHECK(sample_candidates(pol, x, 3, Condition(1), cfg, sched(), rng).candidates.size() == 1);

    cfg.k = 3;
    cfg.eta = 0.0;
    const auto det = sample_candidates(pol, x, 2, Condition(0), cfg, sched(), rng);
    CHECK(det.candidates[0] == det.candidates[1]);
    CHECK(det.candidates[1] == det.candidates[2]);

    cfg = {};
    cfg.inner_steps = 4;
    const auto multi = sample_candidates(pol, x, 4, Condition(2), cfg, sched(), rng);
    CHECK(multi.t_from == 800);
    CHECK(multi.t_to == 600);
    CHECK(multi.first_steps[0].t_to == 750);
    CHECK(multi.candidates[0] != multi.first_steps[0].sample);
    CHECK_THROWS_AS(sample_candidates(pol, x, 17, Condition(2), cfg, sched(), rng), ConfigError);
}

TEST_CASE("resample_next") {
    CandidateSet cs;
    cs.candidates = {{0.0}, {1.0}, {2.0}, {3.0}};
    RngStream rng(4);
    CHECK(resample_next(cs, 2, 0, Resampler::Win, rng) == Sample{2.0});
    CHECK(resample_next(cs, 2, 0, Resampler::Lose, rng) == Sample{0.0});
    CandidateSet one;
    one.candidates = {{7.0}};
    for (auto r : {Resampler::Win, Resampler::Lose, Resampler::Random})
        CHECK(resample_next(one, std::nullopt, std::nullopt, r, rng) == Sample{7.0});
    // Win without labels falls back to the random draw.
    RngStream a(9), b(9);
    CHECK(resample_next(cs, std::nullopt, std::nullopt, Resampler::Win, a) ==
          resample_next(cs, std::nullopt, std::nullopt, Resampler::Random, b));
    int counts[4] = {0, 0, 0, 0};
    RngStream r(10);
    const int n = 10000;
    for (int i = 0; i < n; ++i) counts[static_cast<int>(resample_next(cs, 1, 2, Resampler::Random, r)[0])]++;
    for (int c : counts) CHECK(std::abs(c / double(n) - 0.25) <= 0.02);
}

TEST_CASE("collect_rollout: counts per prompt") {
    const auto pol = test::random_denoiser(test::tiny_arch(), 3);
    const auto sc = tiny_scorer();
    const std::vector<Condition> prompts{Condition(0), Condition(1), Condition(2)};
    for (int j = 1; j <= 6; ++j) {
        SpoConfig cfg;
        cfg.inner_steps = j;
        const auto b = collect_rollout(pol, prompts, sc, cfg, sched(), RngStream(1));
        CHECK(b.pairs.size() == prompts.size() * static_cast<std::size_t>(20 / j));
        for (std::size_t i = 0; i < b.pairs.size(); ++i) CHECK(b.pairs[i].prompt == i / static_cast<std::size_t>(20 / j));
    }
    SpoConfig cfg;
    cfg.kappa = 0;
    const auto all_tied = collect_rollout(pol, prompts, sc, cfg, sched(), RngStream(1));
    CHECK(all_tied.untied() == 0);
    cfg.k = 1;
    cfg.kappa = 1000;
    CHECK(collect_rollout(pol, prompts, sc, cfg, sched(), RngStream(1)).untied() == 0);
}

TEST_CASE("collect_rollout: kappa gating and tie monotonicity") {
    const auto pol = test::random_denoiser(test::tiny_arch(), 3);
    const auto sc = tiny_scorer();
    const std::vector<Condition> prompts{Condition(0), Condition(3)};
    std::size_t prev = 0;
    for (int kappa : {0, 100, 250, 500, 750, 900, 1000}) {
        SpoConfig cfg;
        cfg.kappa = kappa;
        const auto b = collect_rollout(pol, prompts, sc, cfg, sched(), RngStream(2));
        CHECK(b.untied() >= prev);
        prev = b.untied();
        for (const auto& p : b.pairs) {
            if (p.t_from > kappa || p.t_to == 0) CHECK(p.tied);
            else CHECK_FALSE(p.tied);
        }
    }
    // Default: steps from 1000..800 are gated and the final step into 0 has no variance.
    SpoConfig cfg;
    const auto b = collect_rollout(pol, prompts, sc, cfg, sched(), RngStream(2));
    CHECK(b.untied() == prompts.size() * 14);
}

TEST_CASE("collect_rollout: shared latent, resampling and best-worst dominance") {
    const auto pol = test::random_denoiser(test::tiny_arch(), 3);
    const auto sc = tiny_scorer();
    const std::vector<Condition> prompts{Condition(1), Condition(2)};
    for (auto res : {Resampler::Win, Resampler::Lose, Resampler::Random}) {
        SpoConfig cfg;
        cfg.resampler = res;
        cfg.kappa = 1000;
        const auto b = collect_rollout(pol, prompts, sc, cfg, sched(), RngStream(3));
        for (std::size_t i = 0; i < b.pairs.size(); ++i) {
            const auto& p = b.pairs[i];
            CHECK_FALSE(p.loser_parent.has_value());
            if (!p.tied) {
                CHECK(p.score_w >= p.score_l);
                CHECK(p.score_w == sc.score(p.x_w, p.t_to, p.c));
                CHECK(p.score_l == sc.score(p.x_l, p.t_to, p.c));
            }
            if (i + 1 < b.pairs.size() && b.pairs[i + 1].prompt == p.prompt && !p.tied) {
                const auto& next = b.pairs[i + 1].parent;
                if (res == Resampler::Win) CHECK(next == p.x_w);
                if (res == Resampler::Lose) CHECK(next == p.x_l);
            }
        }
    }
}

TEST_CASE("collect_rollout: no-resampler ablation uses separate parents") {
    const auto pol = test::random_denoiser(test::tiny_arch(), 3);
    const auto sc = tiny_scorer();
    const std::vector<Condition> prompts{Condition(1)};
    SpoConfig cfg;
    cfg.resampler = Resampler::None;
    cfg.kappa = 1000;
    const auto b = collect_rollout(pol, prompts, sc, cfg, sched(), RngStream(3));
    REQUIRE(b.pairs.size() == 20);
    // First step: all trajectories share x_T.
    CHECK(b.pairs[0].parent == b.pairs[0].parent_l());
    int distinct = 0;
    for (std::size_t i = 1; i < 19; ++i) distinct += b.pairs[i].parent != b.pairs[i].parent_l();
    CHECK(distinct > 10);
}

TEST_CASE("collect_rollout: random pairs are ordered by score") {
    const auto pol = test::random_denoiser(test::tiny_arch(), 3);
    const auto sc = tiny_scorer();
    const std::vector<Condition> prompts{Condition(0), Condition(1)};
    SpoConfig cfg;
    cfg.pair_choice = PairChoice::RandomPair;
    cfg.kappa = 1000;
    const auto b = collect_rollout(pol, prompts, sc, cfg, sched(), RngStream(4));
    for (const auto& p : b.pairs) {
        if (p.tied) continue;
        CHECK(p.score_w >= p.score_l);
        CHECK(p.x_w != p.x_l);
    }
}

TEST_CASE("collect_rollout is deterministic and independent of the thread count") {
    const auto pol = test::random_denoiser(test::tiny_arch(), 3);
    const auto sc = tiny_scorer();
    const auto prompts = balanced_conditions(8, 4);
    SpoConfig cfg;
    const auto a = collect_rollout(pol, prompts, sc, cfg, sched(), RngStream(5), 1);
    const auto b = collect_rollout(pol, prompts, sc, cfg, sched(), RngStream(5), 3);
    REQUIRE(a.pairs.size() == b.pairs.size());
    for (std::size_t i = 0; i < a.pairs.size(); ++i) {
        CHECK(a.pairs[i].parent == b.pairs[i].parent);
        CHECK(a.pairs[i].x_w == b.pairs[i].x_w);
        CHECK(a.pairs[i].x_l == b.pairs[i].x_l);
        CHECK(a.pairs[i].tied == b.pairs[i].tied);
    }
}

TEST_CASE("spo_train: zero epochs, first loss, determinism, budget") {
    const auto base = test::random_denoiser(test::tiny_arch(), 3);
    const auto sc = tiny_scorer();
    const OracleSpec oracle;
    SpoConfig cfg;
    cfg.epochs = 0;
    CHECK(spo_train(base, sc, cfg, oracle, sched()).policy == base);

    cfg.epochs = 2;
    cfg.prompts_per_epoch = 8;
    cfg.batch_size = 4;
    cfg.eval_rollouts = 8;
    cfg.seed = 3;
    int epochs_seen = 0;
    TrainHooks hooks;
    hooks.on_epoch_end = [&](int, const DenoiserParams&) { ++epochs_seen; };
    const auto r1 = spo_train(base, sc, cfg, oracle, sched(), hooks);
    const auto r2 = spo_train(base, sc, cfg, oracle, sched());
    CHECK(epochs_seen == 2);
    REQUIRE(r1.log.size() == 4);
    CHECK(r1.log[0].loss == Approx(std::log(2.0)).epsilon(1e-12));
    CHECK(r1.log[0].tied_fraction == Approx(0.3));
    CHECK_FALSE(r1.log[0].mean_oracle_reward_eval.has_value());
    CHECK(r1.log[1].mean_oracle_reward_eval.has_value());
    CHECK(r1.policy == r2.policy);
    CHECK_FALSE(r1.policy == base);
    CHECK(r1.gradient_pairs == 8 * 2 * 14);

    cfg.pair_budget = 60;
    const auto r3 = spo_train(base, sc, cfg, oracle, sched());
    CHECK(r3.updates == 2);  // 56 pairs after one update, 112 after two
    CHECK(r3.gradient_pairs >= 60);
}

TEST_CASE("spo_train aborts with a diagnostic hook on divergence") {
    const auto base = test::random_denoiser(test::tiny_arch(), 3);
    const auto sc = tiny_scorer();
    SpoConfig cfg;
    cfg.epochs = 5;
    cfg.prompts_per_epoch = 4;
    cfg.batch_size = 4;
    cfg.eval_rollouts = 0;
    cfg.lr = 1e300;
    bool aborted = false;
    TrainHooks hooks;
    hooks.on_abort = [&](const DenoiserParams&) { aborted = true; };
    CHECK_THROWS_AS(spo_train(base, sc, cfg, OracleSpec{}, sched(), hooks), TrainingError);
    CHECK(aborted);
}

}  // TEST_SUITE
