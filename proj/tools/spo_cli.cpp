// spo: command-line front end.
//
//   spo pretrain     --seed 1 --workspace runs/a
//   spo train-scorer --config exp.json
//   spo spo | baseline | ablate --config exp.json
//   spo eval --config exp.json --checkpoint spo/final.ckpt --reference base.ckpt
//
// Exit codes: 0 ok, 2 configuration error, 3 numeric or training failure,
// 4 I/O or checkpoint format error.

#include <cstdio>
#include <iostream>
#include <optional>
#include <string>

#include <CLI11.hpp>

#include "spo/baselines.hpp"
#include "spo/config.hpp"
#include "spo/errors.hpp"
#include "spo/harness.hpp"

namespace {

struct Globals {
    std::string config_path;
    std::optional<std::uint64_t> seed;
    std::string workspace;
    std::optional<int> threads;
};

spo::ExperimentConfig resolve_config(const Globals& g) {
    spo::ExperimentConfig c = g.config_path.empty() ? spo::parse_config(nlohmann::json::object())
                                                    : spo::load_config(g.config_path);
    if (g.seed) {
        c.seed = *g.seed;
        c.spo.train.seed = *g.seed;
    }
    if (!g.workspace.empty()) c.workspace = g.workspace;
    if (g.threads) {
        if (*g.threads < 1) throw spo::ConfigError("--threads must be >= 1");
        c.threads = *g.threads;
    }
    return c;
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"Step-aware preference optimization on a toy conditional diffusion task"};
    app.require_subcommand(1);
    Globals g;
    app.add_option("--config", g.config_path, "experiment config (JSON)");
    app.add_option("--seed", g.seed, "master seed, overrides the config");
    app.add_option("--workspace", g.workspace, "output directory, overrides the config");
    app.add_option("--threads", g.threads, "worker threads for rollouts");

    auto* pretrain = app.add_subcommand("pretrain", "train the base denoiser");
    auto* scorer = app.add_subcommand("train-scorer", "train a preference scorer on base rollouts");
    auto* spo_cmd = app.add_subcommand("spo", "fine-tune the base with step-aware preference optimization");
    auto* baseline = app.add_subcommand("baseline", "fine-tune with a trajectory-level DPO baseline");
    auto* eval = app.add_subcommand("eval", "oracle reward and paired win-rate of a checkpoint");
    auto* ablate = app.add_subcommand("ablate", "run one ablation axis");
    for (auto* sub : {pretrain, scorer, spo_cmd, baseline, eval, ablate}) sub->fallthrough();

    std::optional<std::string> kind, checkpoint, reference, axis;
    baseline->add_option("--kind", kind, "d3po or diffusion_dpo");
    eval->add_option("--checkpoint", checkpoint, "checkpoint to evaluate");
    eval->add_option("--reference", reference, "reference checkpoint for the win-rate");
    ablate->add_option("--axis", axis, "resampler, scorer_kind, k, inner_steps, kappa or pair_choice");

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        const int code = app.exit(e);
        return code == 0 ? 0 : 2;
    }

    try {
        spo::ExperimentConfig c = resolve_config(g);
        if (kind) {
            spo::parse_baseline_kind(*kind);
            c.baseline.kind = *kind;
        }
        if (checkpoint) c.eval.checkpoint = *checkpoint;
        if (reference) c.eval.reference = *reference;
        if (axis) c.ablate.axis = spo::parse_ablation_axis(*axis);

        std::ostream& log = std::cerr;
        if (pretrain->parsed()) {
            std::cout << spo::run_pretrain(c, log).string() << std::endl;
        } else if (scorer->parsed()) {
            std::cout << spo::run_train_scorer(c, log).string() << std::endl;
        } else if (spo_cmd->parsed()) {
            std::cout << spo::run_spo(c, log).string() << std::endl;
        } else if (baseline->parsed()) {
            std::cout << spo::run_baseline(c, log).string() << std::endl;
        } else if (eval->parsed()) {
            const auto r = spo::run_eval(c, std::cout);
            (void)r;
            std::cout << c.resolve(c.eval.output).string() << std::endl;
        } else if (ablate->parsed()) {
            spo::run_ablation(c, log);
            std::cout << c.resolve(c.ablate.output).string() << std::endl;
        }
    } catch (const spo::ConfigError& e) {
        std::cerr << "config error: " << e.what() << "\n";
        return 2;
    } catch (const spo::NumericError& e) {
        std::cerr << "numeric error: " << e.what() << "\n";
        return 3;
    } catch (const spo::IoError& e) {
        std::cerr << "I/O error: " << e.what() << "\n";
        return 4;
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 1;
    }
    return 0;
}
