#pragma once

// Experiment configuration: one JSON document with a section per command.
//
//   {
//     "seed": 1,                       required (or --seed)
//     "workspace": "runs/a",           outputs and relative paths live here
//     "threads": 1,
//     "oracle":   { "mode_std", "tie_margin" },
//     "pretrain": { ... PretrainConfig, schedule, data, "output" },
//     "scorer":   { "base", "kind", "pairs", ... ScorerTrainConfig, "output", "report" },
//     "spo":      { "base", "scorer", ... every SpoConfig field but seed, "run_dir" },
//     "baseline": { "kind", "offline_pairs", "terms_per_batch", "run_dir" },
//     "eval":     { "checkpoint", "reference", "rollouts", ..., "output" },
//     "ablate":   { "axis", "budget", "max_epochs", "agnostic_scorer", "output" }
//   }
//
// Every key is optional except "seed" and, for `eval`, "eval.checkpoint".
// Unknown keys are rejected. The baseline trainers take their shared knobs
// (beta, lr, grid, budget, ...) from the "spo" section.

#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>

#include <json.hpp>

#include "spo/evaluation.hpp"
#include "spo/preference.hpp"
#include "spo/pretrain.hpp"
#include "spo/scorer.hpp"
#include "spo/spo.hpp"
#include "spo/synthetic.hpp"

namespace spo {

enum class ScorerKind { StepAware, StepAgnostic };
std::string to_string(ScorerKind k);
ScorerKind parse_scorer_kind(const std::string& s);

enum class AblationAxis { Resampler, ScorerKind, K, InnerSteps, Kappa, PairChoice };
std::string to_string(AblationAxis a);
AblationAxis parse_ablation_axis(const std::string& s);

struct PretrainSection {
    PretrainConfig train;
    SyntheticDataSpec data;
    int t_max = 1000;
    double beta_start = 1e-4;
    double beta_end = 2e-2;
    std::string output = "base.ckpt";
    std::string metrics = "pretrain_metrics.csv";

    friend bool operator==(const PretrainSection&, const PretrainSection&) = default;
};

struct ScorerSection {
    std::string base = "base.ckpt";
    ScorerKind kind = ScorerKind::StepAware;
    long pairs = 20000;  // clean pairs from base rollouts, before the validation split
    ScorerTrainConfig train;
    std::string output = "scorer.ckpt";
    std::string report = "scorer_report.csv";

    friend bool operator==(const ScorerSection&, const ScorerSection&) = default;
};

struct SpoSection {
    std::string base = "base.ckpt";
    std::string scorer = "scorer.ckpt";
    SpoConfig train;  // train.seed mirrors the top-level seed
    std::string run_dir = "spo";

    friend bool operator==(const SpoSection&, const SpoSection&) = default;
};

struct BaselineSection {
    std::string kind = "d3po";
    int offline_pairs = 4000;
    int terms_per_batch = 224;
    std::string run_dir;  // empty: the kind name

    friend bool operator==(const BaselineSection&, const BaselineSection&) = default;
};

struct EvalSection {
    std::optional<std::string> checkpoint;
    std::optional<std::string> reference;
    EvalSettings settings;
    std::string output = "eval.csv";

    friend bool operator==(const EvalSection&, const EvalSection&) = default;
};

struct AblateSection {
    AblationAxis axis = AblationAxis::Resampler;
    long budget = 2000;     // gradient-bearing pairs per cell
    int max_epochs = 1000;  // safety cap, the budget normally ends training first
    std::string agnostic_scorer = "scorer_agnostic.ckpt";
    std::string output = "ablation.csv";

    friend bool operator==(const AblateSection&, const AblateSection&) = default;
};

struct ExperimentConfig {
    std::optional<std::uint64_t> seed;
    std::string workspace = ".";
    int threads = 1;
    OracleSpec oracle;
    PretrainSection pretrain;
    ScorerSection scorer;
    SpoSection spo;
    BaselineSection baseline;
    EvalSection eval;
    AblateSection ablate;

    friend bool operator==(const ExperimentConfig&, const ExperimentConfig&) = default;

    // Throws ConfigError("missing required key 'seed'") when unset.
    std::uint64_t require_seed() const;
    // Relative paths resolve against the workspace.
    std::filesystem::path resolve(const std::string& p) const;
};

// Throws ConfigError naming the offending key.
ExperimentConfig parse_config(const nlohmann::json& j);
ExperimentConfig load_config(const std::filesystem::path& path);
nlohmann::json serialize_config(const ExperimentConfig& c);

std::uint64_t fnv1a64(std::string_view bytes);
// FNV-1a of the canonical (sorted-key, compact) JSON text, without
// "workspace" and "threads".
std::string config_hash(const ExperimentConfig& c);

}  // namespace spo
