#include "spo/harness.hpp"

#include <fcntl.h>
#include <sys/file.h>
#include <sys/stat.h>
#include <unistd.h>

#include <charconv>
#include <cmath>
#include <cstring>
#include <fstream>
#include <map>

#include "spo/baselines.hpp"
#include "spo/errors.hpp"
#include "spo/pretrain.hpp"
#include "spo/scorer.hpp"
#include "spo/spo.hpp"

namespace spo {

namespace fs = std::filesystem;

std::string csv_field(std::string_view s) {
    if (s.find_first_of(",\"\r\n") == std::string_view::npos) return std::string(s);
    std::string out = "\"";
    for (char ch : s) {
        if (ch == '"') out += '"';
        out += ch;
    }
    out += '"';
    return out;
}

std::string csv_row(const std::vector<std::string>& fields) {
    std::string out;
    for (std::size_t i = 0; i < fields.size(); ++i) {
        if (i) out += ',';
        out += csv_field(fields[i]);
    }
    out += "\r\n";
    return out;
}

std::string format_double(double v) {
    if (std::isnan(v)) return "nan";
    if (std::isinf(v)) return v > 0 ? "inf" : "-inf";
    char buf[64];
    auto [end, ec] = std::to_chars(buf, buf + sizeof buf, v);
    return std::string(buf, end);
}

namespace {

void ensure_dir(const fs::path& dir) {
    if (dir.empty()) return;
    std::error_code ec;
    fs::create_directories(dir, ec);
    if (ec) throw IoError("cannot create directory " + dir.string() + ": " + ec.message());
}

void write_all(int fd, const std::string& s, const fs::path& path) {
    std::size_t done = 0;
    while (done < s.size()) {
        const ssize_t n = ::write(fd, s.data() + done, s.size() - done);
        if (n < 0) throw IoError("write failed on " + path.string() + ": " + std::strerror(errno));
        done += static_cast<std::size_t>(n);
    }
}

std::string opt_field(const std::optional<double>& v) { return v ? format_double(*v) : ""; }

}  // namespace

void csv_create(const fs::path& path, const std::vector<std::string>& header) {
    ensure_dir(path.parent_path());
    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    if (!out) throw IoError("cannot write " + path.string());
    out << csv_row(header);
    if (!out) throw IoError("write failed on " + path.string());
}

void csv_append_locked(const fs::path& path, const std::vector<std::string>& header,
                       const std::vector<std::string>& row) {
    ensure_dir(path.parent_path());
    const int fd = ::open(path.c_str(), O_WRONLY | O_CREAT | O_APPEND | O_CLOEXEC, 0644);
    if (fd < 0) throw IoError("cannot open " + path.string() + ": " + std::strerror(errno));
    struct Closer {
        int fd;
        ~Closer() {
            ::flock(fd, LOCK_UN);
            ::close(fd);
        }
    } closer{fd};
    if (::flock(fd, LOCK_EX) != 0) throw IoError("cannot lock " + path.string() + ": " + std::strerror(errno));
    struct stat st{};
    if (::fstat(fd, &st) != 0) throw IoError("cannot stat " + path.string());
    std::string text = st.st_size == 0 ? csv_row(header) : std::string();
    text += csv_row(row);
    write_all(fd, text, path);
}

const std::vector<std::string> kTrainLogHeader = {"epoch", "batch", "loss", "tied_fraction",
                                                  "mean_oracle_reward_eval", "grad_norm"};
const std::vector<std::string> kScorerReportHeader = {"band_lo", "band_hi", "accuracy", "n"};
const std::vector<std::string> kEvalHeader = {"checkpoint", "reference", "n", "mean_reward",
                                              "std_reward", "win_rate", "tied_fraction"};
const std::vector<std::string> kAblationHeader = {"axis", "value", "config_hash", "seed", "gradient_pairs",
                                                  "updates", "mean_reward", "std_reward", "win_rate_vs_base", "n"};

std::vector<std::string> train_log_fields(const TrainLogRow& r) {
    return {std::to_string(r.epoch), std::to_string(r.batch), format_double(r.loss), format_double(r.tied_fraction),
            opt_field(r.mean_oracle_reward_eval), format_double(r.grad_norm)};
}

std::filesystem::path run_pretrain(const ExperimentConfig& c, std::ostream& log) {
    const std::uint64_t seed = c.require_seed();
    const auto& p = c.pretrain;
    const NoiseSchedule sched = NoiseSchedule::linear(p.t_max, p.beta_start, p.beta_end);
    RngStream rng(seed);
    const fs::path metrics = c.resolve(p.metrics);
    csv_create(metrics, {"step", "train_loss", "heldout_mse"});
    log << "pretraining denoiser for " << p.train.steps << " steps\n";
    const long every = std::max<long>(1, p.train.steps / 10);
    auto result = pretrain_denoiser(p.data, sched, p.train, rng, [&](long step, double loss) {
        if ((step + 1) % every == 0) log << "  step " << step + 1 << " loss " << loss << "\n";
    });
    {
        std::ofstream out(metrics, std::ios::binary | std::ios::app);
        out << csv_row({"0", "", format_double(result.initial_mse)});
        for (std::size_t i = 0; i < result.loss_curve.size(); ++i) {
            const bool last = i + 1 == result.loss_curve.size();
            out << csv_row({std::to_string(i + 1), format_double(result.loss_curve[i]),
                            last ? format_double(result.final_mse) : ""});
        }
        if (!out) throw IoError("write failed on " + metrics.string());
    }
    log << "held-out eps-MSE " << result.initial_mse << " -> " << result.final_mse << "\n";
    const fs::path ckpt = c.resolve(p.output);
    ensure_dir(ckpt.parent_path());
    save_denoiser(ckpt, result.params, sched, {"pretrain", seed, p.train.steps, {{"config_hash", config_hash(c)}}});
    return ckpt;
}

std::filesystem::path run_train_scorer(const ExperimentConfig& c, std::ostream& log) {
    const std::uint64_t seed = c.require_seed();
    const auto& s = c.scorer;
    const fs::path base_path = c.resolve(s.base);
    auto loaded = load_denoiser(base_path);
    auto base = std::make_shared<const DenoiserParams>(std::move(loaded.params));
    const RngStream root(seed);
    RngStream pair_rng = root.derive(0);
    RngStream train_rng = root.derive(1);
    const SamplerGrid grid = c.spo.train.grid(loaded.sched.t_max());
    log << "generating " << s.pairs << " oracle-labeled pairs from base rollouts\n";
    const auto pairs = generate_clean_pairs(*base, loaded.sched, grid, c.spo.train.guidance, c.oracle,
                                            static_cast<std::size_t>(s.pairs), pair_rng);
    log << "training " << to_string(s.kind) << " scorer for " << s.train.steps << " steps\n";
    ScorerTrainConfig tc = s.train;
    tc.arch.num_classes = base->arch().num_classes;
    tc.arch.data_dim = base->arch().data_dim;
    auto result = s.kind == ScorerKind::StepAware ? train_step_aware(pairs, loaded.sched, base, tc, train_rng)
                                                  : train_step_agnostic(pairs, loaded.sched, base, tc, train_rng);
    const fs::path report = c.resolve(s.report);
    csv_create(report, kScorerReportHeader);
    {
        std::ofstream out(report, std::ios::binary | std::ios::app);
        for (const auto& b : result.validation) {
            out << csv_row({std::to_string(b.lo), std::to_string(b.hi), format_double(b.accuracy), std::to_string(b.n)});
            log << "  band [" << b.lo << ", " << b.hi << "] accuracy " << b.accuracy << " (n=" << b.n << ")\n";
        }
        if (!out) throw IoError("write failed on " + report.string());
    }
    const fs::path ckpt = c.resolve(s.output);
    ensure_dir(ckpt.parent_path());
    const fs::path rel = fs::absolute(base_path).lexically_normal().lexically_relative(
        fs::absolute(ckpt).parent_path().lexically_normal());
    save_scorer(ckpt, result.scorer, rel.empty() ? base_path.string() : rel.string(),
                {to_string(s.kind), seed, s.train.steps, {{"config_hash", config_hash(c)}}});
    return ckpt;
}

namespace {

// Shared by spo and the baselines: log CSV, per-epoch and abort checkpoints.
struct RunArtifacts {
    fs::path dir;
    std::string trainer;
    std::uint64_t seed;
    std::string hash;
    const NoiseSchedule* sched;
    std::size_t rows = 0;

    TrainHooks hooks(std::ostream& log) {
        TrainHooks h;
        h.on_row = [this, &log](const TrainLogRow& r) {
            csv_append_locked(dir / "train_log.csv", kTrainLogHeader, train_log_fields(r));
            ++rows;
            log << "  epoch " << r.epoch << " batch " << r.batch << " loss " << r.loss << " tied "
                << r.tied_fraction;
            if (r.mean_oracle_reward_eval) log << " eval " << *r.mean_oracle_reward_eval;
            log << "\n";
        };
        h.on_epoch_end = [this](int epoch, const DenoiserParams& policy) {
            char name[32];
            std::snprintf(name, sizeof name, "epoch_%03d.ckpt", epoch);
            save_denoiser(dir / name, policy, *sched, {trainer, seed, epoch + 1, {{"config_hash", hash}}});
        };
        h.on_abort = [this](const DenoiserParams& policy) {
            save_denoiser(dir / "abort.ckpt", policy, *sched,
                          {trainer, seed, static_cast<long>(rows), {{"config_hash", hash}, {"diagnostic", true}}});
        };
        return h;
    }
};

void prepare_run_dir(const fs::path& dir, const ExperimentConfig& c) {
    ensure_dir(dir);
    std::error_code ec;
    fs::remove(dir / "train_log.csv", ec);
    csv_create(dir / "train_log.csv", kTrainLogHeader);
    std::ofstream out(dir / "config.json", std::ios::binary | std::ios::trunc);
    out << serialize_config(c).dump(2) << "\n";
    if (!out) throw IoError("cannot write " + (dir / "config.json").string());
}

}  // namespace

std::filesystem::path run_spo(const ExperimentConfig& c, std::ostream& log) {
    const std::uint64_t seed = c.require_seed();
    auto base = load_denoiser(c.resolve(c.spo.base));
    auto scorer = load_scorer(c.resolve(c.spo.scorer));
    SpoConfig cfg = c.spo.train;
    cfg.seed = seed;
    cfg.validate(base.sched.t_max());
    const fs::path dir = c.resolve(c.spo.run_dir);
    prepare_run_dir(dir, c);
    RunArtifacts art{dir, "spo", seed, config_hash(c), &base.sched};
    log << "SPO: " << cfg.epochs << " epochs of " << cfg.prompts_per_epoch << " prompts\n";
    auto result = spo_train(base.params, scorer.scorer, cfg, c.oracle, base.sched, art.hooks(log), c.threads);
    const fs::path ckpt = dir / "final.ckpt";
    save_denoiser(ckpt, result.policy, base.sched,
                  {"spo", seed, static_cast<long>(result.updates),
                   {{"config_hash", art.hash}, {"gradient_pairs", result.gradient_pairs}}});
    log << result.updates << " updates, " << result.gradient_pairs << " gradient-bearing pairs\n";
    return ckpt;
}

std::filesystem::path run_baseline(const ExperimentConfig& c, std::ostream& log) {
    const std::uint64_t seed = c.require_seed();
    const BaselineKind kind = parse_baseline_kind(c.baseline.kind);
    auto base = load_denoiser(c.resolve(c.spo.base));
    BaselineConfig bc;
    bc.spo = c.spo.train;
    bc.spo.seed = seed;
    bc.offline_pairs = c.baseline.offline_pairs;
    bc.diffusion_dpo_terms_per_batch = c.baseline.terms_per_batch;
    bc.spo.validate(base.sched.t_max());
    const fs::path dir = c.resolve(c.baseline.run_dir.empty() ? to_string(kind) : c.baseline.run_dir);
    prepare_run_dir(dir, c);
    RunArtifacts art{dir, to_string(kind), seed, config_hash(c), &base.sched};
    log << "baseline " << to_string(kind) << ": " << bc.spo.epochs << " epochs\n";
    auto result = baseline_train(kind, base.params, bc, c.oracle, base.sched, art.hooks(log), c.threads);
    const fs::path ckpt = dir / "final.ckpt";
    save_denoiser(ckpt, result.policy, base.sched,
                  {to_string(kind), seed, static_cast<long>(result.updates),
                   {{"config_hash", art.hash}, {"gradient_pairs", result.gradient_pairs}}});
    log << result.updates << " updates, " << result.gradient_pairs << " gradient-bearing pairs\n";
    return ckpt;
}

EvalReport run_eval(const ExperimentConfig& c, std::ostream& log) {
    if (!c.eval.checkpoint) throw ConfigError("missing required key 'eval.checkpoint'");
    const fs::path cand_path = c.resolve(*c.eval.checkpoint);
    auto cand = load_denoiser(cand_path);
    std::optional<LoadedDenoiser> ref;
    if (c.eval.reference) ref = load_denoiser(c.resolve(*c.eval.reference));
    EvalSettings settings = c.eval.settings;
    settings.threads = c.threads;
    const EvalReport r = evaluate_policy(cand.params, ref ? &ref->params : nullptr, c.oracle, cand.sched, settings);
    const fs::path out = c.resolve(c.eval.output);
    csv_create(out, kEvalHeader);
    csv_append_locked(out, kEvalHeader,
                      {cand_path.string(), c.eval.reference ? c.resolve(*c.eval.reference).string() : "",
                       std::to_string(r.n), format_double(r.mean_reward), format_double(r.std_reward),
                       opt_field(r.win_rate), format_double(r.tied_fraction)});
    log << "rollouts        " << r.n << "\n";
    log << "oracle reward   " << r.mean_reward << " +/- " << r.std_reward << "\n";
    if (r.win_rate) {
        log << "win-rate        " << *r.win_rate << " vs " << *c.eval.reference << "\n";
        log << "exact ties      " << r.tied_fraction << "\n";
    }
    return r;
}

std::vector<AblationCell> ablation_cells(const ExperimentConfig& c, int t_max) {
    std::vector<AblationCell> cells;
    auto add = [&](std::string value, auto&& edit) {
        AblationCell cell{std::move(value), c};
        SpoConfig& t = cell.config.spo.train;
        t.pair_budget = c.ablate.budget;
        if (c.ablate.budget > 0) t.epochs = c.ablate.max_epochs;
        t.eval_rollouts = 0;
        edit(cell.config);
        cells.push_back(std::move(cell));
    };
    switch (c.ablate.axis) {
        case AblationAxis::Resampler:
            for (auto r : {Resampler::None, Resampler::Win, Resampler::Lose, Resampler::Random}) {
                add(to_string(r), [r](ExperimentConfig& x) { x.spo.train.resampler = r; });
            }
            break;
        case AblationAxis::ScorerKind:
            add("step_aware", [](ExperimentConfig&) {});
            add("step_agnostic", [](ExperimentConfig& x) { x.spo.scorer = x.ablate.agnostic_scorer; });
            break;
        case AblationAxis::K:
            for (int k : {2, 4, 8}) add(std::to_string(k), [k](ExperimentConfig& x) { x.spo.train.k = k; });
            break;
        case AblationAxis::InnerSteps:
            for (int j = 1; j <= 6; ++j) {
                add(std::to_string(j), [j](ExperimentConfig& x) { x.spo.train.inner_steps = j; });
            }
            break;
        case AblationAxis::Kappa:
            for (int q = 1; q <= 4; ++q) {
                const int kappa = static_cast<int>(std::lround(q * 0.25 * t_max));
                add(std::to_string(kappa), [kappa](ExperimentConfig& x) { x.spo.train.kappa = kappa; });
            }
            break;
        case AblationAxis::PairChoice:
            for (auto p : {PairChoice::BestWorst, PairChoice::RandomPair}) {
                add(to_string(p), [p](ExperimentConfig& x) { x.spo.train.pair_choice = p; });
            }
            break;
    }
    return cells;
}

std::vector<std::string> ablation_fields(const AblationRow& r) {
    return {r.axis,
            r.value,
            r.config_hash,
            std::to_string(r.seed),
            std::to_string(r.gradient_pairs),
            std::to_string(r.updates),
            format_double(r.eval.mean_reward),
            format_double(r.eval.std_reward),
            opt_field(r.eval.win_rate),
            std::to_string(r.eval.n)};
}

AblationRow run_ablation_cell(const AblationCell& cell, AblationAxis axis, const LoadedDenoiser& base,
                              const PreferenceScorer& scorer) {
    const ExperimentConfig& c = cell.config;
    SpoConfig cfg = c.spo.train;
    cfg.seed = c.require_seed();
    auto result = spo_train(base.params, scorer, cfg, c.oracle, base.sched, {}, c.threads);
    EvalSettings settings = c.eval.settings;
    settings.threads = c.threads;
    AblationRow row;
    row.axis = to_string(axis);
    row.value = cell.value;
    row.config_hash = config_hash(c);
    row.seed = cfg.seed;
    row.gradient_pairs = result.gradient_pairs;
    row.updates = result.updates;
    row.eval = evaluate_policy(result.policy, &base.params, c.oracle, base.sched, settings);
    row.eval.rewards.clear();
    return row;
}

std::vector<AblationRow> run_ablation(const ExperimentConfig& c, std::ostream& log) {
    c.require_seed();
    auto base = load_denoiser(c.resolve(c.spo.base));
    const auto cells = ablation_cells(c, base.sched.t_max());
    for (const auto& cell : cells) cell.config.spo.train.validate(base.sched.t_max());
    std::map<std::string, PreferenceScorer> scorers;
    const fs::path table = c.resolve(c.ablate.output);
    std::vector<AblationRow> rows;
    for (const auto& cell : cells) {
        const std::string sp = c.resolve(cell.config.spo.scorer).string();
        if (!scorers.count(sp)) scorers.emplace(sp, load_scorer(sp).scorer);
        log << "cell " << to_string(c.ablate.axis) << "=" << cell.value << "\n";
        AblationRow row = run_ablation_cell(cell, c.ablate.axis, base, scorers.at(sp));
        csv_append_locked(table, kAblationHeader, ablation_fields(row));
        log << "  reward " << row.eval.mean_reward << " win-rate vs base " << row.eval.win_rate.value_or(0.0)
            << " (" << row.gradient_pairs << " pairs)\n";
        rows.push_back(std::move(row));
    }
    return rows;
}

}  // namespace spo
