#include "spo/config.hpp"

#include <cstdio>
#include <fstream>
#include <set>
#include <sstream>

#include "spo/baselines.hpp"
#include "spo/errors.hpp"

namespace spo {

using nlohmann::json;

std::string to_string(ScorerKind k) { return k == ScorerKind::StepAware ? "step_aware" : "step_agnostic"; }

ScorerKind parse_scorer_kind(const std::string& s) {
    if (s == "step_aware") return ScorerKind::StepAware;
    if (s == "step_agnostic") return ScorerKind::StepAgnostic;
    throw ConfigError("unknown scorer kind '" + s + "' (expected step_aware or step_agnostic)");
}

std::string to_string(AblationAxis a) {
    switch (a) {
        case AblationAxis::Resampler: return "resampler";
        case AblationAxis::ScorerKind: return "scorer_kind";
        case AblationAxis::K: return "k";
        case AblationAxis::InnerSteps: return "inner_steps";
        case AblationAxis::Kappa: return "kappa";
        case AblationAxis::PairChoice: return "pair_choice";
    }
    return "?";
}

AblationAxis parse_ablation_axis(const std::string& s) {
    for (auto a : {AblationAxis::Resampler, AblationAxis::ScorerKind, AblationAxis::K, AblationAxis::InnerSteps,
                   AblationAxis::Kappa, AblationAxis::PairChoice}) {
        if (to_string(a) == s) return a;
    }
    throw ConfigError("unknown ablation axis '" + s +
                      "' (expected resampler, scorer_kind, k, inner_steps, kappa or pair_choice)");
}

namespace {

// Reads the keys of one JSON object, tracking which were consumed so that
// leftovers can be reported as unknown.
class Section {
public:
    Section(const json& parent, const std::string& name, const std::string& prefix) : prefix_(prefix + name + ".") {
        if (!parent.contains(name)) return;
        obj_ = &parent.at(name);
        if (!obj_->is_object()) throw ConfigError("key '" + prefix + name + "' must be an object");
    }
    explicit Section(const json& root) : obj_(&root) {
        if (!root.is_object()) throw ConfigError("config root must be a JSON object");
    }

    const json* object() const { return obj_; }
    std::string key(const std::string& k) const { return prefix_ + k; }

    template <class T>
    void get(const std::string& k, T& out) {
        if (!obj_ || !obj_->contains(k)) return;
        seen_.insert(k);
        read(obj_->at(k), k, out);
    }

    template <class T>
    void get(const std::string& k, std::optional<T>& out) {
        if (!obj_ || !obj_->contains(k)) return;
        seen_.insert(k);
        if (obj_->at(k).is_null()) {
            out.reset();
            return;
        }
        T v{};
        read(obj_->at(k), k, v);
        out = v;
    }

    template <class T, class Parse>
    void get_enum(const std::string& k, T& out, Parse parse) {
        std::string s;
        if (!obj_ || !obj_->contains(k)) return;
        get(k, s);
        try {
            out = parse(s);
        } catch (const ConfigError& e) {
            throw ConfigError("key '" + key(k) + "': " + e.what());
        }
    }

    void mark(const std::string& k) { seen_.insert(k); }

    void finish() const {
        if (!obj_) return;
        for (auto it = obj_->begin(); it != obj_->end(); ++it) {
            if (!seen_.count(it.key())) throw ConfigError("unknown config key '" + key(it.key()) + "'");
        }
    }

private:
    template <class T>
    void read(const json& v, const std::string& k, T& out) const {
        if constexpr (std::is_same_v<T, bool>) {
            if (!v.is_boolean()) throw ConfigError("key '" + key(k) + "' must be a boolean");
            out = v.get<bool>();
        } else if constexpr (std::is_integral_v<T>) {
            if (!v.is_number_integer()) throw ConfigError("key '" + key(k) + "' must be an integer");
            if constexpr (std::is_unsigned_v<T>) {
                if (v.is_number_unsigned()) {
                    out = v.get<T>();
                    return;
                }
                if (v.get<long long>() < 0) throw ConfigError("key '" + key(k) + "' must be non-negative");
            }
            out = v.get<T>();
        } else if constexpr (std::is_floating_point_v<T>) {
            if (!v.is_number()) throw ConfigError("key '" + key(k) + "' must be a number");
            out = v.get<T>();
        } else if constexpr (std::is_same_v<T, std::string>) {
            if (!v.is_string()) throw ConfigError("key '" + key(k) + "' must be a string");
            out = v.get<std::string>();
        } else {
            static_assert(sizeof(T) == 0, "unsupported config field type");
        }
    }

    const json* obj_ = nullptr;
    std::string prefix_;
    std::set<std::string> seen_;
};

std::vector<Sample> read_centers(const json& v, const std::string& key) {
    std::vector<Sample> out;
    if (!v.is_array() || v.empty()) throw ConfigError("key '" + key + "' must be a non-empty array of points");
    for (const auto& p : v) {
        if (!p.is_array() || p.empty()) throw ConfigError("key '" + key + "' must be a non-empty array of points");
        Sample s;
        for (const auto& x : p) {
            if (!x.is_number()) throw ConfigError("key '" + key + "' must contain numbers");
            s.push_back(x.get<double>());
        }
        if (!out.empty() && s.size() != out.front().size()) throw ConfigError("key '" + key + "': mixed dimensions");
        out.push_back(std::move(s));
    }
    return out;
}

void parse_denoiser_arch(Section& s, DenoiserArch& a) {
    s.get("cond_dim", a.cond_dim);
    s.get("time_dim", a.time_dim);
    s.get("hidden", a.hidden);
    s.get("depth", a.depth);
}

void parse_scorer_arch(Section& s, ScorerArch& a) {
    s.get("embed_dim", a.embed_dim);
    s.get("time_dim", a.time_dim);
    s.get("hidden", a.hidden);
    s.get("depth", a.depth);
}

}  // namespace

ExperimentConfig parse_config(const json& j) {
    ExperimentConfig c;
    Section root(j);
    root.get("seed", c.seed);
    root.get("workspace", c.workspace);
    root.get("threads", c.threads);

    {
        Section s(j, "oracle", "");
        root.mark("oracle");
        if (s.object() && s.object()->contains("mode_centers")) {
            s.mark("mode_centers");
            c.oracle.mode_centers = read_centers(s.object()->at("mode_centers"), s.key("mode_centers"));
        }
        s.get("mode_std", c.oracle.mode_std);
        s.get("tie_margin", c.oracle.tie_margin);
        s.finish();
    }
    {
        Section s(j, "pretrain", "");
        root.mark("pretrain");
        auto& p = c.pretrain;
        parse_denoiser_arch(s, p.train.arch);
        s.get("steps", p.train.steps);
        s.get("batch", p.train.batch);
        s.get("lr", p.train.lr);
        s.get("final_lr", p.train.final_lr);
        s.get("cond_dropout", p.train.cond_dropout);
        s.get("heldout", p.train.heldout);
        s.get("t_max", p.t_max);
        s.get("beta_start", p.beta_start);
        s.get("beta_end", p.beta_end);
        if (s.object() && s.object()->contains("mode_centers")) {
            s.mark("mode_centers");
            p.data.mode_centers = read_centers(s.object()->at("mode_centers"), s.key("mode_centers"));
        }
        s.get("train_std", p.data.train_std);
        s.get("mislabel_prob", p.data.mislabel_prob);
        s.get("output", p.output);
        s.get("metrics", p.metrics);
        s.finish();
        p.train.arch.num_classes = p.data.num_classes();
        p.train.arch.data_dim = p.data.data_dim();
    }
    {
        Section s(j, "scorer", "");
        root.mark("scorer");
        auto& p = c.scorer;
        s.get("base", p.base);
        s.get_enum("kind", p.kind, parse_scorer_kind);
        s.get("pairs", p.pairs);
        parse_scorer_arch(s, p.train.arch);
        s.get("tau", p.train.tau);
        s.get("use_x0_estimate", p.train.use_x0_estimate);
        s.get("steps", p.train.steps);
        s.get("batch", p.train.batch);
        s.get("lr", p.train.lr);
        s.get("validation_fraction", p.train.validation_fraction);
        s.get("validation_draws", p.train.validation_draws);
        s.get("output", p.output);
        s.get("report", p.report);
        s.finish();
        p.train.arch.time_conditioned = p.kind == ScorerKind::StepAware;
    }
    {
        Section s(j, "spo", "");
        root.mark("spo");
        auto& p = c.spo;
        auto& t = p.train;
        s.get("base", p.base);
        s.get("scorer", p.scorer);
        s.get("run_dir", p.run_dir);
        s.get("beta", t.beta);
        s.get("kappa", t.kappa);
        s.get("k", t.k);
        s.get("inner_steps", t.inner_steps);
        s.get_enum("resampler", t.resampler, parse_resampler);
        s.get_enum("pair_choice", t.pair_choice, parse_pair_choice);
        s.get("sampler_steps", t.sampler_steps);
        s.get("eta", t.eta);
        s.get("guidance", t.guidance);
        s.get("guided_logprob", t.guided_logprob);
        s.get("lr", t.lr);
        s.get("clip_norm", t.clip_norm);
        s.get("batch_size", t.batch_size);
        s.get("prompts_per_epoch", t.prompts_per_epoch);
        s.get("epochs", t.epochs);
        s.get("pair_budget", t.pair_budget);
        s.get("eval_rollouts", t.eval_rollouts);
        s.finish();
    }
    {
        Section s(j, "baseline", "");
        root.mark("baseline");
        auto& p = c.baseline;
        s.get("kind", p.kind);
        try {
            parse_baseline_kind(p.kind);
        } catch (const ConfigError& e) {
            throw ConfigError("key 'baseline.kind': " + std::string(e.what()));
        }
        s.get("offline_pairs", p.offline_pairs);
        s.get("terms_per_batch", p.terms_per_batch);
        s.get("run_dir", p.run_dir);
        s.finish();
    }
    {
        Section s(j, "eval", "");
        root.mark("eval");
        auto& p = c.eval;
        s.get("checkpoint", p.checkpoint);
        s.get("reference", p.reference);
        s.get("rollouts", p.settings.rollouts);
        s.get("guidance", p.settings.guidance);
        s.get("steps", p.settings.steps);
        s.get("eta", p.settings.eta);
        s.get("seed", p.settings.seed);
        s.get("output", p.output);
        s.finish();
    }
    {
        Section s(j, "ablate", "");
        root.mark("ablate");
        auto& p = c.ablate;
        s.get_enum("axis", p.axis, parse_ablation_axis);
        s.get("budget", p.budget);
        s.get("max_epochs", p.max_epochs);
        s.get("agnostic_scorer", p.agnostic_scorer);
        s.get("output", p.output);
        s.finish();
    }
    root.finish();

    if (c.seed) c.spo.train.seed = *c.seed;
    if (c.threads < 1) throw ConfigError("key 'threads' must be >= 1");
    if (c.eval.settings.rollouts < 1) throw ConfigError("key 'eval.rollouts' must be >= 1");
    if (c.scorer.pairs < 2) throw ConfigError("key 'scorer.pairs' must be >= 2");
    if (c.ablate.budget < 0) throw ConfigError("key 'ablate.budget' must be >= 0");
    return c;
}

ExperimentConfig load_config(const std::filesystem::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw IoError("cannot open config file " + path.string());
    std::stringstream ss;
    ss << in.rdbuf();
    json j;
    try {
        j = json::parse(ss.str());
    } catch (const json::parse_error& e) {
        throw ConfigError("config file " + path.string() + " is not valid JSON: " + e.what());
    }
    return parse_config(j);
}

namespace {

json centers_json(const std::vector<Sample>& centers) {
    json a = json::array();
    for (const auto& c : centers) a.push_back(c);
    return a;
}

}  // namespace

json serialize_config(const ExperimentConfig& c) {
    json j;
    if (c.seed) j["seed"] = *c.seed;
    j["workspace"] = c.workspace;
    j["threads"] = c.threads;
    j["oracle"] = {{"mode_centers", centers_json(c.oracle.mode_centers)},
                   {"mode_std", c.oracle.mode_std},
                   {"tie_margin", c.oracle.tie_margin}};
    const auto& pt = c.pretrain;
    j["pretrain"] = {{"cond_dim", pt.train.arch.cond_dim},
                     {"time_dim", pt.train.arch.time_dim},
                     {"hidden", pt.train.arch.hidden},
                     {"depth", pt.train.arch.depth},
                     {"steps", pt.train.steps},
                     {"batch", pt.train.batch},
                     {"lr", pt.train.lr},
                     {"final_lr", pt.train.final_lr},
                     {"cond_dropout", pt.train.cond_dropout},
                     {"heldout", pt.train.heldout},
                     {"t_max", pt.t_max},
                     {"beta_start", pt.beta_start},
                     {"beta_end", pt.beta_end},
                     {"mode_centers", centers_json(pt.data.mode_centers)},
                     {"train_std", pt.data.train_std},
                     {"mislabel_prob", pt.data.mislabel_prob},
                     {"output", pt.output},
                     {"metrics", pt.metrics}};
    const auto& sc = c.scorer;
    j["scorer"] = {{"base", sc.base},
                   {"kind", to_string(sc.kind)},
                   {"pairs", sc.pairs},
                   {"embed_dim", sc.train.arch.embed_dim},
                   {"time_dim", sc.train.arch.time_dim},
                   {"hidden", sc.train.arch.hidden},
                   {"depth", sc.train.arch.depth},
                   {"tau", sc.train.tau},
                   {"use_x0_estimate", sc.train.use_x0_estimate},
                   {"steps", sc.train.steps},
                   {"batch", sc.train.batch},
                   {"lr", sc.train.lr},
                   {"validation_fraction", sc.train.validation_fraction},
                   {"validation_draws", sc.train.validation_draws},
                   {"output", sc.output},
                   {"report", sc.report}};
    const auto& t = c.spo.train;
    j["spo"] = {{"base", c.spo.base},
                {"scorer", c.spo.scorer},
                {"run_dir", c.spo.run_dir},
                {"beta", t.beta},
                {"kappa", t.kappa},
                {"k", t.k},
                {"inner_steps", t.inner_steps},
                {"resampler", to_string(t.resampler)},
                {"pair_choice", to_string(t.pair_choice)},
                {"sampler_steps", t.sampler_steps},
                {"eta", t.eta},
                {"guidance", t.guidance},
                {"guided_logprob", t.guided_logprob},
                {"lr", t.lr},
                {"clip_norm", t.clip_norm},
                {"batch_size", t.batch_size},
                {"prompts_per_epoch", t.prompts_per_epoch},
                {"epochs", t.epochs},
                {"pair_budget", t.pair_budget},
                {"eval_rollouts", t.eval_rollouts}};
    j["baseline"] = {{"kind", c.baseline.kind},
                     {"offline_pairs", c.baseline.offline_pairs},
                     {"terms_per_batch", c.baseline.terms_per_batch},
                     {"run_dir", c.baseline.run_dir}};
    json ev = {{"rollouts", c.eval.settings.rollouts},
               {"guidance", c.eval.settings.guidance},
               {"steps", c.eval.settings.steps},
               {"eta", c.eval.settings.eta},
               {"seed", c.eval.settings.seed},
               {"output", c.eval.output}};
    if (c.eval.checkpoint) ev["checkpoint"] = *c.eval.checkpoint;
    if (c.eval.reference) ev["reference"] = *c.eval.reference;
    j["eval"] = ev;
    j["ablate"] = {{"axis", to_string(c.ablate.axis)},
                   {"budget", c.ablate.budget},
                   {"max_epochs", c.ablate.max_epochs},
                   {"agnostic_scorer", c.ablate.agnostic_scorer},
                   {"output", c.ablate.output}};
    return j;
}

std::uint64_t ExperimentConfig::require_seed() const {
    if (!seed) throw ConfigError("missing required key 'seed'");
    return *seed;
}

std::filesystem::path ExperimentConfig::resolve(const std::string& p) const {
    const std::filesystem::path path(p);
    if (path.is_absolute()) return path;
    return std::filesystem::path(workspace) / path;
}

std::uint64_t fnv1a64(std::string_view bytes) {
    std::uint64_t h = 0xcbf29ce484222325ull;
    for (unsigned char b : bytes) {
        h ^= b;
        h *= 0x100000001b3ull;
    }
    return h;
}

std::string config_hash(const ExperimentConfig& c) {
    // Where a run lives and how many threads it used do not change its results.
    json j = serialize_config(c);
    j.erase("workspace");
    j.erase("threads");
    char buf[17];
    std::snprintf(buf, sizeof buf, "%016llx", static_cast<unsigned long long>(fnv1a64(j.dump())));
    return buf;
}

}  // namespace spo
