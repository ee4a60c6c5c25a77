#include <doctest.h>

#include <filesystem>
#include <fstream>
#include <map>
#include <set>
#include <unistd.h>
#include <sstream>

#include "spo/config.hpp"
#include "spo/errors.hpp"
#include "spo/harness.hpp"

using namespace spo;
using nlohmann::json;
namespace fs = std::filesystem;

namespace {

struct TempDir {
    fs::path path;
    TempDir() {
        static int counter = 0;
        path = fs::temp_directory_path() /
               ("spo_harness_" + std::to_string(::getpid()) + "_" + std::to_string(counter++));
        fs::remove_all(path);
        fs::create_directories(path);
    }
    ~TempDir() { fs::remove_all(path); }
};

std::string slurp(const fs::path& p) {
    std::ifstream in(p, std::ios::binary);
    std::stringstream ss;
    ss << in.rdbuf();
    return ss.str();
}

// Small enough to run the whole pipeline in a few seconds.
json tiny_config(const fs::path& ws) {
    return {{"seed", 7},
            {"workspace", ws.string()},
            {"pretrain", {{"hidden", 16}, {"depth", 2}, {"cond_dim", 4}, {"time_dim", 8},
                          {"steps", 60}, {"batch", 16}, {"heldout", 32}}},
            {"scorer", {{"pairs", 60}, {"steps", 30}, {"hidden", 8}, {"embed_dim", 4}, {"time_dim", 8},
                        {"validation_draws", 1}}},
            {"spo", {{"epochs", 2}, {"prompts_per_epoch", 8}, {"batch_size", 8}, {"eval_rollouts", 8}}},
            {"baseline", {{"offline_pairs", 20}, {"terms_per_batch", 16}}},
            {"eval", {{"rollouts", 40}}},
            {"ablate", {{"budget", 40}}}};
}

}  // namespace

TEST_SUITE("experiment_harness") {

TEST_CASE("config round trip") {
    json j = {{"seed", 3},
              {"threads", 2},
              {"oracle", {{"tie_margin", 0.01}}},
              {"spo", {{"kappa", 500}, {"resampler", "win"}, {"pair_choice", "random_pair"}, {"k", 8}}},
              {"scorer", {{"kind", "step_agnostic"}}},
              {"eval", {{"checkpoint", "a.ckpt"}}},
              {"ablate", {{"axis", "kappa"}}}};
    const auto c = parse_config(j);
    CHECK(*c.seed == 3);
    CHECK(c.spo.train.seed == 3);
    CHECK(c.spo.train.kappa == 500);
    CHECK(c.spo.train.resampler == Resampler::Win);
    CHECK(c.scorer.kind == ScorerKind::StepAgnostic);
    CHECK_FALSE(c.scorer.train.arch.time_conditioned);
    CHECK(c.ablate.axis == AblationAxis::Kappa);
    const auto again = parse_config(serialize_config(c));
    CHECK(again == c);
    CHECK(config_hash(again) == config_hash(c));
    auto moved = c;
    moved.workspace = "elsewhere";
    moved.threads = 8;
    CHECK(config_hash(moved) == config_hash(c));
    moved.spo.train.beta = 5.0;
    CHECK(config_hash(moved) != config_hash(c));
    CHECK(parse_config(json::object()) == parse_config(serialize_config(parse_config(json::object()))));
}

TEST_CASE("config errors name the key") {
    auto message = [](const json& j) {
        try {
            parse_config(j);
        } catch (const ConfigError& e) {
            return std::string(e.what());
        }
        return std::string("no error");
    };
    CHECK(message({{"spo", {{"kapa", 3}}}}).find("spo.kapa") != std::string::npos);
    CHECK(message({{"bogus", 1}}).find("bogus") != std::string::npos);
    CHECK(message({{"spo", {{"kappa", "high"}}}}).find("spo.kappa") != std::string::npos);
    CHECK(message({{"spo", {{"resampler", "sometimes"}}}}) != "no error");
    CHECK(message({{"ablate", {{"axis", "lr"}}}}) != "no error");
    CHECK(message({{"baseline", {{"kind", "ddpo"}}}}).find("baseline.kind") != std::string::npos);
    CHECK(message(json::array()) != "no error");

    const auto c = parse_config(json::object());
    CHECK_FALSE(c.seed.has_value());
    try {
        c.require_seed();
        FAIL("expected ConfigError");
    } catch (const ConfigError& e) {
        CHECK(std::string(e.what()) == "missing required key 'seed'");
    }
}

TEST_CASE("load_config error kinds") {
    TempDir d;
    CHECK_THROWS_AS(load_config(d.path / "absent.json"), IoError);
    std::ofstream(d.path / "broken.json") << "{ \"seed\": ";
    CHECK_THROWS_AS(load_config(d.path / "broken.json"), ConfigError);
    std::ofstream(d.path / "ok.json") << "{ \"seed\": 4 }";
    CHECK(*load_config(d.path / "ok.json").seed == 4);
}

TEST_CASE("fnv1a64 reference vectors") {
    CHECK(fnv1a64("") == 0xcbf29ce484222325ULL);
    CHECK(fnv1a64("a") == 0xaf63dc4c8601ec8cULL);
    CHECK(fnv1a64("foobar") == 0x85944171f73967e8ULL);
    CHECK(config_hash(parse_config(json::object())).size() == 16);
}

TEST_CASE("csv quoting") {
    CHECK(csv_field("plain") == "plain");
    CHECK(csv_field("a,b") == "\"a,b\"");
    CHECK(csv_field("say \"hi\"") == "\"say \"\"hi\"\"\"");
    CHECK(csv_field("two\nlines") == "\"two\nlines\"");
    CHECK(csv_row({"a", "b,c", ""}) == "a,\"b,c\",\r\n");
    for (double v : {0.1, -2.5e-300, 1.0 / 3.0, 123456789.0}) CHECK(std::stod(format_double(v)) == v);
}

TEST_CASE("locked csv append writes the header once") {
    TempDir d;
    const auto p = d.path / "t.csv";
    csv_append_locked(p, {"x", "y"}, {"1", "2"});
    csv_append_locked(p, {"x", "y"}, {"3", "4"});
    CHECK(slurp(p) == "x,y\r\n1,2\r\n3,4\r\n");
    csv_create(p, {"x", "y"});
    CHECK(slurp(p) == "x,y\r\n");
}

TEST_CASE("ablation grids") {
    ExperimentConfig c = parse_config({{"seed", 1}});
    const std::map<AblationAxis, std::size_t> sizes{{AblationAxis::Resampler, 4}, {AblationAxis::ScorerKind, 2},
                                                     {AblationAxis::K, 3},         {AblationAxis::InnerSteps, 6},
                                                     {AblationAxis::Kappa, 4},     {AblationAxis::PairChoice, 2}};
    for (const auto& [axis, n] : sizes) {
        c.ablate.axis = axis;
        const auto cells = ablation_cells(c, 1000);
        REQUIRE(cells.size() == n);
        std::set<std::string> hashes;
        for (const auto& cell : cells) {
            hashes.insert(config_hash(cell.config));
            CHECK(cell.config.spo.train.pair_budget == c.ablate.budget);
            CHECK(cell.config.seed == c.seed);
        }
        CHECK(hashes.size() == n);
    }
    c.ablate.axis = AblationAxis::Kappa;
    const auto cells = ablation_cells(c, 1000);
    CHECK(cells[0].config.spo.train.kappa == 250);
    CHECK(cells[3].config.spo.train.kappa == 1000);
}

TEST_CASE("checkpoint encoding") {
    const std::vector<double> v{1.0, -0.5, 1e-3, 3.14159};
    const auto bytes = encode_checkpoint({{"kind", "denoiser"}}, v);
    CHECK(bytes.rfind(std::string(kCheckpointMagic), 0) == 0);
    const auto raw = decode_checkpoint(bytes);
    CHECK(raw.header["kind"] == "denoiser");
    REQUIRE(raw.values.size() == 4);
    for (std::size_t i = 0; i < v.size(); ++i) CHECK(raw.values[i] == static_cast<float>(v[i]));

    std::string bad = bytes;
    bad[0] = 'X';
    CHECK_THROWS_AS(decode_checkpoint(bad), FormatError);
    CHECK_THROWS_AS(decode_checkpoint(bytes.substr(0, bytes.size() - 3)), FormatError);
    CHECK_THROWS_AS(decode_checkpoint(""), FormatError);
    TempDir d;
    CHECK_THROWS_AS(read_checkpoint(d.path / "none.ckpt"), IoError);
}

TEST_CASE("pipeline: reproducible artifacts, run layout, paired eval") {
    TempDir a, b;
    std::ostringstream log;
    auto ca = parse_config(tiny_config(a.path));
    auto cb = parse_config(tiny_config(b.path));

    const auto base_a = run_pretrain(ca, log);
    const auto base_b = run_pretrain(cb, log);
    CHECK(slurp(base_a) == slurp(base_b));
    CHECK(fs::exists(a.path / "pretrain_metrics.csv"));

    const auto sc_a = run_train_scorer(ca, log);
    const auto sc_b = run_train_scorer(cb, log);
    CHECK(slurp(sc_a) == slurp(sc_b));
    CHECK(slurp(a.path / "scorer_report.csv").rfind("band_lo,band_hi,accuracy,n\r\n", 0) == 0);

    const auto fin_a = run_spo(ca, log);
    const auto fin_b = run_spo(cb, log);
    CHECK(slurp(fin_a) == slurp(fin_b));
    const fs::path run = a.path / "spo";
    CHECK(fs::exists(run / "config.json"));
    CHECK(fs::exists(run / "epoch_000.ckpt"));
    CHECK(fs::exists(run / "epoch_001.ckpt"));
    CHECK(fin_a == run / "final.ckpt");
    const auto train_log = slurp(run / "train_log.csv");
    CHECK(train_log.rfind("epoch,batch,loss,tied_fraction,mean_oracle_reward_eval,grad_norm\r\n", 0) == 0);
    CHECK(parse_config(json::parse(slurp(run / "config.json"))) == ca);
    CHECK(load_denoiser(fin_a).info.trainer == "spo");

    for (const char* kind : {"d3po", "diffusion_dpo"}) {
        auto cfg = ca;
        cfg.baseline.kind = kind;
        const auto fin = run_baseline(cfg, log);
        CHECK(fin == a.path / kind / "final.ckpt");
        CHECK(load_denoiser(fin).info.trainer == kind);
        CHECK(slurp(a.path / kind / "train_log.csv").rfind(slurp(run / "train_log.csv").substr(0, 60), 0) == 0);
    }

    // Self comparison is exactly one half; swapping the roles complements.
    auto ce = ca;
    ce.eval.checkpoint = fin_a.string();
    ce.eval.reference = fin_a.string();
    CHECK(*run_eval(ce, log).win_rate == 0.5);
    ce.eval.reference = base_a.string();
    const double ab = *run_eval(ce, log).win_rate;
    ce.eval.checkpoint = base_a.string();
    ce.eval.reference = fin_a.string();
    const double ba = *run_eval(ce, log).win_rate;
    CHECK(ab + ba == doctest::Approx(1.0).epsilon(1e-12));
    const auto eval_csv = slurp(a.path / "eval.csv");
    CHECK(eval_csv.rfind("checkpoint,reference,n,mean_reward,std_reward,win_rate,tied_fraction\r\n", 0) == 0);

    ce.eval.checkpoint.reset();
    CHECK_THROWS_AS(run_eval(ce, log), ConfigError);

    auto cx = ca;
    cx.ablate.axis = AblationAxis::PairChoice;
    const auto rows = run_ablation(cx, log);
    REQUIRE(rows.size() == 2);
    for (const auto& r : rows) CHECK(r.gradient_pairs >= 40);
    CHECK(rows[0].config_hash != rows[1].config_hash);
    const auto table = slurp(a.path / "ablation.csv");
    CHECK(std::count(table.begin(), table.end(), '\n') == 3);
}

TEST_CASE("missing seed and missing files") {
    TempDir d;
    std::ostringstream log;
    auto j = tiny_config(d.path);
    j.erase("seed");
    CHECK_THROWS_AS(run_pretrain(parse_config(j), log), ConfigError);
    CHECK_THROWS_AS(run_train_scorer(parse_config(tiny_config(d.path)), log), IoError);
    std::ofstream(d.path / "base.ckpt") << "not a checkpoint";
    CHECK_THROWS_AS(run_spo(parse_config(tiny_config(d.path)), log), FormatError);
}

}  // TEST_SUITE
