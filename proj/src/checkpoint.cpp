#include "spo/checkpoint.hpp"

#include <bit>
#include <fstream>
#include <iterator>
#include <sstream>

#include "spo/errors.hpp"

namespace spo {

using nlohmann::json;

std::string encode_checkpoint(json header, std::span<const double> values) {
    header["n_values"] = values.size();
    std::string out(kCheckpointMagic);
    out += header.dump();
    out.push_back('\0');
    out.reserve(out.size() + 4 * values.size());
    for (double v : values) {
        const auto bits = std::bit_cast<std::uint32_t>(static_cast<float>(v));
        for (int b = 0; b < 4; ++b) out.push_back(static_cast<char>((bits >> (8 * b)) & 0xffu));
    }
    return out;
}

RawCheckpoint decode_checkpoint(const std::string& bytes) {
    if (bytes.compare(0, kCheckpointMagic.size(), kCheckpointMagic) != 0) {
        throw FormatError("not an SPOCKPT1 checkpoint (bad magic)");
    }
    const std::size_t start = kCheckpointMagic.size();
    const std::size_t end = bytes.find('\0', start);
    if (end == std::string::npos) throw FormatError("checkpoint header is not terminated");
    RawCheckpoint ck;
    try {
        ck.header = json::parse(bytes.begin() + static_cast<std::ptrdiff_t>(start),
                                bytes.begin() + static_cast<std::ptrdiff_t>(end));
    } catch (const json::exception& e) {
        throw FormatError(std::string("checkpoint header is not valid JSON: ") + e.what());
    }
    if (!ck.header.contains("n_values")) throw FormatError("checkpoint header lacks n_values");
    const auto n = ck.header.at("n_values").get<std::size_t>();
    if (bytes.size() - end - 1 != 4 * n) throw FormatError("checkpoint payload size does not match n_values");
    ck.values.resize(n);
    const auto* p = reinterpret_cast<const unsigned char*>(bytes.data() + end + 1);
    for (std::size_t i = 0; i < n; ++i) {
        std::uint32_t bits = 0;
        for (int b = 0; b < 4; ++b) bits |= static_cast<std::uint32_t>(p[4 * i + static_cast<std::size_t>(b)]) << (8 * b);
        ck.values[i] = std::bit_cast<float>(bits);
    }
    return ck;
}

void write_checkpoint(const std::filesystem::path& path, json header, std::span<const double> values) {
    const std::string bytes = encode_checkpoint(std::move(header), values);
    if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
    std::ofstream f(path, std::ios::binary | std::ios::trunc);
    if (!f) throw IoError("cannot open " + path.string() + " for writing");
    f.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
    if (!f) throw IoError("failed writing " + path.string());
}

RawCheckpoint read_checkpoint(const std::filesystem::path& path) {
    std::ifstream f(path, std::ios::binary);
    if (!f) throw IoError("cannot open checkpoint " + path.string());
    const std::string bytes((std::istreambuf_iterator<char>(f)), std::istreambuf_iterator<char>());
    return decode_checkpoint(bytes);
}

std::vector<double> round_to_float(std::span<const double> values) {
    std::vector<double> out(values.size());
    for (std::size_t i = 0; i < values.size(); ++i) out[i] = static_cast<float>(values[i]);
    return out;
}

namespace {

json info_json(const CheckpointInfo& info) {
    return {{"trainer", info.trainer}, {"seed", info.seed}, {"step", info.step}, {"extra", info.extra}};
}

CheckpointInfo info_from(const json& h) {
    CheckpointInfo info;
    info.trainer = h.value("trainer", "");
    info.seed = h.value("seed", std::uint64_t{0});
    info.step = h.value("step", 0L);
    info.extra = h.value("extra", json::object());
    return info;
}

json schedule_json(const NoiseSchedule& s) {
    return {{"type", "linear"}, {"t_max", s.t_max()}, {"beta_start", s.beta_start()}, {"beta_end", s.beta_end()}};
}

NoiseSchedule schedule_from(const json& h) {
    const auto& s = h.at("schedule");
    return NoiseSchedule::linear(s.at("t_max").get<int>(), s.at("beta_start").get<double>(),
                                 s.at("beta_end").get<double>());
}

void expect_kind(const json& h, const char* kind) {
    if (h.value("kind", "") != kind) {
        throw FormatError(std::string("expected a ") + kind + " checkpoint, found kind '" + h.value("kind", "") + "'");
    }
}

template <class Params>
void fill_weights(Params& p, const RawCheckpoint& ck) {
    if (ck.values.size() != p.size()) throw FormatError("checkpoint parameter count does not match its architecture");
    auto w = p.weights();
    for (std::size_t i = 0; i < w.size(); ++i) w[i] = ck.values[i];
    if (!all_finite(w)) throw NumericError("checkpoint contains non-finite weights");
}

}  // namespace

void save_denoiser(const std::filesystem::path& path, const DenoiserParams& params, const NoiseSchedule& sched,
                   const CheckpointInfo& info) {
    const auto& a = params.arch();
    json h = info_json(info);
    h["kind"] = "denoiser";
    h["architecture"] = {{"data_dim", a.data_dim}, {"num_classes", a.num_classes}, {"cond_dim", a.cond_dim},
                         {"time_dim", a.time_dim}, {"hidden", a.hidden},           {"depth", a.depth}};
    h["schedule"] = schedule_json(sched);
    write_checkpoint(path, std::move(h), params.weights());
}

LoadedDenoiser load_denoiser(const std::filesystem::path& path) {
    const RawCheckpoint ck = read_checkpoint(path);
    try {
        expect_kind(ck.header, "denoiser");
        const auto& ah = ck.header.at("architecture");
        DenoiserArch a;
        a.data_dim = ah.at("data_dim");
        a.num_classes = ah.at("num_classes");
        a.cond_dim = ah.at("cond_dim");
        a.time_dim = ah.at("time_dim");
        a.hidden = ah.at("hidden");
        a.depth = ah.at("depth");
        LoadedDenoiser out{DenoiserParams(a), schedule_from(ck.header), info_from(ck.header)};
        fill_weights(out.params, ck);
        return out;
    } catch (const json::exception& e) {
        throw FormatError(std::string("malformed denoiser checkpoint header: ") + e.what());
    }
}

void save_scorer(const std::filesystem::path& path, const PreferenceScorer& scorer,
                 const std::string& estimator_path, const CheckpointInfo& info) {
    const auto& a = scorer.params.arch();
    json h = info_json(info);
    h["kind"] = "scorer";
    h["architecture"] = {{"data_dim", a.data_dim},     {"num_classes", a.num_classes}, {"embed_dim", a.embed_dim},
                         {"time_dim", a.time_dim},     {"hidden", a.hidden},           {"depth", a.depth},
                         {"time_conditioned", a.time_conditioned}};
    h["tau"] = scorer.params.tau();
    h["use_x0_estimate"] = scorer.use_x0_estimate;
    h["x0_estimator"] = estimator_path;
    h["schedule"] = schedule_json(scorer.sched);
    write_checkpoint(path, std::move(h), scorer.params.weights());
}

LoadedScorer load_scorer(const std::filesystem::path& path) {
    const RawCheckpoint ck = read_checkpoint(path);
    try {
        expect_kind(ck.header, "scorer");
        const auto& ah = ck.header.at("architecture");
        ScorerArch a;
        a.data_dim = ah.at("data_dim");
        a.num_classes = ah.at("num_classes");
        a.embed_dim = ah.at("embed_dim");
        a.time_dim = ah.at("time_dim");
        a.hidden = ah.at("hidden");
        a.depth = ah.at("depth");
        a.time_conditioned = ah.at("time_conditioned");
        LoadedScorer out;
        out.scorer.params = ScorerParams(a, ck.header.at("tau").get<double>());
        fill_weights(out.scorer.params, ck);
        out.scorer.sched = schedule_from(ck.header);
        out.scorer.use_x0_estimate = ck.header.at("use_x0_estimate");
        out.estimator_path = ck.header.value("x0_estimator", "");
        out.info = info_from(ck.header);
        if (out.scorer.use_x0_estimate) {
            std::filesystem::path est(out.estimator_path);
            if (est.is_relative()) est = path.parent_path() / est;
            out.scorer.x0_estimator = std::make_shared<const DenoiserParams>(load_denoiser(est).params);
        }
        return out;
    } catch (const json::exception& e) {
        throw FormatError(std::string("malformed scorer checkpoint header: ") + e.what());
    }
}

}  // namespace spo
