#pragma once

// SPOCKPT1 checkpoint files.
//
//   "SPOCKPT1\n"
//   UTF-8 JSON header, terminated by a single '\0'
//   header["n_values"] little-endian IEEE-754 float32 values
//
// The values are the model's flat parameter vector in storage order:
//   denoiser: condition table ((num_classes + 1) x cond_dim, the last row is
//             the unconditional embedding), then for every hidden layer and
//             finally the output layer: weights (out x in, row-major), bias.
//   scorer:   label embedding table (num_classes x embed_dim), then per
//             hidden layer: dense weights, dense bias, modulation weights
//             (2*hidden x time_dim), modulation bias; then the output layer.
// header["kind"] is "denoiser" or "scorer".

#include <cstdint>
#include <filesystem>
#include <memory>
#include <span>
#include <string>
#include <vector>

#include <json.hpp>

#include "spo/denoiser.hpp"
#include "spo/schedule.hpp"
#include "spo/scorer.hpp"

namespace spo {

inline constexpr std::string_view kCheckpointMagic = "SPOCKPT1\n";

struct RawCheckpoint {
    nlohmann::json header;
    std::vector<float> values;
};

void write_checkpoint(const std::filesystem::path& path, nlohmann::json header, std::span<const double> values);
RawCheckpoint read_checkpoint(const std::filesystem::path& path);

// Encoding helpers shared by the file functions; exposed for tests.
std::string encode_checkpoint(nlohmann::json header, std::span<const double> values);
RawCheckpoint decode_checkpoint(const std::string& bytes);

struct CheckpointInfo {
    std::string trainer;     // "pretrain", "spo", "d3po", "diffusion_dpo", ...
    std::uint64_t seed = 0;
    long step = 0;
    nlohmann::json extra = nlohmann::json::object();
};

void save_denoiser(const std::filesystem::path& path, const DenoiserParams& params, const NoiseSchedule& sched,
                   const CheckpointInfo& info);

struct LoadedDenoiser {
    DenoiserParams params;
    NoiseSchedule sched = NoiseSchedule::linear();
    CheckpointInfo info;
};
LoadedDenoiser load_denoiser(const std::filesystem::path& path);

// The x0 estimator is referenced by path (header "x0_estimator").
void save_scorer(const std::filesystem::path& path, const PreferenceScorer& scorer,
                 const std::string& estimator_path, const CheckpointInfo& info);

struct LoadedScorer {
    PreferenceScorer scorer;
    std::string estimator_path;
    CheckpointInfo info;
};
// Relative estimator paths resolve against the scorer file's directory.
LoadedScorer load_scorer(const std::filesystem::path& path);

// Values as stored: every parameter rounded to float32.
std::vector<double> round_to_float(std::span<const double> values);

}  // namespace spo
