#pragma once

// Command implementations behind the CLI. Each writes its artifacts under
// the config's workspace and reports progress on `log`.

#include <filesystem>
#include <ostream>
#include <string>
#include <string_view>
#include <vector>

#include "spo/checkpoint.hpp"
#include "spo/config.hpp"
#include "spo/evaluation.hpp"

namespace spo {

// RFC 4180: fields containing a comma, quote, CR or LF are quoted, with
// embedded quotes doubled. Rows end in CRLF.
std::string csv_field(std::string_view s);
std::string csv_row(const std::vector<std::string>& fields);
// Shortest text that parses back to the same double.
std::string format_double(double v);

// Truncates `path` and writes the header row.
void csv_create(const std::filesystem::path& path, const std::vector<std::string>& header);
// Appends one row under an exclusive flock; writes the header first when
// the file is empty. Safe across processes.
void csv_append_locked(const std::filesystem::path& path, const std::vector<std::string>& header,
                       const std::vector<std::string>& row);

extern const std::vector<std::string> kTrainLogHeader;
extern const std::vector<std::string> kScorerReportHeader;
extern const std::vector<std::string> kEvalHeader;
extern const std::vector<std::string> kAblationHeader;

std::vector<std::string> train_log_fields(const TrainLogRow& r);

std::filesystem::path run_pretrain(const ExperimentConfig& c, std::ostream& log);
std::filesystem::path run_train_scorer(const ExperimentConfig& c, std::ostream& log);
std::filesystem::path run_spo(const ExperimentConfig& c, std::ostream& log);
std::filesystem::path run_baseline(const ExperimentConfig& c, std::ostream& log);
EvalReport run_eval(const ExperimentConfig& c, std::ostream& log);

struct AblationCell {
    std::string value;  // grid value as printed in the table
    ExperimentConfig config;
};

// The grid of the configured axis, each cell with its effective config.
std::vector<AblationCell> ablation_cells(const ExperimentConfig& c, int t_max);

struct AblationRow {
    std::string axis;
    std::string value;
    std::string config_hash;
    std::uint64_t seed = 0;
    std::size_t gradient_pairs = 0;
    std::size_t updates = 0;
    EvalReport eval;  // win-rate against the base
};

std::vector<std::string> ablation_fields(const AblationRow& r);

// Trains and evaluates one cell with the cell's scorer already loaded.
AblationRow run_ablation_cell(const AblationCell& cell, AblationAxis axis, const LoadedDenoiser& base,
                              const PreferenceScorer& scorer);

// Runs every cell of the axis, appending one table row per finished cell.
std::vector<AblationRow> run_ablation(const ExperimentConfig& c, std::ostream& log);

}  // namespace spo
