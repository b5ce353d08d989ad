#pragma once

#include "hermes/eval_metrics.hpp"
#include "hermes/hybrid.hpp"
#include "hermes/timeseries_store.hpp"

#include <json.hpp>

#include <cstdint>
#include <filesystem>
#include <iosfwd>
#include <optional>
#include <stdexcept>
#include <string>
#include <vector>

namespace hermes::cli {

inline constexpr int kExitOk = 0;
inline constexpr int kExitConfig = 1;
inline constexpr int kExitRun = 2;

/// Invalid or incomplete configuration; maps to exit code 1.
class ConfigError : public std::runtime_error {
public:
	using std::runtime_error::runtime_error;
};

// ---------------------------------------------------------------------------
// Synthetic panels
// ---------------------------------------------------------------------------

struct SynthConfig {
	std::size_t n_series = 200;
	std::size_t length = 261;
	std::uint64_t seed = 0;
	double shift_fraction = 0.3;      // series shifted in the final year
	double background_fraction = 0.3; // per earlier year, shifts that give the corrector examples
	std::size_t background_years = 2;
	std::size_t lead_min = 8;
	std::size_t lead_max = 16;
	double shift_min = 0.25; // relative level change |delta|
	double shift_max = 0.5;
	double amplitude_min = 0.2;
	double amplitude_max = 0.5;
	double level_min = 50.0;
	double level_max = 150.0;
	double trend_max = 0.15; // |yearly relative drift|
	double noise = 0.03;     // relative to the level
	double attenuation = 0.8;
	double weak_noise = 0.005;

	void validate() const;
};

struct SynthShift {
	std::size_t week = 0; // 0-based index of the first shifted step
	std::size_t lead = 0;
	double delta = 0.0;
	bool final_year = false;
};

struct SynthSeriesInfo {
	std::string id;
	double level = 0.0;
	double amplitude = 0.0;
	double phase = 0.0;
	double trend = 0.0; // per step, in series units
	std::vector<SynthShift> shifts;
};

struct SynthPanel {
	store::TimePanel panel;
	store::WeakSignalPanel weak;
	std::vector<SynthSeriesInfo> info;
};

/**
 * y_t = level * (1 + a sin(2 pi t / 52 + phi)) * M_t + trend * t + noise,
 * where M_t multiplies in (1 + delta) from each shift week on. The weak
 * channel is the forward ratio M_{t+L} / (M_{t+L} + M_t), pulled toward 0.5
 * by `attenuation` and perturbed by `weak_noise`.
 */
SynthPanel generate_synthetic(const SynthConfig &config);

/// Writes `<path>`, its weak-signal sibling and `<stem>.meta.json`.
void write_synthetic(const std::filesystem::path &path, const SynthPanel &panel);

nlohmann::json to_json(const SynthConfig &config);
SynthConfig synth_config_from_json(const nlohmann::json &j);

// ---------------------------------------------------------------------------
// Run configuration
// ---------------------------------------------------------------------------

enum class DatasetKind { fashion, m4_weekly, synthetic };

std::string_view to_string(DatasetKind kind);

struct DatasetConfig {
	DatasetKind kind = DatasetKind::synthetic;
	std::filesystem::path path;                 // fashion panel or M4 train file
	std::optional<std::filesystem::path> test_path; // M4 test file
	std::vector<std::filesystem::path> weak_paths;  // empty: the `<stem>.weak.csv` sibling, if present
	std::optional<std::size_t> expected_length;
	std::size_t resize_length = 300;
	std::size_t resize_period = 52;
	SynthConfig synth;
};

struct GridAxes {
	std::vector<corrector::LossKind> losses;
	std::vector<double> learning_rates;
	std::vector<std::size_t> batch_sizes;
	std::vector<std::size_t> n_windows;

	bool empty() const;
	std::size_t cells() const;
};

struct RunConfig {
	DatasetConfig dataset;
	hybrid::PipelineConfig pipeline;
	std::filesystem::path output_dir = "hermes_run";
	GridAxes grid;
	std::size_t max_plot_series = 0; // 0 writes plot data for every series
};

/**
 * Parses a run configuration. Relative paths resolve against `base_dir`.
 * Dataset-specific defaults (h, w, periods) apply before explicit values.
 */
RunConfig parse_run_config(const nlohmann::json &j, const std::filesystem::path &base_dir = {});
RunConfig load_run_config(const std::filesystem::path &path);
nlohmann::json to_json(const RunConfig &config);

struct LoadedData {
	store::TimePanel panel;
	store::WeakSignalPanel weak;
	std::optional<store::TimePanel> scale_history;
};

LoadedData load_dataset(const DatasetConfig &config);

/**
 * Resizes every M4 training series to `length` and appends its test values.
 * The unresized training series become the MASE scale histories.
 */
LoadedData prepare_m4(const store::TimePanel &train, const store::TimePanel &test, std::size_t length,
                      std::size_t period);

// ---------------------------------------------------------------------------
// Commands
// ---------------------------------------------------------------------------

hybrid::PipelineResult cmd_run(const RunConfig &config, std::ostream &log);

struct GridCell {
	corrector::LossKind loss = corrector::LossKind::SMAE;
	double learning_rate = 0.0;
	std::size_t batch_size = 0;
	std::size_t n_windows = 0;
	std::optional<metrics::MeanStd> metric;
	std::string error;
	std::filesystem::path dir;
};

/// One multi-seed run per cell; sorted ascending by mean metric, failed cells last.
std::vector<GridCell> cmd_grid_search(const RunConfig &config, std::ostream &log);

void write_grid_csv(const std::filesystem::path &path, std::span<const GridCell> cells, std::string_view metric);

SynthPanel cmd_synth(const SynthConfig &config, const std::filesystem::path &output);

/// Resizes an M4 file (plus optional test file) and writes the prepared panel and a length manifest.
store::TimePanel cmd_m4_prep(const std::filesystem::path &train, const std::optional<std::filesystem::path> &test,
                             const std::filesystem::path &output_dir, std::size_t length = 300,
                             std::size_t period = 52);

/**
 * Scores externally produced test forecasts (CSV with id, step and a value
 * column) against the configured dataset. Writes report.json, series.csv and
 * confusion.csv to `output_dir`.
 */
metrics::EvalReport cmd_evaluate(const RunConfig &config, const std::filesystem::path &forecasts,
                                 const std::string &column, const std::filesystem::path &output_dir);

/// `plots/<id>.csv` for each series: t, history, y_pred, y_hat, truth.
void write_plot_data(const std::filesystem::path &dir, const store::TimePanel &panel,
                     std::span<const hybrid::HybridForecast> forecasts, std::size_t max_series);

} // namespace hermes::cli
