#pragma once

#include "hermes/corrector.hpp"
#include "hermes/eval_metrics.hpp"
#include "hermes/predictors.hpp"
#include "hermes/timeseries_store.hpp"

#include <json.hpp>

#include <cstdint>
#include <filesystem>
#include <optional>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

namespace hermes::hybrid {

enum class SplitTag { train_target, eval, test };

std::string_view to_string(SplitTag tag);

struct PipelineConfig {
	predictors::PredictorKind predictor = predictors::PredictorKind::hw_ets;
	std::size_t seasonal_period = 52; // predictor m
	std::size_t mase_period = 52;
	std::size_t horizon = 52;
	std::size_t window = 104;
	corrector::TrainConfig train;
	bool use_weak_signals = false;
	bool use_corrector = true;
	std::vector<std::uint64_t> seeds{0};
	double trend_threshold = 0.05;
	predictors::FitOptions fit_options;

	void validate() const;
};

nlohmann::json to_json(const PipelineConfig &config);

/// ŷ = ŷ_pred + ŷ_corr with ŷ_corr = RNN(x) * ybar.
struct HybridForecast {
	std::string id;
	SplitTag split = SplitTag::test;
	std::size_t origin = 0;
	std::vector<double> pred;
	std::vector<double> rnn; // raw network output, empty when no correction was applied
	std::vector<double> corr;
	std::vector<double> combined;
	std::vector<double> truth; // empty when the target lies past the data
	double window_mean = 0.0;
	bool corrected = false;
	bool fallback = false;
};

/**
 * One hybrid forecast from a fitted predictor and a trained corrector.
 * `history` holds the observations up to the origin the predictor was fitted
 * on; `weak` holds the series' weak channels (any length >= origin).
 */
HybridForecast hermes_forecast(const predictors::PredictorFit &fit, const corrector::LstmParams &corrector,
                               std::span<const double> history, std::span<const std::vector<double>> weak,
                               std::size_t h, std::size_t w);

/// Consumed data crossed a stage cut.
class LeakageError : public std::logic_error {
public:
	using std::logic_error::logic_error;
};

/**
 * Records every (consumed end, stage cut) pair the pipeline checks. Throws
 * on the first index at or past its cut.
 */
struct LeakageAudit {
	std::size_t checks = 0;

	void check(std::size_t consumed_end, std::size_t cut, std::string_view what);
};

/// A stage job: one predictor fit at one cut for one series.
struct StageItem {
	std::size_t series = 0;
	std::size_t cut = 0;
	SplitTag split = SplitTag::test;
	std::vector<double> pred;
	bool fallback = false;
	std::optional<corrector::CorrectorExample> example; // absent for fallbacks or unusable windows
	std::string note;
};

struct SeriesStatus {
	std::string id;
	bool excluded = false; // no forecast could be produced at the test cut
	bool fallback = false;
	std::string reason;
};

/// Stage-1/2/3 predictor products; independent of the corrector seed.
struct PreparedPipeline {
	std::vector<StageItem> train;
	std::vector<StageItem> eval;
	std::vector<StageItem> test;
	std::vector<SeriesStatus> status;
	std::vector<std::vector<double>> snaive_test; // baseline forecasts for OWA, aligned with `test`
	LeakageAudit audit;
	std::size_t dropped_windows = 0;

	std::vector<corrector::CorrectorExample> train_examples() const;
	std::vector<corrector::CorrectorExample> eval_examples() const;
};

/**
 * Optional per-series MASE scale histories (e.g. the unresized M4 training
 * series). Series i of `scale_history` pairs with series i of the panel.
 */
struct PipelineInputs {
	const store::TimePanel &panel;
	const store::WeakSignalPanel &weak;
	const store::TimePanel *scale_history = nullptr;
};

PreparedPipeline prepare_pipeline(const PipelineInputs &inputs, const PipelineConfig &config);

struct SeedRun {
	std::uint64_t seed = 0;
	corrector::TrainResult training;
	std::vector<HybridForecast> forecasts; // train-target, eval and test splits
	std::vector<metrics::SeriesScore> scores; // hybrid scores on the test split
};

struct PipelineResult {
	PipelineConfig config;
	PreparedPipeline prepared;
	std::vector<metrics::SeriesScore> predictor_scores;
	std::vector<metrics::SeriesScore> baseline_scores;
	metrics::EvalReport predictor_report;
	metrics::EvalReport hybrid_report;
	std::vector<SeedRun> seeds;
	std::vector<std::string> failed_seeds;
};

SeedRun run_seed(const PipelineInputs &inputs, const PreparedPipeline &prepared, const PipelineConfig &config,
                 std::uint64_t seed);

/// Single run with config.seeds.front().
PipelineResult run_pipeline(const PipelineInputs &inputs, const PipelineConfig &config);

/// Stage-1 products computed once; one corrector per seed; mean and sample std across seeds.
PipelineResult multi_seed_run(const PipelineInputs &inputs, const PipelineConfig &config);

/// Test-split scores of a set of forecasts (predictor-only or hybrid).
std::vector<metrics::SeriesScore> score_test(const PipelineInputs &inputs, const PreparedPipeline &prepared,
                                             std::span<const std::vector<double>> forecasts,
                                             const PipelineConfig &config);

/// Recomputes pred + rnn * ybar and compares bit-exactly; false on any mismatch.
bool recombination_holds(const HybridForecast &forecast);

void write_forecasts_csv(const std::filesystem::path &path, std::span<const HybridForecast> forecasts);

/**
 * Run directory layout:
 *   config.json, report.json, predictor_series.csv, baseline_series.csv,
 *   seed_<s>/{forecasts_<split>.csv, params.bin, params.json, trace.csv,
 *             report.json, series.csv, confusion.csv}
 */
void write_run_directory(const std::filesystem::path &dir, const PipelineResult &result,
                         const nlohmann::json &config_snapshot);

nlohmann::json report_json(const PipelineResult &result);

} // namespace hermes::hybrid
