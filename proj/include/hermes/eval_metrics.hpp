#pragma once

#include <json.hpp>

#include <array>
#include <cstddef>
#include <filesystem>
#include <optional>
#include <span>
#include <stdexcept>
#include <string>
#include <string_view>
#include <vector>

namespace hermes::metrics {

/// The in-sample seasonal-naive error is zero (constant or exactly periodic history).
class ZeroScaleError : public std::domain_error {
public:
	using std::domain_error::domain_error;
};

enum class TrendLabel { decreasing = 0, flat = 1, increasing = 2 };

std::string_view to_string(TrendLabel label);

/**
 * Mean absolute scaled error:
 *   ((T-m)/h) * sum_j |y_true_j - y_pred_j| / sum_{i=m+1..T} |Y_i - Y_{i-m}|
 */
double mase(std::span<const double> history, std::span<const double> y_true, std::span<const double> y_pred,
            std::size_t m);

/// M4 sMAPE in percent: (200/h) sum |y - yhat| / (|y| + |yhat|); 0/0 steps contribute 0.
double smape(std::span<const double> y_true, std::span<const double> y_pred);

struct MetricPair {
	double smape = 0.0;
	double mase = 0.0;
};

/// 0.5 * (smape/smape_base + mase/mase_base).
double owa(MetricPair model, MetricPair baseline);

/// Year-over-year label with a symmetric threshold; the boundary itself is flat.
TrendLabel classify_trend(std::span<const double> prev_year, std::span<const double> next_year,
                          double threshold = 0.05);

struct Confusion {
	/// counts[true][predicted], order (decreasing, flat, increasing).
	std::array<std::array<std::size_t, 3>, 3> counts{};
	double accuracy = 0.0;

	std::size_t total() const;
	std::size_t true_count(TrendLabel label) const;
};

Confusion confusion_and_accuracy(std::span<const TrendLabel> truth, std::span<const TrendLabel> predicted);

/// Per-series scores of one model on one run.
struct SeriesScore {
	std::string id;
	std::optional<double> mase; // empty when the MASE scale is zero
	double smape = 0.0;
	TrendLabel true_label = TrendLabel::flat;
	TrendLabel predicted_label = TrendLabel::flat;
	bool fallback = false; // predictor failed, snaive used instead
};

struct RunSummary {
	double mean_mase = 0.0;
	double mean_smape = 0.0;
	double accuracy = 0.0;
	std::size_t n_series = 0;
	std::size_t n_zero_scale = 0; // excluded from mean_mase
	std::size_t n_fallback = 0;
	Confusion confusion;
};

struct MeanStd {
	double mean = 0.0;
	double std = 0.0;
	std::size_t n = 0;
};

/// Unweighted mean and sample (n-1) standard deviation; std = 0 when n = 1.
MeanStd mean_std(std::span<const double> values);

struct EvalReport {
	std::vector<SeriesScore> series; // first seed's per-series scores
	std::vector<RunSummary> per_seed;
	MeanStd mase;
	MeanStd smape;
	MeanStd accuracy;
	std::optional<MeanStd> owa; // present when a baseline was supplied
	Confusion confusion;        // first seed's confusion matrix
};

RunSummary summarize(std::span<const SeriesScore> scores);

/**
 * Aggregates per-seed runs. `baseline` enables OWA, computed per seed from
 * the seed's mean sMAPE and mean MASE.
 */
EvalReport aggregate_report(std::span<const std::vector<SeriesScore>> per_seed_scores,
                            std::optional<MetricPair> baseline = std::nullopt);

nlohmann::json to_json(const EvalReport &report);
nlohmann::json to_json(const RunSummary &summary);
nlohmann::json to_json(const MeanStd &value);

void write_series_csv(const std::filesystem::path &path, std::span<const SeriesScore> scores);
void write_confusion_csv(const std::filesystem::path &path, const Confusion &confusion);

} // namespace hermes::metrics
