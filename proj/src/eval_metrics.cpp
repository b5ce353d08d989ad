#include "hermes/eval_metrics.hpp"

#include "hermes/csv.hpp"

#include <json.hpp>

#include <cmath>
#include <fstream>
#include <numeric>

namespace hermes::metrics {

namespace {

void require_same_length(std::span<const double> a, std::span<const double> b, const char *who) {
	if (a.size() != b.size()) {
		throw std::invalid_argument(std::string(who) + ": truth and prediction lengths differ");
	}
	if (a.empty()) {
		throw std::invalid_argument(std::string(who) + ": empty horizon");
	}
}

double mean(std::span<const double> v) {
	return std::accumulate(v.begin(), v.end(), 0.0) / static_cast<double>(v.size());
}

std::ofstream open_output(const std::filesystem::path &path) {
	if (path.has_parent_path()) {
		std::filesystem::create_directories(path.parent_path());
	}
	std::ofstream out(path, std::ios::binary);
	if (!out) {
		throw std::runtime_error("cannot write " + path.string());
	}
	return out;
}

} // namespace

std::string_view to_string(TrendLabel label) {
	switch (label) {
	case TrendLabel::decreasing:
		return "decreasing";
	case TrendLabel::flat:
		return "flat";
	case TrendLabel::increasing:
		return "increasing";
	}
	return "unknown";
}

double mase(std::span<const double> history, std::span<const double> y_true, std::span<const double> y_pred,
            std::size_t m) {
	require_same_length(y_true, y_pred, "mase");
	const std::size_t n = history.size();
	if (m == 0 || n <= m) {
		throw std::invalid_argument("mase: history length must exceed m");
	}
	double scale = 0.0;
	for (std::size_t i = m; i < n; ++i) {
		scale += std::abs(history[i] - history[i - m]);
	}
	if (!(scale > 0.0)) {
		throw ZeroScaleError("mase: zero seasonal-naive in-sample error");
	}
	double err = 0.0;
	for (std::size_t j = 0; j < y_true.size(); ++j) {
		err += std::abs(y_true[j] - y_pred[j]);
	}
	return static_cast<double>(n - m) / static_cast<double>(y_true.size()) * err / scale;
}

double smape(std::span<const double> y_true, std::span<const double> y_pred) {
	require_same_length(y_true, y_pred, "smape");
	double total = 0.0;
	for (std::size_t j = 0; j < y_true.size(); ++j) {
		const double denom = std::abs(y_true[j]) + std::abs(y_pred[j]);
		if (denom > 0.0) {
			total += std::abs(y_true[j] - y_pred[j]) / denom;
		}
	}
	return 200.0 / static_cast<double>(y_true.size()) * total;
}

double owa(MetricPair model, MetricPair baseline) {
	if (!(baseline.smape > 0.0) || !(baseline.mase > 0.0)) {
		throw std::domain_error("owa: baseline metrics must be positive");
	}
	return 0.5 * (model.smape / baseline.smape + model.mase / baseline.mase);
}

TrendLabel classify_trend(std::span<const double> prev_year, std::span<const double> next_year, double threshold) {
	if (prev_year.empty() || next_year.empty()) {
		throw std::invalid_argument("classify_trend: empty year");
	}
	const double prev = mean(prev_year);
	const double next = mean(next_year);
	if (!std::isfinite(prev) || !std::isfinite(next)) {
		throw std::domain_error("classify_trend: non-finite mean");
	}
	if (!(prev > 0.0)) {
		throw std::domain_error("classify_trend: previous-year mean must be positive");
	}
	const double ratio = next / prev;
	if (ratio > 1.0 + threshold) {
		return TrendLabel::increasing;
	}
	if (ratio < 1.0 - threshold) {
		return TrendLabel::decreasing;
	}
	return TrendLabel::flat;
}

std::size_t Confusion::total() const {
	std::size_t n = 0;
	for (const auto &row : counts) {
		n += std::accumulate(row.begin(), row.end(), std::size_t{0});
	}
	return n;
}

std::size_t Confusion::true_count(TrendLabel label) const {
	const auto &row = counts[static_cast<std::size_t>(label)];
	return std::accumulate(row.begin(), row.end(), std::size_t{0});
}

Confusion confusion_and_accuracy(std::span<const TrendLabel> truth, std::span<const TrendLabel> predicted) {
	if (truth.size() != predicted.size()) {
		throw std::invalid_argument("confusion_and_accuracy: label lengths differ");
	}
	if (truth.empty()) {
		throw std::invalid_argument("confusion_and_accuracy: empty input");
	}
	Confusion c;
	std::size_t hits = 0;
	for (std::size_t i = 0; i < truth.size(); ++i) {
		++c.counts[static_cast<std::size_t>(truth[i])][static_cast<std::size_t>(predicted[i])];
		hits += truth[i] == predicted[i];
	}
	c.accuracy = static_cast<double>(hits) / static_cast<double>(truth.size());
	return c;
}

MeanStd mean_std(std::span<const double> values) {
	MeanStd out;
	out.n = values.size();
	if (values.empty()) {
		return out;
	}
	out.mean = mean(values);
	if (values.size() > 1) {
		double ss = 0.0;
		for (const double v : values) {
			ss += (v - out.mean) * (v - out.mean);
		}
		out.std = std::sqrt(ss / static_cast<double>(values.size() - 1));
	}
	return out;
}

RunSummary summarize(std::span<const SeriesScore> scores) {
	if (scores.empty()) {
		throw std::invalid_argument("summarize: no series");
	}
	RunSummary s;
	s.n_series = scores.size();
	double mase_sum = 0.0;
	double smape_sum = 0.0;
	std::size_t mase_count = 0;
	std::vector<TrendLabel> truth;
	std::vector<TrendLabel> predicted;
	for (const auto &score : scores) {
		if (score.mase) {
			mase_sum += *score.mase;
			++mase_count;
		} else {
			++s.n_zero_scale;
		}
		s.n_fallback += score.fallback;
		smape_sum += score.smape;
		truth.push_back(score.true_label);
		predicted.push_back(score.predicted_label);
	}
	s.mean_mase = mase_count > 0 ? mase_sum / static_cast<double>(mase_count) : std::numeric_limits<double>::quiet_NaN();
	s.mean_smape = smape_sum / static_cast<double>(scores.size());
	s.confusion = confusion_and_accuracy(truth, predicted);
	s.accuracy = s.confusion.accuracy;
	return s;
}

EvalReport aggregate_report(std::span<const std::vector<SeriesScore>> per_seed_scores, std::optional<MetricPair> baseline) {
	if (per_seed_scores.empty()) {
		throw std::invalid_argument("aggregate_report: no runs");
	}
	EvalReport report;
	report.series = per_seed_scores.front();
	std::vector<double> mases;
	std::vector<double> smapes;
	std::vector<double> accuracies;
	std::vector<double> owas;
	for (const auto &scores : per_seed_scores) {
		auto summary = summarize(scores);
		mases.push_back(summary.mean_mase);
		smapes.push_back(summary.mean_smape);
		accuracies.push_back(summary.accuracy);
		if (baseline) {
			owas.push_back(owa({summary.mean_smape, summary.mean_mase}, *baseline));
		}
		report.per_seed.push_back(std::move(summary));
	}
	report.mase = mean_std(mases);
	report.smape = mean_std(smapes);
	report.accuracy = mean_std(accuracies);
	if (baseline) {
		report.owa = mean_std(owas);
	}
	report.confusion = report.per_seed.front().confusion;
	return report;
}

nlohmann::json to_json(const MeanStd &value) {
	return {{"mean", value.mean}, {"std", value.std}, {"n", value.n}};
}

namespace {

nlohmann::json confusion_json(const Confusion &c) {
	nlohmann::json rows = nlohmann::json::array();
	for (const auto &row : c.counts) {
		rows.push_back(row);
	}
	return {{"order", {"decreasing", "flat", "increasing"}}, {"counts", rows}, {"accuracy", c.accuracy}};
}

} // namespace

nlohmann::json to_json(const RunSummary &s) {
	nlohmann::json j;
	j["mean_mase"] = s.mean_mase;
	j["mean_smape"] = s.mean_smape;
	j["accuracy"] = s.accuracy;
	j["n_series"] = s.n_series;
	j["n_zero_scale"] = s.n_zero_scale;
	j["n_fallback"] = s.n_fallback;
	j["confusion"] = confusion_json(s.confusion);
	return j;
}

nlohmann::json to_json(const EvalReport &report) {
	nlohmann::json j;
	j["mase"] = to_json(report.mase);
	j["smape"] = to_json(report.smape);
	j["accuracy"] = to_json(report.accuracy);
	if (report.owa) {
		j["owa"] = to_json(*report.owa);
	}
	j["confusion"] = confusion_json(report.confusion);
	nlohmann::json seeds = nlohmann::json::array();
	for (const auto &s : report.per_seed) {
		seeds.push_back(to_json(s));
	}
	j["per_seed"] = std::move(seeds);
	return j;
}

void write_series_csv(const std::filesystem::path &path, std::span<const SeriesScore> scores) {
	auto out = open_output(path);
	out << "id,mase,smape,true_label,predicted_label,fallback\n";
	for (const auto &s : scores) {
		out << csv::quote(s.id) << ',' << (s.mase ? csv::format_double(*s.mase) : std::string()) << ','
		    << csv::format_double(s.smape) << ',' << to_string(s.true_label) << ',' << to_string(s.predicted_label) << ','
		    << (s.fallback ? 1 : 0) << '\n';
	}
}

void write_confusion_csv(const std::filesystem::path &path, const Confusion &confusion) {
	auto out = open_output(path);
	out << "true\\predicted,decreasing,flat,increasing\n";
	for (std::size_t r = 0; r < 3; ++r) {
		out << to_string(static_cast<TrendLabel>(r));
		for (std::size_t c = 0; c < 3; ++c) {
			out << ',' << confusion.counts[r][c];
		}
		out << '\n';
	}
}

} // namespace hermes::metrics
