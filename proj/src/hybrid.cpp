#include "hermes/hybrid.hpp"

#include "hermes/csv.hpp"

#include <json.hpp>

#include <exception>
#include <fstream>

namespace hermes::hybrid {

namespace {

using corrector::CorrectorExample;
using corrector::CorrectorInput;

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

void apply_corrector(const corrector::LstmParams &params, const CorrectorInput &input, HybridForecast &out) {
	out.rnn = corrector::lstm_forward(params, input);
	out.window_mean = input.window_mean;
	out.corr.resize(out.rnn.size());
	for (std::size_t j = 0; j < out.rnn.size(); ++j) {
		out.corr[j] = out.rnn[j] * input.window_mean;
	}
	out.combined = corrector::recombine(out.pred, out.rnn, input.window_mean);
	out.corrected = true;
}

void leave_uncorrected(HybridForecast &out) {
	out.rnn.clear();
	out.corr.assign(out.pred.size(), 0.0);
	out.combined = out.pred;
	out.corrected = false;
}

std::span<const std::vector<double>> weak_for(const PipelineInputs &inputs, const PipelineConfig &config,
                                              std::size_t series) {
	if (!config.use_weak_signals) {
		return {};
	}
	const auto &id = inputs.panel.series[series].id;
	const auto *channels = inputs.weak.find(id);
	if (channels == nullptr) {
		throw std::invalid_argument("weak signals requested but series '" + id + "' has none");
	}
	return *channels;
}

struct Job {
	std::size_t series;
	std::size_t cut;
	SplitTag split;
};

std::size_t limit_for(SplitTag split, std::size_t length, std::size_t h) {
	switch (split) {
	case SplitTag::train_target:
		return length - 2 * h;
	case SplitTag::eval:
		return length - h;
	case SplitTag::test:
		return length;
	}
	return 0;
}

} // namespace

std::string_view to_string(SplitTag tag) {
	switch (tag) {
	case SplitTag::train_target:
		return "train";
	case SplitTag::eval:
		return "eval";
	case SplitTag::test:
		return "test";
	}
	return "unknown";
}

void PipelineConfig::validate() const {
	if (horizon == 0 || window == 0) {
		throw std::invalid_argument("pipeline config: horizon and window must be positive");
	}
	if (window % horizon != 0) {
		throw std::invalid_argument("pipeline config: window " + std::to_string(window) +
		                            " must be a multiple of the horizon " + std::to_string(horizon));
	}
	if (seasonal_period == 0 || mase_period == 0) {
		throw std::invalid_argument("pipeline config: seasonal periods must be at least 1");
	}
	if (seeds.empty()) {
		throw std::invalid_argument("pipeline config: at least one seed is required");
	}
	if (!(trend_threshold >= 0.0 && trend_threshold < 1.0)) {
		throw std::invalid_argument("pipeline config: trend threshold must lie in [0, 1)");
	}
	train.validate();
}

nlohmann::json to_json(const PipelineConfig &c) {
	nlohmann::json j;
	j["predictor"] = std::string(predictors::to_string(c.predictor));
	j["seasonal_period"] = c.seasonal_period;
	j["mase_period"] = c.mase_period;
	j["horizon"] = c.horizon;
	j["window"] = c.window;
	j["use_weak_signals"] = c.use_weak_signals;
	j["use_corrector"] = c.use_corrector;
	j["seeds"] = c.seeds;
	j["trend_threshold"] = c.trend_threshold;
	j["train"] = {{"loss", std::string(corrector::to_string(c.train.loss))},
	              {"learning_rate", c.train.learning_rate},
	              {"batch_size", c.train.batch_size},
	              {"max_epochs", c.train.max_epochs},
	              {"patience", c.train.patience},
	              {"n_windows", c.train.n_windows},
	              {"hidden", c.train.hidden},
	              {"layers", c.train.layers},
	              {"clip_norm", c.train.clip_norm}};
	j["tbats"] = {{"allow_log", c.fit_options.tbats.allow_log},
	              {"max_harmonics", c.fit_options.tbats.max_harmonics},
	              {"max_arma_order", c.fit_options.tbats.max_arma_order}};
	return j;
}

HybridForecast hermes_forecast(const predictors::PredictorFit &fit, const corrector::LstmParams &params,
                               std::span<const double> history, std::span<const std::vector<double>> weak,
                               std::size_t h, std::size_t w) {
	if (fit.history_length != history.size()) {
		throw std::invalid_argument("hermes_forecast: the predictor was fitted on " +
		                            std::to_string(fit.history_length) + " observations, history has " +
		                            std::to_string(history.size()));
	}
	if (params.shape.horizon != h) {
		throw std::invalid_argument("hermes_forecast: corrector horizon differs from h");
	}
	HybridForecast out;
	out.origin = history.size();
	out.pred = predictors::forecast_predictor(fit, h);
	auto input = corrector::build_z_input(history, out.pred, w, h);
	if (!weak.empty()) {
		input = corrector::build_concat_input(input, weak);
	}
	if (input.width != params.shape.input_width) {
		throw std::invalid_argument("hermes_forecast: corrector expects " + std::to_string(params.shape.input_width) +
		                            " input channels, got " + std::to_string(input.width));
	}
	apply_corrector(params, input, out);
	return out;
}

void LeakageAudit::check(std::size_t consumed_end, std::size_t cut, std::string_view what) {
	++checks;
	if (consumed_end > cut) {
		throw LeakageError("leakage: " + std::string(what) + " reads index " + std::to_string(consumed_end - 1) +
		                   " at or past cut " + std::to_string(cut));
	}
}

std::vector<CorrectorExample> PreparedPipeline::train_examples() const {
	std::vector<CorrectorExample> out;
	for (const auto &item : train) {
		if (item.example) {
			out.push_back(*item.example);
		}
	}
	return out;
}

std::vector<CorrectorExample> PreparedPipeline::eval_examples() const {
	std::vector<CorrectorExample> out;
	for (const auto &item : eval) {
		if (item.example) {
			out.push_back(*item.example);
		}
	}
	return out;
}

PreparedPipeline prepare_pipeline(const PipelineInputs &inputs, const PipelineConfig &config) {
	config.validate();
	const auto &panel = inputs.panel;
	if (panel.empty()) {
		throw std::invalid_argument("prepare_pipeline: empty panel");
	}
	if (inputs.scale_history != nullptr && inputs.scale_history->size() != panel.size()) {
		throw std::invalid_argument("prepare_pipeline: scale histories do not match the panel");
	}
	if (config.use_weak_signals && inputs.weak.num_channels == 0) {
		throw std::invalid_argument("prepare_pipeline: weak signals requested but none were loaded");
	}
	const std::size_t h = config.horizon;
	const std::size_t w = config.window;
	const std::size_t m = config.seasonal_period;
	const std::size_t needed = std::max(w, predictors::min_history(config.predictor, m));
	if (panel.aligned() && panel.common_length() < 3 * h + needed) {
		throw std::invalid_argument("prepare_pipeline: series length " + std::to_string(panel.common_length()) +
		                            " is below 3h + max(w, predictor minimum) = " + std::to_string(3 * h + needed));
	}

	PreparedPipeline prepared;
	std::vector<Job> jobs;
	prepared.status.resize(panel.size());
	for (std::size_t i = 0; i < panel.size(); ++i) {
		const auto &s = panel.series[i];
		prepared.status[i].id = s.id;
		const std::size_t length = s.length();
		if (length < h + predictors::min_history(config.predictor, m) || length < h + m) {
			prepared.status[i].excluded = true;
			prepared.status[i].reason = "series too short for a test forecast";
			continue;
		}
		if (length >= 3 * h) {
			auto cuts = store::rolling_windows(length - 3 * h, config.train.n_windows, h, needed);
			prepared.dropped_windows += cuts.dropped;
			for (const auto cut : cuts.cuts) {
				jobs.push_back({i, cut, SplitTag::train_target});
			}
		}
		if (length >= 2 * h + needed) {
			jobs.push_back({i, length - 2 * h, SplitTag::eval});
		}
		jobs.push_back({i, length - h, SplitTag::test});
	}

	std::vector<std::span<const double>> spans;
	std::vector<std::size_t> cuts;
	spans.reserve(jobs.size());
	cuts.reserve(jobs.size());
	for (const auto &job : jobs) {
		spans.emplace_back(panel.series[job.series].values);
		cuts.push_back(job.cut);
	}
	auto batch = predictors::fit_forecast_all(config.predictor, spans, cuts, m, h, config.fit_options);

	std::vector<std::span<const double>> retry_spans;
	std::vector<std::size_t> retry_cuts;
	std::vector<std::size_t> retry_index;
	for (std::size_t k = 0; k < jobs.size(); ++k) {
		if (!batch[k].fit) {
			retry_spans.push_back(spans[k]);
			retry_cuts.push_back(cuts[k]);
			retry_index.push_back(k);
		}
	}
	std::vector<bool> fell_back(jobs.size(), false);
	if (!retry_index.empty()) {
		auto retry = predictors::fit_forecast_all(predictors::PredictorKind::snaive, retry_spans, retry_cuts, m, h);
		for (std::size_t r = 0; r < retry_index.size(); ++r) {
			const std::size_t k = retry_index[r];
			const auto &job = jobs[k];
			auto &status = prepared.status[job.series];
			if (!retry[r].fit) {
				if (job.split == SplitTag::test) {
					status.excluded = true;
					status.reason = batch[k].error + "; snaive fallback failed: " + retry[r].error;
				}
				continue;
			}
			status.fallback = true;
			if (status.reason.empty()) {
				status.reason = batch[k].error;
			}
			fell_back[k] = true;
			batch[k].fit = std::move(retry[r].fit);
			batch[k].forecast = std::move(retry[r].forecast);
		}
	}

	std::vector<std::span<const double>> test_spans;
	std::vector<std::size_t> test_cuts;
	for (std::size_t k = 0; k < jobs.size(); ++k) {
		const auto &job = jobs[k];
		if (!batch[k].fit || prepared.status[job.series].excluded) {
			continue;
		}
		const auto &values = panel.series[job.series].values;
		const std::size_t length = values.size();
		prepared.audit.check(batch[k].fit->history_length, job.cut, "predictor fit");
		prepared.audit.check(job.cut + h, limit_for(job.split, length, h), "stage target");

		StageItem item;
		item.series = job.series;
		item.cut = job.cut;
		item.split = job.split;
		item.pred = std::move(batch[k].forecast);
		item.fallback = fell_back[k];
		if (item.fallback) {
			item.note = "predictor fallback";
		} else if (job.cut >= w) {
			std::span<const double> history(values.data(), job.cut);
			try {
				auto input = corrector::build_z_input(history, item.pred, w, h);
				prepared.audit.check(input.origin, job.cut, "z window");
				auto weak = weak_for(inputs, config, job.series);
				if (!weak.empty()) {
					for (const auto &channel : weak) {
						if (channel.size() < job.cut) {
							throw std::invalid_argument("weak channel shorter than the forecast origin");
						}
					}
					input = corrector::build_concat_input(input, weak);
					prepared.audit.check(input.origin, job.cut, "weak window");
				}
				CorrectorExample example;
				example.input = std::move(input);
				example.target.assign(values.begin() + static_cast<std::ptrdiff_t>(job.cut),
				                      values.begin() + static_cast<std::ptrdiff_t>(job.cut + h));
				example.pred_forecast = item.pred;
				item.example = std::move(example);
			} catch (const std::domain_error &e) {
				item.note = e.what();
			}
		} else {
			item.note = "history shorter than the window";
		}

		switch (job.split) {
		case SplitTag::train_target:
			prepared.train.push_back(std::move(item));
			break;
		case SplitTag::eval:
			prepared.eval.push_back(std::move(item));
			break;
		case SplitTag::test:
			test_spans.emplace_back(values);
			test_cuts.push_back(job.cut);
			prepared.test.push_back(std::move(item));
			break;
		}
	}

	// A series whose predictor failed at any cut contributes no corrector examples.
	auto drop_fallbacks = [&](std::vector<StageItem> &items) {
		for (auto &item : items) {
			if (prepared.status[item.series].fallback && item.example) {
				item.example.reset();
				item.note = "series excluded after a predictor fallback";
			}
		}
	};
	drop_fallbacks(prepared.train);
	drop_fallbacks(prepared.eval);

	auto baseline = predictors::fit_forecast_all(predictors::PredictorKind::snaive, test_spans, test_cuts,
	                                             config.mase_period, h);
	prepared.snaive_test.reserve(baseline.size());
	for (std::size_t k = 0; k < baseline.size(); ++k) {
		if (!baseline[k].fit) {
			throw std::runtime_error("baseline forecast failed for '" + panel.series[prepared.test[k].series].id +
			                         "': " + baseline[k].error);
		}
		prepared.snaive_test.push_back(std::move(baseline[k].forecast));
	}
	return prepared;
}

std::vector<metrics::SeriesScore> score_test(const PipelineInputs &inputs, const PreparedPipeline &prepared,
                                             std::span<const std::vector<double>> forecasts,
                                             const PipelineConfig &config) {
	if (forecasts.size() != prepared.test.size()) {
		throw std::invalid_argument("score_test: one forecast per test item is required");
	}
	const std::size_t h = config.horizon;
	std::vector<metrics::SeriesScore> scores;
	scores.reserve(forecasts.size());
	for (std::size_t k = 0; k < forecasts.size(); ++k) {
		const auto &item = prepared.test[k];
		const auto &values = inputs.panel.series[item.series].values;
		std::span<const double> truth(values.data() + item.cut, h);
		std::span<const double> history = inputs.scale_history != nullptr
		                                      ? std::span<const double>(inputs.scale_history->series[item.series].values)
		                                      : std::span<const double>(values.data(), item.cut);
		metrics::SeriesScore score;
		score.id = inputs.panel.series[item.series].id;
		score.fallback = item.fallback;
		try {
			score.mase = metrics::mase(history, truth, forecasts[k], config.mase_period);
		} catch (const metrics::ZeroScaleError &) {
			score.mase.reset();
		}
		score.smape = metrics::smape(truth, forecasts[k]);
		if (item.cut >= h) {
			std::span<const double> prev(values.data() + item.cut - h, h);
			try {
				score.true_label = metrics::classify_trend(prev, truth, config.trend_threshold);
				score.predicted_label = metrics::classify_trend(prev, forecasts[k], config.trend_threshold);
			} catch (const std::domain_error &) {
				score.true_label = metrics::TrendLabel::flat;
				score.predicted_label = metrics::TrendLabel::flat;
			}
		}
		scores.push_back(std::move(score));
	}
	return scores;
}

SeedRun run_seed(const PipelineInputs &inputs, const PreparedPipeline &prepared, const PipelineConfig &config,
                 std::uint64_t seed) {
	SeedRun run;
	run.seed = seed;
	const bool correct = config.use_corrector;
	if (correct) {
		auto train = prepared.train_examples();
		auto eval = prepared.eval_examples();
		if (train.empty() || eval.empty()) {
			throw std::runtime_error("run_seed: no corrector training or eval examples");
		}
		auto tc = config.train;
		tc.seed = seed;
		run.training = corrector::train_corrector(train, eval, tc);
	}

	std::vector<const StageItem *> items;
	for (const auto *split : {&prepared.train, &prepared.eval, &prepared.test}) {
		for (const auto &item : *split) {
			items.push_back(&item);
		}
	}
	run.forecasts.resize(items.size());
	std::exception_ptr failure;
#pragma omp parallel for schedule(dynamic, 8)
	for (std::ptrdiff_t k = 0; k < static_cast<std::ptrdiff_t>(items.size()); ++k) {
		const auto &item = *items[static_cast<std::size_t>(k)];
		auto &out = run.forecasts[static_cast<std::size_t>(k)];
		try {
			const auto &values = inputs.panel.series[item.series].values;
			out.id = inputs.panel.series[item.series].id;
			out.split = item.split;
			out.origin = item.cut;
			out.pred = item.pred;
			out.fallback = item.fallback;
			out.truth.assign(values.begin() + static_cast<std::ptrdiff_t>(item.cut),
			                 values.begin() + static_cast<std::ptrdiff_t>(item.cut + item.pred.size()));
			if (correct && item.example) {
				apply_corrector(run.training.params, item.example->input, out);
			} else {
				leave_uncorrected(out);
			}
		} catch (...) {
#pragma omp critical(hermes_forecast_failure)
			if (!failure) {
				failure = std::current_exception();
			}
		}
	}
	if (failure) {
		std::rethrow_exception(failure);
	}

	std::vector<std::vector<double>> test_forecasts;
	test_forecasts.reserve(prepared.test.size());
	for (const auto &f : run.forecasts) {
		if (f.split == SplitTag::test) {
			test_forecasts.push_back(f.combined);
		}
	}
	run.scores = score_test(inputs, prepared, test_forecasts, config);
	return run;
}

PipelineResult multi_seed_run(const PipelineInputs &inputs, const PipelineConfig &config) {
	PipelineResult result;
	result.config = config;
	result.prepared = prepare_pipeline(inputs, config);
	const auto &prepared = result.prepared;
	if (prepared.test.empty()) {
		throw std::runtime_error("no series produced a test forecast");
	}

	std::vector<std::vector<double>> pred;
	for (const auto &item : prepared.test) {
		pred.push_back(item.pred);
	}
	result.predictor_scores = score_test(inputs, prepared, pred, config);
	result.baseline_scores = score_test(inputs, prepared, prepared.snaive_test, config);
	const auto base = metrics::summarize(result.baseline_scores);
	std::optional<metrics::MetricPair> baseline;
	if (base.mean_smape > 0.0 && base.mean_mase > 0.0) {
		baseline = metrics::MetricPair{base.mean_smape, base.mean_mase};
	}
	const std::vector<std::vector<metrics::SeriesScore>> predictor_runs{result.predictor_scores};
	result.predictor_report = metrics::aggregate_report(predictor_runs, baseline);

	const std::vector<std::uint64_t> seeds =
	    config.use_corrector ? config.seeds : std::vector<std::uint64_t>{config.seeds.front()};
	std::vector<std::vector<metrics::SeriesScore>> hybrid_runs;
	for (const auto seed : seeds) {
		try {
			result.seeds.push_back(run_seed(inputs, prepared, config, seed));
			hybrid_runs.push_back(result.seeds.back().scores);
		} catch (const corrector::TrainingDiverged &e) {
			result.failed_seeds.push_back("seed " + std::to_string(seed) + ": " + e.what());
		}
	}
	if (hybrid_runs.empty()) {
		throw std::runtime_error("every seed diverged: " + result.failed_seeds.front());
	}
	result.hybrid_report = metrics::aggregate_report(hybrid_runs, baseline);
	return result;
}

PipelineResult run_pipeline(const PipelineInputs &inputs, const PipelineConfig &config) {
	auto single = config;
	single.seeds = {config.seeds.empty() ? std::uint64_t{0} : config.seeds.front()};
	return multi_seed_run(inputs, single);
}

bool recombination_holds(const HybridForecast &f) {
	if (f.combined.size() != f.pred.size()) {
		return false;
	}
	for (std::size_t j = 0; j < f.pred.size(); ++j) {
		const double expected = f.corrected ? f.pred[j] + f.rnn[j] * f.window_mean : f.pred[j];
		if (f.combined[j] != expected) {
			return false;
		}
	}
	return true;
}

void write_forecasts_csv(const std::filesystem::path &path, std::span<const HybridForecast> forecasts) {
	auto out = open_output(path);
	out << "id,split,origin,step,y_pred,y_corr,y_hat,y_true\n";
	for (const auto &f : forecasts) {
		for (std::size_t j = 0; j < f.pred.size(); ++j) {
			out << csv::quote(f.id) << ',' << to_string(f.split) << ',' << f.origin << ',' << (j + 1) << ','
			    << csv::format_double(f.pred[j]) << ',' << csv::format_double(f.corr[j]) << ','
			    << csv::format_double(f.combined[j]) << ','
			    << (j < f.truth.size() ? csv::format_double(f.truth[j]) : std::string()) << '\n';
		}
	}
}

nlohmann::json report_json(const PipelineResult &result) {
	nlohmann::json j;
	j["predictor"] = metrics::to_json(result.predictor_report);
	j["hybrid"] = metrics::to_json(result.hybrid_report);
	const auto &p = result.prepared;
	std::size_t excluded = 0;
	std::size_t fallback = 0;
	nlohmann::json notes = nlohmann::json::array();
	for (const auto &s : p.status) {
		excluded += s.excluded;
		fallback += s.fallback;
		if (s.excluded || s.fallback) {
			notes.push_back({{"id", s.id}, {"excluded", s.excluded}, {"fallback", s.fallback}, {"reason", s.reason}});
		}
	}
	j["counts"] = {{"series", p.status.size()},
	               {"test_series", p.test.size()},
	               {"excluded", excluded},
	               {"fallback", fallback},
	               {"train_examples", p.train_examples().size()},
	               {"eval_examples", p.eval_examples().size()},
	               {"dropped_windows", p.dropped_windows},
	               {"leakage_checks", p.audit.checks}};
	j["series_notes"] = std::move(notes);
	nlohmann::json seeds = nlohmann::json::array();
	for (const auto &s : result.seeds) {
		seeds.push_back({{"seed", s.seed},
		                 {"best_epoch", s.training.best_epoch},
		                 {"best_eval_loss", s.training.best_eval_loss},
		                 {"epochs", s.training.trace.size()}});
	}
	j["seeds"] = std::move(seeds);
	j["failed_seeds"] = result.failed_seeds;
	return j;
}

void write_run_directory(const std::filesystem::path &dir, const PipelineResult &result,
                         const nlohmann::json &config_snapshot) {
	std::filesystem::create_directories(dir);
	open_output(dir / "config.json") << config_snapshot.dump(2) << '\n';
	open_output(dir / "report.json") << report_json(result).dump(2) << '\n';
	metrics::write_series_csv(dir / "predictor_series.csv", result.predictor_scores);
	metrics::write_series_csv(dir / "baseline_series.csv", result.baseline_scores);
	metrics::write_confusion_csv(dir / "predictor_confusion.csv", result.predictor_report.confusion);
	for (const auto &run : result.seeds) {
		const auto seed_dir = dir / ("seed_" + std::to_string(run.seed));
		std::filesystem::create_directories(seed_dir);
		for (const auto split : {SplitTag::train_target, SplitTag::eval, SplitTag::test}) {
			std::vector<HybridForecast> subset;
			for (const auto &f : run.forecasts) {
				if (f.split == split) {
					subset.push_back(f);
				}
			}
			write_forecasts_csv(seed_dir / ("forecasts_" + std::string(to_string(split)) + ".csv"), subset);
		}
		if (result.config.use_corrector) {
			corrector::save_params(seed_dir / "params", run.training.params);
			corrector::write_trace_csv(seed_dir / "trace.csv", run.training.trace);
		}
		const auto summary = metrics::summarize(run.scores);
		open_output(seed_dir / "report.json") << metrics::to_json(summary).dump(2) << '\n';
		metrics::write_series_csv(seed_dir / "series.csv", run.scores);
		metrics::write_confusion_csv(seed_dir / "confusion.csv", summary.confusion);
	}
}

} // namespace hermes::hybrid
