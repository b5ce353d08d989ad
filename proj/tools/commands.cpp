#include "hermes/cli.hpp"

#include "hermes/csv.hpp"

#include <algorithm>
#include <fstream>
#include <map>
#include <ostream>
#include <set>
#include <sstream>

namespace hermes::cli {

namespace {

using nlohmann::json;

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

void require_keys(const json &j, std::initializer_list<const char *> allowed, const std::string &where) {
	if (!j.is_object()) {
		throw ConfigError(where + " must be a JSON object");
	}
	for (const auto &[key, value] : j.items()) {
		if (std::none_of(allowed.begin(), allowed.end(), [&](const char *a) { return key == a; })) {
			throw ConfigError(where + ": unknown key '" + key + "'");
		}
	}
}

std::filesystem::path resolve(const std::filesystem::path &base, const std::string &p) {
	std::filesystem::path path(p);
	if (path.is_absolute() || base.empty()) {
		return path;
	}
	return base / path;
}

DatasetKind parse_dataset_kind(const std::string &name) {
	if (name == "fashion") {
		return DatasetKind::fashion;
	}
	if (name == "m4-weekly" || name == "m4") {
		return DatasetKind::m4_weekly;
	}
	if (name == "synthetic") {
		return DatasetKind::synthetic;
	}
	throw ConfigError("unknown dataset kind '" + name + "'");
}

template <typename T>
std::vector<T> axis(const json &grid, const char *key, T fallback) {
	if (!grid.contains(key)) {
		return {fallback};
	}
	auto values = grid.at(key).get<std::vector<T>>();
	if (values.empty()) {
		throw ConfigError(std::string("grid axis '") + key + "' is empty");
	}
	return values;
}

std::string sanitize(const std::string &id) {
	std::string out;
	for (const char c : id) {
		const bool ok = (c >= 'a' && c <= 'z') || (c >= 'A' && c <= 'Z') || (c >= '0' && c <= '9') || c == '-' || c == '_';
		out.push_back(ok ? c : '_');
	}
	return out.empty() ? "series" : out;
}

std::string metric_name(DatasetKind kind) {
	return kind == DatasetKind::m4_weekly ? "owa" : "mase";
}

} // namespace

std::string_view to_string(DatasetKind kind) {
	switch (kind) {
	case DatasetKind::fashion:
		return "fashion";
	case DatasetKind::m4_weekly:
		return "m4-weekly";
	case DatasetKind::synthetic:
		return "synthetic";
	}
	return "unknown";
}

bool GridAxes::empty() const {
	return losses.empty() || learning_rates.empty() || batch_sizes.empty() || n_windows.empty();
}

std::size_t GridAxes::cells() const {
	return losses.size() * learning_rates.size() * batch_sizes.size() * n_windows.size();
}

RunConfig parse_run_config(const json &j, const std::filesystem::path &base_dir) {
	require_keys(j, {"dataset", "output_dir", "pipeline", "train", "grid", "max_plot_series"}, "run config");
	RunConfig config;
	try {
		if (!j.contains("dataset")) {
			throw ConfigError("run config: missing 'dataset'");
		}
		const auto &d = j.at("dataset");
		require_keys(d, {"kind", "path", "test_path", "weak_paths", "expected_length", "resize_length", "resize_period", "synth"},
		             "dataset");
		auto &ds = config.dataset;
		ds.kind = parse_dataset_kind(d.value("kind", std::string("synthetic")));
		if (d.contains("path")) {
			ds.path = resolve(base_dir, d.at("path").get<std::string>());
		}
		if (d.contains("test_path")) {
			ds.test_path = resolve(base_dir, d.at("test_path").get<std::string>());
		}
		for (const auto &p : d.value("weak_paths", std::vector<std::string>{})) {
			ds.weak_paths.push_back(resolve(base_dir, p));
		}
		if (d.contains("expected_length")) {
			ds.expected_length = d.at("expected_length").get<std::size_t>();
		}
		ds.resize_length = d.value("resize_length", ds.resize_length);
		ds.resize_period = d.value("resize_period", ds.resize_period);
		if (d.contains("synth")) {
			ds.synth = synth_config_from_json(d.at("synth"));
		}
		if (ds.kind != DatasetKind::synthetic && ds.path.empty()) {
			throw ConfigError("dataset: 'path' is required for " + std::string(to_string(ds.kind)));
		}
		if (ds.kind == DatasetKind::m4_weekly && !ds.test_path) {
			throw ConfigError("dataset: m4-weekly needs 'test_path'");
		}

		auto &p = config.pipeline;
		const json pj = j.value("pipeline", json::object());
		require_keys(pj, {"predictor", "seasonal_period", "mase_period", "horizon", "window", "use_weak_signals",
		                  "use_corrector", "seeds", "trend_threshold", "tbats"},
		             "pipeline");
		p.predictor = predictors::parse_kind(pj.value("predictor", std::string("hw_ets")));
		if (ds.kind == DatasetKind::m4_weekly) {
			p.horizon = 13;
			p.mase_period = 1;
			p.seasonal_period = p.predictor == predictors::PredictorKind::snaive ? 1 : 52;
		}
		p.seasonal_period = pj.value("seasonal_period", p.seasonal_period);
		p.mase_period = pj.value("mase_period", p.mase_period);
		p.horizon = pj.value("horizon", p.horizon);
		p.window = pj.value("window", p.window);
		p.use_weak_signals = pj.value("use_weak_signals", p.use_weak_signals);
		p.use_corrector = pj.value("use_corrector", p.use_corrector);
		p.seeds = pj.value("seeds", p.seeds);
		p.trend_threshold = pj.value("trend_threshold", p.trend_threshold);
		if (pj.contains("tbats")) {
			const auto &tj = pj.at("tbats");
			require_keys(tj, {"allow_log", "max_harmonics", "max_arma_order"}, "pipeline.tbats");
			auto &t = p.fit_options.tbats;
			t.allow_log = tj.value("allow_log", t.allow_log);
			t.max_harmonics = tj.value("max_harmonics", t.max_harmonics);
			t.max_arma_order = tj.value("max_arma_order", t.max_arma_order);
		}

		const json tj = j.value("train", json::object());
		require_keys(tj, {"loss", "learning_rate", "batch_size", "max_epochs", "patience", "n_windows", "hidden", "layers",
		              "clip_norm"},
		             "train");
		auto &t = p.train;
		if (tj.contains("loss")) {
			t.loss = corrector::parse_loss(tj.at("loss").get<std::string>());
		}
		t.learning_rate = tj.value("learning_rate", t.learning_rate);
		t.batch_size = tj.value("batch_size", t.batch_size);
		t.max_epochs = tj.value("max_epochs", t.max_epochs);
		t.patience = tj.value("patience", t.patience);
		t.n_windows = tj.value("n_windows", t.n_windows);
		t.hidden = tj.value("hidden", t.hidden);
		t.layers = tj.value("layers", t.layers);
		t.clip_norm = tj.value("clip_norm", t.clip_norm);

		if (j.contains("grid")) {
			const auto &g = j.at("grid");
			require_keys(g, {"loss", "learning_rate", "batch_size", "n_windows"}, "grid");
			if (g.empty()) {
				throw ConfigError("grid: at least one axis is required");
			}
			for (const auto &name : axis<std::string>(g, "loss", std::string(corrector::to_string(t.loss)))) {
				config.grid.losses.push_back(corrector::parse_loss(name));
			}
			config.grid.learning_rates = axis<double>(g, "learning_rate", t.learning_rate);
			config.grid.batch_sizes = axis<std::size_t>(g, "batch_size", t.batch_size);
			config.grid.n_windows = axis<std::size_t>(g, "n_windows", t.n_windows);
		}

		if (j.contains("output_dir")) {
			config.output_dir = resolve(base_dir, j.at("output_dir").get<std::string>());
		}
		config.max_plot_series = j.value("max_plot_series", config.max_plot_series);
	} catch (const json::exception &e) {
		throw ConfigError(std::string("run config: ") + e.what());
	} catch (const std::invalid_argument &e) {
		throw ConfigError(e.what());
	}
	try {
		config.pipeline.validate();
	} catch (const std::invalid_argument &e) {
		throw ConfigError(e.what());
	}
	return config;
}

RunConfig load_run_config(const std::filesystem::path &path) {
	std::ifstream in(path);
	if (!in) {
		throw ConfigError("cannot open config " + path.string());
	}
	json j;
	try {
		in >> j;
	} catch (const json::exception &e) {
		throw ConfigError(path.string() + ": " + e.what());
	}
	return parse_run_config(j, path.parent_path());
}

json to_json(const RunConfig &c) {
	json d;
	d["kind"] = std::string(to_string(c.dataset.kind));
	if (c.dataset.kind == DatasetKind::synthetic) {
		d["synth"] = to_json(c.dataset.synth);
	} else {
		d["path"] = c.dataset.path.string();
		if (c.dataset.test_path) {
			d["test_path"] = c.dataset.test_path->string();
		}
		std::vector<std::string> weak;
		for (const auto &w : c.dataset.weak_paths) {
			weak.push_back(w.string());
		}
		d["weak_paths"] = weak;
		if (c.dataset.expected_length) {
			d["expected_length"] = *c.dataset.expected_length;
		}
		if (c.dataset.kind == DatasetKind::m4_weekly) {
			d["resize_length"] = c.dataset.resize_length;
			d["resize_period"] = c.dataset.resize_period;
		}
	}
	auto pipeline = hybrid::to_json(c.pipeline);
	json out;
	out["dataset"] = std::move(d);
	out["train"] = pipeline["train"];
	pipeline.erase("train");
	out["pipeline"] = std::move(pipeline);
	if (!c.grid.empty()) {
		std::vector<std::string> losses;
		for (const auto l : c.grid.losses) {
			losses.emplace_back(corrector::to_string(l));
		}
		out["grid"] = {{"loss", losses},
		               {"learning_rate", c.grid.learning_rates},
		               {"batch_size", c.grid.batch_sizes},
		               {"n_windows", c.grid.n_windows}};
	}
	out["max_plot_series"] = c.max_plot_series;
	return out;
}

LoadedData prepare_m4(const store::TimePanel &train, const store::TimePanel &test, std::size_t length,
                      std::size_t period) {
	LoadedData data;
	store::TimePanel history;
	for (const auto &s : train.series) {
		auto idx = test.index_of(s.id);
		if (!idx) {
			throw store::LoadError("m4: no test values for series '" + s.id + "'");
		}
		auto values = store::resize_to_length(s.values, length, period);
		const auto &tail = test.series[*idx].values;
		values.insert(values.end(), tail.begin(), tail.end());
		data.panel.series.push_back(store::Series{s.id, std::move(values), s.category, s.geozone});
		history.series.push_back(s);
	}
	if (test.size() != train.size()) {
		throw store::LoadError("m4: train and test files list different series");
	}
	data.scale_history = std::move(history);
	return data;
}

LoadedData load_dataset(const DatasetConfig &config) {
	switch (config.kind) {
	case DatasetKind::synthetic: {
		auto synth = generate_synthetic(config.synth);
		return LoadedData{std::move(synth.panel), std::move(synth.weak), std::nullopt};
	}
	case DatasetKind::fashion: {
		auto data = config.weak_paths.empty()
		                ? store::load_fashion_panel(config.path, config.expected_length)
		                : store::load_fashion_panel(config.path, config.weak_paths, config.expected_length);
		return LoadedData{std::move(data.panel), std::move(data.weak), std::nullopt};
	}
	case DatasetKind::m4_weekly: {
		const auto train = store::load_m4_weekly(config.path);
		const auto test = store::load_m4_weekly(*config.test_path);
		return prepare_m4(train, test, config.resize_length, config.resize_period);
	}
	}
	throw ConfigError("unknown dataset kind");
}

void write_plot_data(const std::filesystem::path &dir, const store::TimePanel &panel,
                     std::span<const hybrid::HybridForecast> forecasts, std::size_t max_series) {
	std::set<std::string> used;
	std::size_t written = 0;
	for (const auto &f : forecasts) {
		if (f.split != hybrid::SplitTag::test) {
			continue;
		}
		if (max_series > 0 && written >= max_series) {
			break;
		}
		const auto idx = panel.index_of(f.id);
		if (!idx) {
			continue;
		}
		auto name = sanitize(f.id);
		for (std::size_t k = 2; used.count(name) != 0; ++k) {
			name = sanitize(f.id) + "_" + std::to_string(k);
		}
		used.insert(name);
		const auto &values = panel.series[*idx].values;
		auto out = open_output(dir / (name + ".csv"));
		out << "t,history,y_pred,y_hat,truth\n";
		for (std::size_t t = 0; t < values.size(); ++t) {
			out << t << ',';
			if (t < f.origin) {
				out << csv::format_double(values[t]) << ",,,\n";
				continue;
			}
			const std::size_t j = t - f.origin;
			if (j < f.pred.size()) {
				out << ',' << csv::format_double(f.pred[j]) << ',' << csv::format_double(f.combined[j]);
			} else {
				out << ",,";
			}
			out << ',' << csv::format_double(values[t]) << '\n';
		}
		++written;
	}
}

hybrid::PipelineResult cmd_run(const RunConfig &config, std::ostream &log) {
	auto data = load_dataset(config.dataset);
	hybrid::PipelineInputs inputs{data.panel, data.weak, data.scale_history ? &*data.scale_history : nullptr};
	auto result = hybrid::multi_seed_run(inputs, config.pipeline);
	hybrid::write_run_directory(config.output_dir, result, to_json(config));
	if (!result.seeds.empty()) {
		write_plot_data(config.output_dir / "plots", data.panel, result.seeds.front().forecasts, config.max_plot_series);
	}
	const auto &pr = result.predictor_report;
	const auto &hr = result.hybrid_report;
	log << "series: " << data.panel.size() << ", test forecasts: " << result.prepared.test.size()
	    << ", corrector examples: " << result.prepared.train_examples().size() << " train / "
	    << result.prepared.eval_examples().size() << " eval\n";
	log << "predictor " << predictors::to_string(config.pipeline.predictor) << ": MASE " << pr.mase.mean << ", sMAPE "
	    << pr.smape.mean << ", accuracy " << pr.accuracy.mean;
	if (pr.owa) {
		log << ", OWA " << pr.owa->mean;
	}
	log << '\n';
	if (config.pipeline.use_corrector) {
		log << "hybrid: MASE " << hr.mase.mean << " +- " << hr.mase.std << ", sMAPE " << hr.smape.mean << " +- "
		    << hr.smape.std << ", accuracy " << hr.accuracy.mean << " +- " << hr.accuracy.std;
		if (hr.owa) {
			log << ", OWA " << hr.owa->mean << " +- " << hr.owa->std;
		}
		log << '\n';
	}
	for (const auto &failed : result.failed_seeds) {
		log << "failed " << failed << '\n';
	}
	log << "run directory: " << config.output_dir.string() << '\n';
	return result;
}

void write_grid_csv(const std::filesystem::path &path, std::span<const GridCell> cells, std::string_view metric) {
	auto out = open_output(path);
	out << "rank,loss,learning_rate,batch_size,n_windows,metric,mean,std,n_seeds,status\n";
	std::size_t rank = 0;
	for (const auto &c : cells) {
		out << ++rank << ',' << corrector::to_string(c.loss) << ',' << csv::format_double(c.learning_rate) << ','
		    << c.batch_size << ',' << c.n_windows << ',' << metric << ',';
		if (c.metric) {
			out << csv::format_double(c.metric->mean) << ',' << csv::format_double(c.metric->std) << ','
			    << c.metric->n << ",ok\n";
		} else {
			out << ",,0," << csv::quote("failed: " + c.error) << '\n';
		}
	}
}

std::vector<GridCell> cmd_grid_search(const RunConfig &config, std::ostream &log) {
	if (config.grid.empty()) {
		throw ConfigError("grid-search: grid axes are not defined");
	}
	const auto data = load_dataset(config.dataset);
	hybrid::PipelineInputs inputs{data.panel, data.weak, data.scale_history ? &*data.scale_history : nullptr};
	const auto metric = metric_name(config.dataset.kind);

	std::vector<GridCell> cells;
	std::size_t index = 0;
	for (const auto loss : config.grid.losses) {
		for (const auto lr : config.grid.learning_rates) {
			for (const auto batch : config.grid.batch_sizes) {
				for (const auto windows : config.grid.n_windows) {
					GridCell cell;
					cell.loss = loss;
					cell.learning_rate = lr;
					cell.batch_size = batch;
					cell.n_windows = windows;
					cell.dir = config.output_dir / ("cell_" + std::to_string(index++));
					auto cell_config = config;
					cell_config.pipeline.train.loss = loss;
					cell_config.pipeline.train.learning_rate = lr;
					cell_config.pipeline.train.batch_size = batch;
					cell_config.pipeline.train.n_windows = windows;
					cell_config.output_dir = cell.dir;
					cell_config.grid = {};
					try {
						cell_config.pipeline.validate();
						auto result = hybrid::multi_seed_run(inputs, cell_config.pipeline);
						hybrid::write_run_directory(cell.dir, result, to_json(cell_config));
						const auto &report = result.hybrid_report;
						if (metric == "owa") {
							if (!report.owa) {
								throw std::runtime_error("OWA unavailable: zero baseline");
							}
							cell.metric = *report.owa;
						} else {
							cell.metric = report.mase;
						}
					} catch (const std::exception &e) {
						cell.error = e.what();
					}
					log << "cell " << cell.dir.filename().string() << " loss=" << corrector::to_string(loss)
					    << " lr=" << lr << " batch=" << batch << " windows=" << windows << ": ";
					if (cell.metric) {
						log << metric << ' ' << cell.metric->mean << " +- " << cell.metric->std << '\n';
					} else {
						log << "failed (" << cell.error << ")\n";
					}
					cells.push_back(std::move(cell));
				}
			}
		}
	}
	std::stable_sort(cells.begin(), cells.end(), [](const GridCell &a, const GridCell &b) {
		if (a.metric.has_value() != b.metric.has_value()) {
			return a.metric.has_value();
		}
		return a.metric && a.metric->mean < b.metric->mean;
	});
	std::filesystem::create_directories(config.output_dir);
	write_grid_csv(config.output_dir / "grid.csv", cells, metric);
	return cells;
}

store::TimePanel cmd_m4_prep(const std::filesystem::path &train, const std::optional<std::filesystem::path> &test,
                             const std::filesystem::path &output_dir, std::size_t length, std::size_t period) {
	const auto raw = store::load_m4_weekly(train);
	store::TimePanel out;
	json manifest;
	manifest["length"] = length;
	manifest["period"] = period;
	json series = json::array();
	if (test) {
		const auto test_panel = store::load_m4_weekly(*test);
		auto data = prepare_m4(raw, test_panel, length, period);
		out = std::move(data.panel);
		for (std::size_t i = 0; i < raw.size(); ++i) {
			series.push_back({{"id", raw.series[i].id},
			                  {"original_length", raw.series[i].length()},
			                  {"test_length", out.series[i].length() - length}});
		}
	} else {
		for (const auto &s : raw.series) {
			out.series.push_back(store::Series{s.id, store::resize_to_length(s.values, length, period), s.category, s.geozone});
			series.push_back({{"id", s.id}, {"original_length", s.length()}, {"test_length", 0}});
		}
	}
	manifest["series"] = std::move(series);
	std::filesystem::create_directories(output_dir);
	store::write_m4_panel(output_dir / "prepared.csv", out);
	open_output(output_dir / "manifest.json") << manifest.dump(1) << '\n';
	return out;
}

metrics::EvalReport cmd_evaluate(const RunConfig &config, const std::filesystem::path &forecasts,
                                 const std::string &column, const std::filesystem::path &output_dir) {
	const auto data = load_dataset(config.dataset);
	const std::size_t h = config.pipeline.horizon;
	std::ifstream in(forecasts);
	if (!in) {
		throw store::LoadError("cannot open " + forecasts.string());
	}
	std::string line;
	if (!std::getline(in, line)) {
		throw store::LoadError(forecasts.string() + ": empty file");
	}
	const auto header = csv::split_line(line);
	auto find_col = [&](const std::string &name) -> std::optional<std::size_t> {
		for (std::size_t c = 0; c < header.size(); ++c) {
			if (header[c] == name) {
				return c;
			}
		}
		return std::nullopt;
	};
	const auto id_col = find_col("id");
	const auto step_col = find_col("step");
	const auto value_col = find_col(column);
	const auto split_col = find_col("split");
	if (!id_col || !step_col || !value_col) {
		throw store::LoadError(forecasts.string() + ": header needs id, step and " + column);
	}
	std::map<std::string, std::vector<std::optional<double>>> by_id;
	std::vector<std::string> order;
	std::size_t row = 1;
	while (std::getline(in, line)) {
		++row;
		if (line.empty() || line == "\r") {
			continue;
		}
		const auto cells = csv::split_line(line);
		if (cells.size() != header.size()) {
			throw store::LoadError(forecasts.string() + ": wrong cell count at row " + std::to_string(row));
		}
		if (split_col && cells[*split_col] != "test") {
			continue;
		}
		const auto step = csv::parse_double(cells[*step_col]);
		const auto value = csv::parse_double(cells[*value_col]);
		if (!step || !value || *step < 1.0 || *step > static_cast<double>(h) || *step != std::floor(*step)) {
			throw store::LoadError(forecasts.string() + ": bad step or value at row " + std::to_string(row));
		}
		auto [it, inserted] = by_id.try_emplace(cells[*id_col], h);
		if (inserted) {
			order.push_back(cells[*id_col]);
		}
		it->second[static_cast<std::size_t>(*step) - 1] = *value;
	}
	if (order.empty()) {
		throw store::LoadError(forecasts.string() + ": no test forecasts");
	}

	std::vector<metrics::SeriesScore> scores;
	std::vector<metrics::SeriesScore> baseline_scores;
	for (const auto &id : order) {
		const auto idx = data.panel.index_of(id);
		if (!idx) {
			throw store::LoadError(forecasts.string() + ": unknown series '" + id + "'");
		}
		std::vector<double> forecast;
		for (const auto &v : by_id[id]) {
			if (!v) {
				throw store::LoadError(forecasts.string() + ": series '" + id + "' misses forecast steps");
			}
			forecast.push_back(*v);
		}
		const auto &values = data.panel.series[*idx].values;
		if (values.size() <= h + config.pipeline.mase_period) {
			throw store::LoadError("series '" + id + "' is too short to evaluate");
		}
		const std::size_t cut = values.size() - h;
		std::span<const double> truth(values.data() + cut, h);
		std::span<const double> history = data.scale_history
		                                      ? std::span<const double>(data.scale_history->series[*idx].values)
		                                      : std::span<const double>(values.data(), cut);
		auto naive = predictors::forecast_predictor(
		    predictors::fit_predictor(predictors::PredictorKind::snaive, std::span<const double>(values.data(), cut),
		                              config.pipeline.mase_period),
		    h);
		auto score_of = [&](std::span<const double> f) {
			metrics::SeriesScore s;
			s.id = id;
			try {
				s.mase = metrics::mase(history, truth, f, config.pipeline.mase_period);
			} catch (const metrics::ZeroScaleError &) {
			}
			s.smape = metrics::smape(truth, f);
			if (cut >= h) {
				std::span<const double> prev(values.data() + cut - h, h);
				try {
					s.true_label = metrics::classify_trend(prev, truth, config.pipeline.trend_threshold);
					s.predicted_label = metrics::classify_trend(prev, f, config.pipeline.trend_threshold);
				} catch (const std::domain_error &) {
				}
			}
			return s;
		};
		scores.push_back(score_of(forecast));
		baseline_scores.push_back(score_of(naive));
	}
	const auto base = metrics::summarize(baseline_scores);
	std::optional<metrics::MetricPair> baseline;
	if (base.mean_smape > 0.0 && base.mean_mase > 0.0) {
		baseline = metrics::MetricPair{base.mean_smape, base.mean_mase};
	}
	const std::vector<std::vector<metrics::SeriesScore>> runs{scores};
	auto report = metrics::aggregate_report(runs, baseline);
	std::filesystem::create_directories(output_dir);
	open_output(output_dir / "report.json") << metrics::to_json(report).dump(2) << '\n';
	metrics::write_series_csv(output_dir / "series.csv", scores);
	metrics::write_confusion_csv(output_dir / "confusion.csv", report.confusion);
	return report;
}

} // namespace hermes::cli
