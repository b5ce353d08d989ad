#include "doctest.h"

#include "hermes/cli.hpp"
#include "support.hpp"

#include <sys/wait.h>

#include <cmath>
#include <cstdlib>
#include <numbers>
#include <sstream>

using namespace hermes;
using namespace hermes::cli;
using nlohmann::json;

namespace {

int run_hermes(const std::string &args) {
	const std::string command = std::string(HERMES_EXE) + " " + args + " >/dev/null 2>&1";
	const int status = std::system(command.c_str());
	return WIFEXITED(status) ? WEXITSTATUS(status) : -1;
}

json tiny_run(const std::string &output_dir) {
	return {{"dataset", {{"kind", "synthetic"}, {"synth", {{"n_series", 5}, {"seed", 2}}}}},
	        {"output_dir", output_dir},
	        {"pipeline", {{"use_weak_signals", true}}},
	        {"train", {{"hidden", 3}, {"layers", 1}, {"max_epochs", 2}, {"patience", 1}, {"batch_size", 4}}},
	        {"max_plot_series", 2}};
}

std::string dir_digest(const std::filesystem::path &dir) {
	std::vector<std::filesystem::path> files;
	for (const auto &entry : std::filesystem::recursive_directory_iterator(dir)) {
		if (entry.is_regular_file()) {
			files.push_back(std::filesystem::relative(entry.path(), dir));
		}
	}
	std::sort(files.begin(), files.end());
	std::string digest;
	for (const auto &f : files) {
		digest += f.string() + '\n' + support::read_text(dir / f) + '\n';
	}
	return digest;
}

std::vector<double> multiplier(const SynthSeriesInfo &info, std::size_t T) {
	std::vector<double> m(T, 1.0);
	for (const auto &s : info.shifts) {
		for (std::size_t t = s.week; t < T; ++t) {
			m[t] *= 1.0 + s.delta;
		}
	}
	return m;
}

} // namespace

TEST_CASE("run config parsing") {
	const auto config = parse_run_config(tiny_run("out"), "/base");
	CHECK(config.output_dir == std::filesystem::path("/base/out"));
	CHECK(config.pipeline.use_weak_signals);
	CHECK(config.pipeline.train.hidden == 3);
	CHECK(config.dataset.synth.n_series == 5);
	CHECK(config.grid.empty());

	auto bad = tiny_run("out");
	bad["pipeline"]["horizn"] = 52;
	CHECK_THROWS_AS(parse_run_config(bad), ConfigError);
	bad = tiny_run("out");
	bad["train"]["learning_rate"] = -1.0;
	CHECK_THROWS_AS(parse_run_config(bad), ConfigError);
	bad = tiny_run("out");
	bad["dataset"]["synth"]["colour"] = 1;
	CHECK_THROWS_AS(parse_run_config(bad), ConfigError);
	CHECK_THROWS_AS(parse_run_config(json{{"output_dir", "x"}}), ConfigError);
	CHECK_THROWS_AS(parse_run_config(json{{"dataset", {{"kind", "fashion"}}}}), ConfigError);
	CHECK_THROWS_AS(parse_run_config(json{{"dataset", {{"kind", "m4-weekly"}, {"path", "a.csv"}}}}), ConfigError);
	CHECK_THROWS_AS(parse_run_config(json{{"dataset", {{"kind", "csv"}}}}), ConfigError);

	const auto m4 = parse_run_config(
	    json{{"dataset", {{"kind", "m4-weekly"}, {"path", "a.csv"}, {"test_path", "b.csv"}}}});
	CHECK(m4.pipeline.horizon == 13);
	CHECK(m4.pipeline.mase_period == 1);

	auto grid = tiny_run("out");
	grid["grid"] = {{"learning_rate", {0.01, 0.001}}, {"batch_size", {4, 8}}};
	const auto g = parse_run_config(grid);
	CHECK(g.grid.cells() == 4);
	grid["grid"]["learning_rate"] = json::array();
	CHECK_THROWS_AS(parse_run_config(grid), ConfigError);

	// Serializing and parsing again reproduces the configuration.
	const auto again = parse_run_config(to_json(config));
	CHECK(to_json(again) == to_json(config));
}

TEST_CASE("synthetic panels") {
	SynthConfig c;
	c.n_series = 40;
	c.seed = 11;
	c.noise = 0.0;
	c.trend_max = 0.0;
	c.weak_noise = 0.0;
	c.attenuation = 1.0;
	const auto a = generate_synthetic(c);
	const auto b = generate_synthetic(c);
	REQUIRE(a.panel.size() == 40);
	CHECK(a.panel.common_length() == 261);
	for (std::size_t i = 0; i < 40; ++i) {
		CHECK(a.panel.series[i].values == b.panel.series[i].values);
		CHECK(a.weak.values[i] == b.weak.values[i]);
	}
	c.seed = 12;
	CHECK(generate_synthetic(c).panel.series[0].values != a.panel.series[0].values);
	c.seed = 11;

	std::size_t final_shifts = 0;
	for (std::size_t i = 0; i < 40; ++i) {
		const auto &info = a.info[i];
		const auto &y = a.panel.series[i].values;
		const auto &weak = a.weak.values[i][0];
		const auto m = multiplier(info, 261);
		for (const auto &s : info.shifts) {
			final_shifts += s.final_year ? 1 : 0;
			CHECK(s.lead >= 8);
			CHECK(s.lead <= 16);
			if (s.final_year) {
				CHECK(s.week >= 209);
				CHECK(s.week < 209 + s.lead);
			}
		}
		for (std::size_t t = 0; t < 261; ++t) {
			const double base =
			    info.level * (1.0 + info.amplitude * std::sin(2.0 * std::numbers::pi * static_cast<double>(t) / 52.0 +
			                                                  info.phase));
			CHECK(y[t] == doctest::Approx(base * m[t]).epsilon(1e-12));
			// Forward multiplier: every shift moved earlier by its own lead.
			double forward = 1.0;
			for (const auto &s : info.shifts) {
				if (t + s.lead >= s.week) {
					forward *= 1.0 + s.delta;
				}
			}
			CHECK(weak[t] == doctest::Approx(forward / (forward + m[t])).epsilon(1e-12));
		}
		for (const auto &s : info.shifts) {
			// The weak channel departs L weeks before the main series moves.
			CHECK(weak[s.week - s.lead] != doctest::Approx(weak[s.week - s.lead - 1]));
		}
	}
	CHECK(final_shifts == 12); // round(0.3 * 40)

	c.n_series = 7;
	std::size_t n = 0;
	for (const auto &info : generate_synthetic(c).info) {
		for (const auto &s : info.shifts) {
			n += s.final_year ? 1 : 0;
		}
	}
	CHECK(n == 2); // round(2.1)

	c.lead_max = 60;
	CHECK_THROWS_AS(generate_synthetic(c), std::invalid_argument);
	c.lead_max = 16;
	c.length = 100;
	CHECK_THROWS_AS(generate_synthetic(c), std::invalid_argument);
}

TEST_CASE("synth files load back as a fashion panel with weak signals") {
	support::TempDir dir("synth");
	SynthConfig c;
	c.n_series = 6;
	const auto synth = cmd_synth(c, dir / "panel.csv");
	CHECK(std::filesystem::exists(dir / "panel.meta.json"));
	DatasetConfig ds;
	ds.kind = DatasetKind::fashion;
	ds.path = dir / "panel.csv";
	const auto loaded = load_dataset(ds);
	REQUIRE(loaded.panel.size() == 6);
	REQUIRE(loaded.weak.num_channels == 1);
	for (std::size_t i = 0; i < 6; ++i) {
		for (std::size_t t = 0; t < 261; ++t) {
			CHECK(loaded.panel.series[i].values[t] == doctest::Approx(synth.panel.series[i].values[t]).epsilon(1e-15));
			CHECK(loaded.weak.values[i][0][t] == doctest::Approx(synth.weak.values[i][0][t]).epsilon(1e-15));
		}
	}
}

TEST_CASE("m4 preparation") {
	support::TempDir dir("m4");
	std::string train = "V1,V2,V3,V4,V5\n";
	std::string test = "V1,V2,V3\n";
	for (int s = 0; s < 3; ++s) {
		const int length = 90 + 40 * s;
		train += "\"W" + std::to_string(s + 1) + "\"";
		for (int t = 0; t < length; ++t) {
			train += "," + std::to_string(100 + s * 10 + (t % 52) + 0.5 * t);
		}
		train += "\n";
		test += "\"W" + std::to_string(s + 1) + "\"";
		for (int t = 0; t < 13; ++t) {
			test += "," + std::to_string(200 + t);
		}
		test += "\n";
	}
	support::write_text(dir / "train.csv", train);
	support::write_text(dir / "test.csv", test);
	const auto panel = cmd_m4_prep(dir / "train.csv", dir / "test.csv", dir / "out");
	REQUIRE(panel.size() == 3);
	for (const auto &s : panel.series) {
		CHECK(s.values.size() == 313);
		CHECK(s.values.back() == 212.0);
		CHECK(s.values[300] == 200.0);
	}
	CHECK(std::filesystem::exists(dir / "out" / "prepared.csv"));
	CHECK(std::filesystem::exists(dir / "out" / "manifest.json"));

	support::write_text(dir / "bad_test.csv", "V1,V2\n\"W9\",1\n");
	CHECK_THROWS(cmd_m4_prep(dir / "train.csv", dir / "bad_test.csv", dir / "out2"));
}

TEST_CASE("run directories are reproducible and K=0 matches disabled weak signals") {
	support::TempDir dir("run");
	std::ostringstream log;
	const auto a = cmd_run(parse_run_config(tiny_run((dir / "a").string())), log);
	cmd_run(parse_run_config(tiny_run((dir / "b").string())), log);
	CHECK(log.str().find("hybrid: MASE") != std::string::npos);
	CHECK(std::filesystem::exists(dir / "a" / "plots"));
	CHECK(dir_digest(dir / "a") == dir_digest(dir / "b"));

	// Weak signals off versus a panel without a weak sibling file.
	auto off = tiny_run((dir / "off").string());
	off["pipeline"]["use_weak_signals"] = false;
	const auto r_off = cmd_run(parse_run_config(off), log);
	SynthConfig c;
	c.n_series = 5;
	c.seed = 2;
	const auto synth = generate_synthetic(c);
	store::write_fashion_panel(dir / "plain.csv", synth.panel);
	json plain = off;
	plain["dataset"] = {{"kind", "fashion"}, {"path", (dir / "plain.csv").string()}};
	const auto r_plain = cmd_run(parse_run_config(plain), log);
	CHECK(hybrid::report_json(r_off) == hybrid::report_json(r_plain));
	CHECK(hybrid::report_json(r_off) != hybrid::report_json(a));
}

TEST_CASE("a single-cell grid equals a plain run") {
	support::TempDir dir("grid");
	std::ostringstream log;
	auto cfg = tiny_run((dir / "grid").string());
	cfg["grid"] = {{"learning_rate", {0.001}}};
	const auto cells = cmd_grid_search(parse_run_config(cfg), log);
	REQUIRE(cells.size() == 1);
	REQUIRE(cells[0].metric.has_value());
	CHECK(std::filesystem::exists(dir / "grid" / "grid.csv"));

	auto plain = tiny_run((dir / "plain").string());
	plain["train"]["learning_rate"] = 0.001;
	const auto run = cmd_run(parse_run_config(plain), log);
	CHECK(cells[0].metric->mean == run.hybrid_report.mase.mean);
	REQUIRE(std::filesystem::exists(cells[0].dir / "report.json"));
	CHECK(support::read_text(cells[0].dir / "report.json") == support::read_text(dir / "plain" / "report.json"));

	cfg["grid"] = {{"learning_rate", {0.01, 0.001}}, {"batch_size", {2, 4}}};
	const auto four = cmd_grid_search(parse_run_config(cfg), log);
	CHECK(four.size() == 4);
	for (std::size_t i = 1; i < four.size(); ++i) {
		CHECK(four[i - 1].metric->mean <= four[i].metric->mean);
	}
}

TEST_CASE("evaluate scores external forecasts") {
	support::TempDir dir("evaluate");
	std::ostringstream log;
	const auto cfg = parse_run_config(tiny_run((dir / "run").string()));
	const auto result = cmd_run(cfg, log);
	const auto report = cmd_evaluate(cfg, dir / "run" / "seed_0" / "forecasts_test.csv", "y_hat", dir / "eval");
	CHECK(report.mase.mean == doctest::Approx(result.hybrid_report.mase.mean).epsilon(1e-12));
	CHECK(report.accuracy.mean == result.hybrid_report.accuracy.mean);
	const auto pred = cmd_evaluate(cfg, dir / "run" / "seed_0" / "forecasts_test.csv", "y_pred", dir / "eval2");
	CHECK(pred.mase.mean == doctest::Approx(result.predictor_report.mase.mean).epsilon(1e-12));
	CHECK(std::filesystem::exists(dir / "eval" / "report.json"));

	support::write_text(dir / "bad.csv", "id,step,y_hat\nS1,0,3\n");
	CHECK_THROWS_AS(cmd_evaluate(cfg, dir / "bad.csv", "y_hat", dir / "eval3"), store::LoadError);
	support::write_text(dir / "missing.csv", "id,step\nS1,1\n");
	CHECK_THROWS_AS(cmd_evaluate(cfg, dir / "missing.csv", "y_hat", dir / "eval3"), store::LoadError);
}

TEST_CASE("command-line exit codes") {
	support::TempDir dir("exit");
	support::write_text(dir / "ok.json", tiny_run((dir / "out").string()).dump());
	auto unknown = tiny_run((dir / "out").string());
	unknown["trian"] = json::object();
	support::write_text(dir / "unknown.json", unknown.dump());
	support::write_text(dir / "broken.json", "{\"dataset\": ");
	auto missing = tiny_run((dir / "out").string());
	missing["dataset"] = {{"kind", "fashion"}, {"path", (dir / "nope.csv").string()}};
	support::write_text(dir / "missing.json", missing.dump());

	CHECK(run_hermes("run " + (dir / "ok.json").string()) == kExitOk);
	CHECK(std::filesystem::exists(dir / "out" / "report.json"));
	CHECK(run_hermes("--help") == kExitOk);
	CHECK(run_hermes("") == kExitConfig);
	CHECK(run_hermes("run") == kExitConfig);
	CHECK(run_hermes("run " + (dir / "unknown.json").string()) == kExitConfig);
	CHECK(run_hermes("run " + (dir / "broken.json").string()) == kExitConfig);
	CHECK(run_hermes("run " + (dir / "none.json").string()) == kExitConfig);
	CHECK(run_hermes("run " + (dir / "ok.json").string() + " --learning-rate -2") == kExitConfig);
	CHECK(run_hermes("run " + (dir / "missing.json").string()) == kExitRun);
	CHECK(run_hermes("synth -n 3 -o " + (dir / "s.csv").string()) == kExitOk);
	CHECK(run_hermes("synth -n 0 -o " + (dir / "s.csv").string()) == kExitConfig);
}
