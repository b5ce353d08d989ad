#include "hermes/cli.hpp"
#include "hermes/parallel.hpp"

#include <CLI11.hpp>

#include <iostream>

namespace {

using hermes::cli::ConfigError;
using hermes::cli::RunConfig;

struct Overrides {
	std::string output;
	std::string predictor;
	std::string loss;
	std::vector<std::uint64_t> seeds;
	std::optional<double> learning_rate;
	std::optional<std::size_t> batch_size;
	std::optional<std::size_t> max_epochs;
	std::optional<std::size_t> patience;
	std::optional<std::size_t> n_windows;
	std::optional<double> clip_norm;
	bool weak = false;
	bool no_weak = false;
	bool no_corrector = false;

	void attach(CLI::App *cmd) {
		cmd->add_option("-o,--output", output, "Output directory (overrides output_dir)");
		cmd->add_option("--predictor", predictor, "snaive | hw_ets | theta | stl_es | tbats_lite");
		cmd->add_option("--loss", loss, "MAE | MSE | SMAE | SMSE");
		cmd->add_option("--seeds", seeds, "Corrector seeds");
		cmd->add_option("--learning-rate", learning_rate);
		cmd->add_option("--batch-size", batch_size);
		cmd->add_option("--max-epochs", max_epochs);
		cmd->add_option("--patience", patience);
		cmd->add_option("--windows", n_windows, "Training windows per series");
		cmd->add_option("--clip-norm", clip_norm, "Gradient norm bound (0 disables)");
		cmd->add_flag("--weak", weak, "Feed weak signals to the corrector");
		cmd->add_flag("--no-weak", no_weak, "Ignore weak signals");
		cmd->add_flag("--no-corrector", no_corrector, "Predictor only");
	}

	void apply(RunConfig &config) const {
		if (!output.empty()) {
			config.output_dir = output;
		}
		auto &p = config.pipeline;
		if (!predictor.empty()) {
			p.predictor = hermes::predictors::parse_kind(predictor);
		}
		if (!loss.empty()) {
			p.train.loss = hermes::corrector::parse_loss(loss);
		}
		if (!seeds.empty()) {
			p.seeds = seeds;
		}
		if (learning_rate) {
			p.train.learning_rate = *learning_rate;
		}
		if (batch_size) {
			p.train.batch_size = *batch_size;
		}
		if (max_epochs) {
			p.train.max_epochs = *max_epochs;
		}
		if (patience) {
			p.train.patience = *patience;
		}
		if (n_windows) {
			p.train.n_windows = *n_windows;
		}
		if (clip_norm) {
			p.train.clip_norm = *clip_norm;
		}
		if (weak && no_weak) {
			throw ConfigError("--weak and --no-weak are exclusive");
		}
		if (weak) {
			p.use_weak_signals = true;
		}
		if (no_weak) {
			p.use_weak_signals = false;
		}
		if (no_corrector) {
			p.use_corrector = false;
		}
		p.validate();
	}
};

RunConfig load_with(const std::string &path, const Overrides &overrides) {
	auto config = hermes::cli::load_run_config(path);
	try {
		overrides.apply(config);
	} catch (const std::invalid_argument &e) {
		throw ConfigError(e.what());
	}
	return config;
}

} // namespace

int main(int argc, char **argv) {
	CLI::App app{"HERMES hybrid forecaster"};
	app.require_subcommand(1);

	std::string config_path;
	Overrides overrides;

	auto *run = app.add_subcommand("run", "Fit predictors, train the corrector and evaluate");
	run->add_option("config", config_path, "Run configuration (JSON)")->required();
	overrides.attach(run);

	auto *grid = app.add_subcommand("grid-search", "One multi-seed run per grid cell");
	grid->add_option("config", config_path, "Run configuration with a 'grid' section")->required();
	overrides.attach(grid);

	hermes::cli::SynthConfig synth;
	std::string synth_out;
	auto *synth_cmd = app.add_subcommand("synth", "Generate a synthetic panel with weak signals");
	synth_cmd->add_option("-n,--series", synth.n_series)->capture_default_str();
	synth_cmd->add_option("-T,--length", synth.length)->capture_default_str();
	synth_cmd->add_option("--seed", synth.seed)->capture_default_str();
	synth_cmd->add_option("--shift-fraction", synth.shift_fraction)->capture_default_str();
	synth_cmd->add_option("--background-fraction", synth.background_fraction)->capture_default_str();
	synth_cmd->add_option("-o,--output", synth_out, "Panel CSV path")->required();

	std::string m4_train;
	std::string m4_test;
	std::string m4_out;
	std::size_t m4_length = 300;
	auto *m4 = app.add_subcommand("m4-prep", "Resize M4 weekly series");
	m4->add_option("train", m4_train, "M4 weekly train CSV")->required();
	m4->add_option("--test", m4_test, "M4 weekly test CSV (appended after resizing)");
	m4->add_option("--length", m4_length)->capture_default_str();
	m4->add_option("-o,--output", m4_out, "Output directory")->required();

	std::string forecasts;
	std::string column = "y_hat";
	std::string eval_out;
	auto *evaluate = app.add_subcommand("evaluate", "Score external test forecasts");
	evaluate->add_option("config", config_path, "Run configuration naming the dataset")->required();
	evaluate->add_option("forecasts", forecasts, "CSV with id, step and a value column")->required();
	evaluate->add_option("--column", column)->capture_default_str();
	evaluate->add_option("-o,--output", eval_out, "Output directory")->required();

	try {
		app.parse(argc, argv);
	} catch (const CLI::ParseError &e) {
		const int code = app.exit(e);
		return code == 0 ? hermes::cli::kExitOk : hermes::cli::kExitConfig;
	}

	hermes::parallel::configure_from_env();

	RunConfig config;
	try {
		if (*run || *grid) {
			config = load_with(config_path, overrides);
		} else if (*evaluate) {
			config = hermes::cli::load_run_config(config_path);
		} else if (*synth_cmd) {
			synth.validate();
		}
	} catch (const std::exception &e) {
		std::cerr << "config error: " << e.what() << '\n';
		return hermes::cli::kExitConfig;
	}

	try {
		if (*run) {
			hermes::cli::cmd_run(config, std::cout);
		} else if (*grid) {
			const auto cells = hermes::cli::cmd_grid_search(config, std::cout);
			std::cout << "grid table: " << (config.output_dir / "grid.csv").string() << '\n';
			if (std::none_of(cells.begin(), cells.end(), [](const auto &c) { return c.metric.has_value(); })) {
				std::cerr << "every grid cell failed\n";
				return hermes::cli::kExitRun;
			}
		} else if (*synth_cmd) {
			const auto panel = hermes::cli::cmd_synth(synth, synth_out);
			std::cout << "wrote " << panel.panel.size() << " series to " << synth_out << '\n';
		} else if (*m4) {
			const auto panel = hermes::cli::cmd_m4_prep(
			    m4_train, m4_test.empty() ? std::nullopt : std::optional<std::filesystem::path>(m4_test), m4_out, m4_length);
			std::cout << "prepared " << panel.size() << " series in " << m4_out << '\n';
		} else if (*evaluate) {
			const auto report = hermes::cli::cmd_evaluate(config, forecasts, column, eval_out);
			std::cout << "MASE " << report.mase.mean << ", sMAPE " << report.smape.mean << ", accuracy "
			          << report.accuracy.mean;
			if (report.owa) {
				std::cout << ", OWA " << report.owa->mean;
			}
			std::cout << '\n';
		}
	} catch (const ConfigError &e) {
		std::cerr << "config error: " << e.what() << '\n';
		return hermes::cli::kExitConfig;
	} catch (const std::exception &e) {
		std::cerr << "run failed: " << e.what() << '\n';
		return hermes::cli::kExitRun;
	}
	return hermes::cli::kExitOk;
}
