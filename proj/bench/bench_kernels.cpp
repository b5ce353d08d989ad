#include "hermes/cli.hpp"
#include "hermes/corrector.hpp"
#include "hermes/parallel.hpp"
#include "hermes/predictors.hpp"

#include <chrono>
#include <cstdio>
#include <functional>
#include <numeric>

namespace {

using clock_type = std::chrono::steady_clock;

double seconds(const std::function<void()> &fn, int repeats) {
	fn(); // warm-up
	const auto start = clock_type::now();
	for (int r = 0; r < repeats; ++r) {
		fn();
	}
	return std::chrono::duration<double>(clock_type::now() - start).count() / repeats;
}

void report(const char *name, double serial, double parallel) {
	std::printf("%-28s serial %9.4f s   parallel %9.4f s   speedup %5.2fx\n", name, serial, parallel, serial / parallel);
}

} // namespace

int main(int argc, char **argv) {
	hermes::parallel::configure_from_env();
	const std::size_t n_series = argc > 1 ? std::stoul(argv[1]) : 200;
	std::printf("workers: %zu, series: %zu\n", hermes::parallel::workers(), n_series);

	hermes::cli::SynthConfig synth;
	synth.n_series = n_series;
	const auto data = hermes::cli::generate_synthetic(synth);
	std::vector<std::span<const double>> spans;
	std::vector<std::size_t> cuts;
	for (const auto &s : data.panel.series) {
		spans.emplace_back(s.values);
		cuts.push_back(s.length() - 52);
	}

	for (const auto kind : {hermes::predictors::PredictorKind::hw_ets, hermes::predictors::PredictorKind::theta,
	                        hermes::predictors::PredictorKind::tbats_lite}) {
		const double serial =
		    seconds([&] { hermes::predictors::fit_forecast_all_serial(kind, spans, cuts, 52, 52); }, 1);
		const double parallel = seconds([&] { hermes::predictors::fit_forecast_all(kind, spans, cuts, 52, 52); }, 1);
		report((std::string("fit_forecast_all/") + std::string(hermes::predictors::to_string(kind))).c_str(), serial,
		       parallel);
	}

	std::vector<hermes::corrector::CorrectorExample> examples;
	for (std::size_t i = 0; i < data.panel.size(); ++i) {
		const auto &values = data.panel.series[i].values;
		const std::size_t cut = values.size() - 52;
		std::span<const double> history(values.data(), cut);
		const auto fit = hermes::predictors::fit_predictor(hermes::predictors::PredictorKind::snaive, history, 52);
		hermes::corrector::CorrectorExample ex;
		ex.pred_forecast = hermes::predictors::forecast_predictor(fit, 52);
		ex.input = hermes::corrector::build_z_input(history, ex.pred_forecast, 104, 52);
		ex.target.assign(values.begin() + static_cast<std::ptrdiff_t>(cut), values.end());
		examples.push_back(std::move(ex));
	}
	const auto params = hermes::corrector::init_params({1, 50, 3, 52}, 0);
	std::vector<std::size_t> batch(std::min<std::size_t>(64, examples.size()));
	std::iota(batch.begin(), batch.end(), 0);
	const auto loss = hermes::corrector::LossKind::SMAE;
	const double serial =
	    seconds([&] { hermes::corrector::lstm_gradient_serial(params, examples, batch, loss); }, 3);
	const double parallel = seconds([&] { hermes::corrector::lstm_gradient(params, examples, batch, loss); }, 3);
	report("lstm_gradient/batch64", serial, parallel);
	return 0;
}
