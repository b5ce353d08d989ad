#include "hermes/predictors.hpp"

#include "hermes/timeseries_store.hpp"

#include <json.hpp>

#include <algorithm>
#include <cmath>
#include <numeric>
#include <sstream>

namespace hermes::predictors {

namespace {

constexpr double kGridStart = 0.01;
constexpr double kGridStep = 0.02;
constexpr int kGridPoints = 50; // 0.01 .. 0.99

double grid_value(int i) {
	return kGridStart + kGridStep * static_cast<double>(i);
}

/// Rounds a smoothing coefficient to the 1e-6 grid.
double snap(double x) {
	return std::clamp(std::round(x * 1e6) / 1e6, 0.0, 1.0);
}

/// Golden-section minimum of f on [lo, hi]; returns the better of the bracket and `start`.
template <typename F>
double golden_section(F &&f, double lo, double hi, double start, double &best) {
	constexpr double inv_phi = 0.6180339887498949;
	double a = lo;
	double b = hi;
	double c = b - inv_phi * (b - a);
	double d = a + inv_phi * (b - a);
	double fc = f(c);
	double fd = f(d);
	for (int it = 0; it < 40; ++it) {
		if (fc < fd) {
			b = d;
			d = c;
			fd = fc;
			c = b - inv_phi * (b - a);
			fc = f(c);
		} else {
			a = c;
			c = d;
			fc = fd;
			d = a + inv_phi * (b - a);
			fd = f(d);
		}
	}
	const double x = fc < fd ? c : d;
	const double fx = std::min(fc, fd);
	if (fx < best) {
		best = fx;
		return x;
	}
	return start;
}

void require_finite(std::span<const double> y, const char *who) {
	for (std::size_t t = 0; t < y.size(); ++t) {
		if (!std::isfinite(y[t])) {
			throw FitError(std::string(who) + ": non-finite value at index " + std::to_string(t));
		}
	}
}

void require_length(std::span<const double> y, std::size_t needed, const char *who) {
	if (y.size() < needed) {
		throw FitError(std::string(who) + ": history of " + std::to_string(y.size()) + " steps, need at least " +
		               std::to_string(needed));
	}
}

// Additive level + additive seasonal, error-correction recursions.
struct HwRun {
	double sse = 0.0;
	double level = 0.0;
	std::vector<double> seasonal;
};

HwRun run_hw_ets(std::span<const double> y, std::size_t m, double alpha, double gamma,
                 std::vector<double> *residuals = nullptr) {
	HwRun run;
	double level = std::accumulate(y.begin(), y.begin() + static_cast<std::ptrdiff_t>(m), 0.0) / static_cast<double>(m);
	std::vector<double> seasonal(m);
	for (std::size_t j = 0; j < m; ++j) {
		seasonal[j] = y[j] - level;
	}
	double sse = 0.0;
	for (std::size_t t = m; t < y.size(); ++t) {
		const std::size_t phase = t % m;
		const double e = y[t] - (level + seasonal[phase]);
		level += alpha * e;
		seasonal[phase] += gamma * e;
		sse += e * e;
		if (residuals != nullptr) {
			residuals->push_back(e);
		}
	}
	run.sse = sse;
	run.level = level;
	run.seasonal = std::move(seasonal);
	return run;
}

PredictorFit fit_snaive(std::span<const double> y, std::size_t m) {
	require_length(y, m, "snaive");
	PredictorFit fit;
	SnaiveParams p;
	p.pattern.assign(y.end() - static_cast<std::ptrdiff_t>(m), y.end());
	for (std::size_t t = m; t < y.size(); ++t) {
		fit.residuals.push_back(y[t] - y[t - m]);
	}
	fit.params = std::move(p);
	return fit;
}

PredictorFit fit_hw_ets(std::span<const double> y, std::size_t m) {
	require_length(y, 2 * m, "hw_ets");
	// Parameters are selected on a copy centred on the first period so the choice ignores the series offset.
	const double offset =
	    std::accumulate(y.begin(), y.begin() + static_cast<std::ptrdiff_t>(m), 0.0) / static_cast<double>(m);
	std::vector<double> centred(y.begin(), y.end());
	for (auto &v : centred) {
		v -= offset;
	}
	auto sse_of = [&](double a, double g) { return run_hw_ets(centred, m, a, g).sse; };

	double best = std::numeric_limits<double>::infinity();
	double alpha = grid_value(0);
	double gamma = grid_value(0);
	for (int i = 0; i < kGridPoints; ++i) {
		for (int j = 0; j < kGridPoints; ++j) {
			const double s = sse_of(grid_value(i), grid_value(j));
			if (s < best) {
				best = s;
				alpha = grid_value(i);
				gamma = grid_value(j);
			}
		}
	}
	if (!std::isfinite(best)) {
		std::ostringstream diag;
		diag << "grid minimum SSE=" << best;
		throw FitError("hw_ets: optimizer did not converge", diag.str());
	}
	// Coordinate descent around the grid optimum.
	for (int round = 0; round < 20; ++round) {
		const double before = best;
		alpha = golden_section([&](double a) { return sse_of(a, gamma); }, std::max(0.0, alpha - kGridStep),
		                       std::min(1.0, alpha + kGridStep), alpha, best);
		gamma = golden_section([&](double g) { return sse_of(alpha, g); }, std::max(0.0, gamma - kGridStep),
		                       std::min(1.0, gamma + kGridStep), gamma, best);
		if (before - best <= 1e-12 * std::max(1.0, before)) {
			break;
		}
	}
	alpha = snap(alpha);
	gamma = snap(gamma);

	PredictorFit fit;
	auto run = run_hw_ets(y, m, alpha, gamma, &fit.residuals);
	HwEtsParams p;
	p.alpha = alpha;
	p.gamma = gamma;
	p.level = run.level;
	p.seasonal = std::move(run.seasonal);
	fit.params = std::move(p);
	return fit;
}

PredictorFit fit_theta(std::span<const double> y, std::size_t m) {
	const bool seasonal = m > 1;
	require_length(y, seasonal ? 2 * m : 2, "theta");
	const std::size_t n = y.size();

	ThetaParams p;
	p.seasonal_indices = seasonal ? store::additive_seasonal_indices(y, m) : std::vector<double>{0.0};
	const std::size_t period = p.seasonal_indices.size();
	std::vector<double> adjusted(n);
	for (std::size_t t = 0; t < n; ++t) {
		adjusted[t] = y[t] - p.seasonal_indices[t % period];
	}

	// theta = 0 line: least-squares linear trend.
	const double nt = static_cast<double>(n);
	const double t_mean = (nt - 1.0) / 2.0;
	const double y_mean = std::accumulate(adjusted.begin(), adjusted.end(), 0.0) / nt;
	double sxy = 0.0;
	double sxx = 0.0;
	for (std::size_t t = 0; t < n; ++t) {
		const double dt = static_cast<double>(t) - t_mean;
		sxy += dt * (adjusted[t] - y_mean);
		sxx += dt * dt;
	}
	p.slope = sxy / sxx;
	p.intercept = y_mean - p.slope * t_mean;

	// theta = 2 line, extrapolated by SES.
	std::vector<double> line2(n);
	for (std::size_t t = 0; t < n; ++t) {
		line2[t] = 2.0 * adjusted[t] - (p.intercept + p.slope * static_cast<double>(t));
	}
	const auto ses = detail::fit_ses(line2);
	if (!std::isfinite(ses.sse)) {
		throw FitError("theta: SES did not converge");
	}
	p.alpha = ses.alpha;
	p.ses_level = ses.level;

	PredictorFit fit;
	double level = line2[0];
	for (std::size_t t = 1; t < n; ++t) {
		const double fitted = 0.5 * (p.intercept + p.slope * static_cast<double>(t)) + 0.5 * level +
		                      p.seasonal_indices[t % period];
		fit.residuals.push_back(y[t] - fitted);
		level += p.alpha * (line2[t] - level);
	}
	fit.params = std::move(p);
	return fit;
}

PredictorFit fit_stl_es(std::span<const double> y, std::size_t m) {
	const bool seasonal = m > 1;
	require_length(y, seasonal ? 2 * m : 2, "stl_es");
	for (std::size_t t = 0; t < y.size(); ++t) {
		if (!(y[t] > 0.0)) {
			throw FitError("stl_es: multiplicative decomposition needs positive values (index " + std::to_string(t) + ")");
		}
	}
	const std::size_t n = y.size();
	StlEsParams p;
	if (seasonal) {
		// Ratio to a centered moving average, averaged per phase.
		const std::size_t half = m / 2;
		const bool even = m % 2 == 0;
		std::vector<double> sums(m, 0.0);
		std::vector<std::size_t> counts(m, 0);
		for (std::size_t t = half; t + half < n; ++t) {
			double trend = 0.0;
			if (even) {
				trend = 0.5 * y[t - half] + 0.5 * y[t + half];
				for (std::size_t j = t - half + 1; j < t + half; ++j) {
					trend += y[j];
				}
			} else {
				for (std::size_t j = t - half; j <= t + half; ++j) {
					trend += y[j];
				}
			}
			trend /= static_cast<double>(m);
			sums[t % m] += y[t] / trend;
			++counts[t % m];
		}
		p.seasonal_indices.resize(m);
		for (std::size_t j = 0; j < m; ++j) {
			p.seasonal_indices[j] = sums[j] / static_cast<double>(counts[j]);
		}
		const double mean = std::accumulate(p.seasonal_indices.begin(), p.seasonal_indices.end(), 0.0) / static_cast<double>(m);
		for (auto &s : p.seasonal_indices) {
			s /= mean;
		}
	} else {
		p.seasonal_indices = {1.0};
	}
	const std::size_t period = p.seasonal_indices.size();
	std::vector<double> adjusted(n);
	for (std::size_t t = 0; t < n; ++t) {
		adjusted[t] = y[t] / p.seasonal_indices[t % period];
	}
	const auto ses = detail::fit_ses(adjusted);
	if (!std::isfinite(ses.sse)) {
		throw FitError("stl_es: SES did not converge");
	}
	p.alpha = ses.alpha;
	p.level = ses.level;

	PredictorFit fit;
	double level = adjusted[0];
	for (std::size_t t = 1; t < n; ++t) {
		fit.residuals.push_back(y[t] - level * p.seasonal_indices[t % period]);
		level += p.alpha * (adjusted[t] - level);
	}
	fit.params = std::move(p);
	return fit;
}

std::vector<double> json_vector(const nlohmann::json &j, const char *key) {
	return j.at(key).get<std::vector<double>>();
}

} // namespace

std::string_view to_string(PredictorKind kind) {
	switch (kind) {
	case PredictorKind::snaive:
		return "snaive";
	case PredictorKind::hw_ets:
		return "hw_ets";
	case PredictorKind::theta:
		return "theta";
	case PredictorKind::stl_es:
		return "stl_es";
	case PredictorKind::tbats_lite:
		return "tbats_lite";
	}
	return "unknown";
}

PredictorKind parse_kind(std::string_view name) {
	if (name == "snaive") {
		return PredictorKind::snaive;
	}
	if (name == "hw_ets" || name == "ets") {
		return PredictorKind::hw_ets;
	}
	if (name == "theta" || name == "thetam") {
		return PredictorKind::theta;
	}
	if (name == "stl_es" || name == "stlm") {
		return PredictorKind::stl_es;
	}
	if (name == "tbats_lite" || name == "tbats") {
		return PredictorKind::tbats_lite;
	}
	throw std::invalid_argument("unknown predictor kind '" + std::string(name) + "'");
}

std::size_t min_history(PredictorKind kind, std::size_t m) {
	if (kind == PredictorKind::snaive) {
		return std::max<std::size_t>(m, 1);
	}
	return m > 1 ? 2 * m : 2;
}

namespace detail {

double ses_sse(std::span<const double> y, double alpha) {
	double level = y[0];
	double sse = 0.0;
	for (std::size_t t = 1; t < y.size(); ++t) {
		const double e = y[t] - level;
		sse += e * e;
		level += alpha * e;
	}
	return sse;
}

SesFit fit_ses(std::span<const double> y) {
	SesFit out;
	if (y.empty()) {
		out.sse = std::numeric_limits<double>::quiet_NaN();
		return out;
	}
	double best = std::numeric_limits<double>::infinity();
	double alpha = grid_value(0);
	for (int i = 0; i < kGridPoints; ++i) {
		const double s = ses_sse(y, grid_value(i));
		if (s < best) {
			best = s;
			alpha = grid_value(i);
		}
	}
	if (std::isfinite(best)) {
		alpha = golden_section([&](double a) { return ses_sse(y, a); }, std::max(0.0, alpha - kGridStep),
		                       std::min(1.0, alpha + kGridStep), alpha, best);
	}
	out.alpha = alpha;
	out.sse = best;
	double level = y[0];
	for (std::size_t t = 1; t < y.size(); ++t) {
		const double e = y[t] - level;
		out.errors.push_back(e);
		level += alpha * e;
	}
	out.level = level;
	return out;
}

double aic(double sse, std::size_t n, std::size_t k, double scale) {
	const double nn = static_cast<double>(n);
	const double unit = 1e-8 * (scale > 0.0 ? scale : 1.0);
	const double floored = std::max(sse, nn * unit * unit);
	return nn * std::log(floored / nn) + 2.0 * static_cast<double>(k);
}

} // namespace detail

PredictorFit fit_predictor(PredictorKind kind, std::span<const double> series, std::size_t m, const FitOptions &options) {
	if (m == 0) {
		throw FitError("seasonal period must be positive");
	}
	require_finite(series, std::string(to_string(kind)).c_str());
	PredictorFit fit;
	switch (kind) {
	case PredictorKind::snaive:
		fit = fit_snaive(series, m);
		break;
	case PredictorKind::hw_ets:
		fit = fit_hw_ets(series, m);
		break;
	case PredictorKind::theta:
		fit = fit_theta(series, m);
		break;
	case PredictorKind::stl_es:
		fit = fit_stl_es(series, m);
		break;
	case PredictorKind::tbats_lite: {
		require_length(series, min_history(kind, m), "tbats_lite");
		std::vector<double> residuals;
		fit.params = detail::fit_tbats_lite(series, m, options.tbats, residuals);
		fit.residuals = std::move(residuals);
		break;
	}
	}
	fit.kind = kind;
	fit.seasonal_period = m;
	fit.history_length = series.size();
	return fit;
}

std::vector<double> forecast_predictor(const PredictorFit &fit, std::size_t h) {
	if (h == 0) {
		throw std::invalid_argument("forecast_predictor: horizon must be positive");
	}
	const std::size_t n = fit.history_length;
	std::vector<double> out(h);
	std::visit(
	    [&](const auto &p) {
		    using P = std::decay_t<decltype(p)>;
		    if constexpr (std::is_same_v<P, SnaiveParams>) {
			    for (std::size_t i = 0; i < h; ++i) {
				    out[i] = p.pattern[i % p.pattern.size()];
			    }
		    } else if constexpr (std::is_same_v<P, HwEtsParams>) {
			    const std::size_t m = p.seasonal.size();
			    for (std::size_t i = 0; i < h; ++i) {
				    out[i] = p.level + p.seasonal[(n + i) % m];
			    }
		    } else if constexpr (std::is_same_v<P, ThetaParams>) {
			    const std::size_t period = p.seasonal_indices.size();
			    for (std::size_t i = 0; i < h; ++i) {
				    const auto t = static_cast<double>(n + i);
				    out[i] = 0.5 * (p.intercept + p.slope * t) + 0.5 * p.ses_level + p.seasonal_indices[(n + i) % period];
			    }
		    } else if constexpr (std::is_same_v<P, StlEsParams>) {
			    const std::size_t period = p.seasonal_indices.size();
			    for (std::size_t i = 0; i < h; ++i) {
				    out[i] = p.level * p.seasonal_indices[(n + i) % period];
			    }
		    } else {
			    out = detail::forecast_tbats_lite(p, n, fit.seasonal_period, h);
		    }
	    },
	    fit.params);
	for (std::size_t i = 0; i < h; ++i) {
		if (!std::isfinite(out[i])) {
			throw std::runtime_error("forecast_predictor: non-finite forecast at step " + std::to_string(i + 1));
		}
	}
	return out;
}

nlohmann::json to_json(const PredictorFit &fit) {
	nlohmann::json j;
	j["kind"] = to_string(fit.kind);
	j["m"] = fit.seasonal_period;
	j["T"] = fit.history_length;
	nlohmann::json theta;
	std::visit(
	    [&](const auto &p) {
		    using P = std::decay_t<decltype(p)>;
		    if constexpr (std::is_same_v<P, SnaiveParams>) {
			    theta["pattern"] = p.pattern;
		    } else if constexpr (std::is_same_v<P, HwEtsParams>) {
			    theta["alpha"] = p.alpha;
			    theta["gamma"] = p.gamma;
			    theta["level"] = p.level;
			    theta["seasonal"] = p.seasonal;
		    } else if constexpr (std::is_same_v<P, ThetaParams>) {
			    theta["seasonal_indices"] = p.seasonal_indices;
			    theta["intercept"] = p.intercept;
			    theta["slope"] = p.slope;
			    theta["alpha"] = p.alpha;
			    theta["ses_level"] = p.ses_level;
		    } else if constexpr (std::is_same_v<P, StlEsParams>) {
			    theta["seasonal_indices"] = p.seasonal_indices;
			    theta["alpha"] = p.alpha;
			    theta["level"] = p.level;
		    } else {
			    theta["log_transform"] = p.log_transform;
			    theta["harmonics"] = p.harmonics;
			    theta["cos"] = p.cos_coefficients;
			    theta["sin"] = p.sin_coefficients;
			    theta["alpha"] = p.alpha;
			    theta["level"] = p.level;
			    theta["ar"] = p.ar;
			    theta["ma"] = p.ma;
			    theta["recent_errors"] = p.recent_errors;
			    theta["recent_innovations"] = p.recent_innovations;
			    theta["aic"] = p.aic;
		    }
	    },
	    fit.params);
	j["theta"] = std::move(theta);
	return j;
}

PredictorFit fit_from_json(const nlohmann::json &j) {
	PredictorFit fit;
	fit.kind = parse_kind(j.at("kind").get<std::string>());
	fit.seasonal_period = j.at("m").get<std::size_t>();
	fit.history_length = j.at("T").get<std::size_t>();
	const auto &t = j.at("theta");
	switch (fit.kind) {
	case PredictorKind::snaive:
		fit.params = SnaiveParams{json_vector(t, "pattern")};
		break;
	case PredictorKind::hw_ets:
		fit.params = HwEtsParams{t.at("alpha").get<double>(), t.at("gamma").get<double>(), t.at("level").get<double>(),
		                         json_vector(t, "seasonal")};
		break;
	case PredictorKind::theta:
		fit.params = ThetaParams{json_vector(t, "seasonal_indices"), t.at("intercept").get<double>(),
		                         t.at("slope").get<double>(), t.at("alpha").get<double>(), t.at("ses_level").get<double>()};
		break;
	case PredictorKind::stl_es:
		fit.params = StlEsParams{json_vector(t, "seasonal_indices"), t.at("alpha").get<double>(), t.at("level").get<double>()};
		break;
	case PredictorKind::tbats_lite: {
		TbatsLiteParams p;
		p.log_transform = t.at("log_transform").get<bool>();
		p.harmonics = t.at("harmonics").get<std::size_t>();
		p.cos_coefficients = json_vector(t, "cos");
		p.sin_coefficients = json_vector(t, "sin");
		p.alpha = t.at("alpha").get<double>();
		p.level = t.at("level").get<double>();
		p.ar = json_vector(t, "ar");
		p.ma = json_vector(t, "ma");
		p.recent_errors = json_vector(t, "recent_errors");
		p.recent_innovations = json_vector(t, "recent_innovations");
		p.aic = t.at("aic").get<double>();
		fit.params = std::move(p);
		break;
	}
	}
	return fit;
}

namespace {

BatchForecast fit_forecast_one(PredictorKind kind, std::span<const double> series, std::size_t cut, std::size_t m,
                               std::size_t h, const FitOptions &options) {
	BatchForecast out;
	try {
		if (cut > series.size()) {
			throw FitError("cut beyond series end");
		}
		auto fit = fit_predictor(kind, series.first(cut), m, options);
		out.forecast = forecast_predictor(fit, h);
		out.fit = std::move(fit);
	} catch (const std::exception &e) {
		out.fit.reset();
		out.forecast.clear();
		out.error = e.what();
	}
	return out;
}

void check_batch_shapes(std::span<const std::span<const double>> series, std::span<const std::size_t> cuts) {
	if (series.size() != cuts.size()) {
		throw std::invalid_argument("fit_forecast_all: one cut per series required");
	}
}

} // namespace

std::vector<BatchForecast> fit_forecast_all(PredictorKind kind, std::span<const std::span<const double>> series,
                                            std::span<const std::size_t> cuts, std::size_t m, std::size_t h,
                                            const FitOptions &options) {
	check_batch_shapes(series, cuts);
	std::vector<BatchForecast> out(series.size());
	const auto n = static_cast<std::ptrdiff_t>(series.size());
#pragma omp parallel for schedule(dynamic, 1)
	for (std::ptrdiff_t i = 0; i < n; ++i) {
		const auto idx = static_cast<std::size_t>(i);
		out[idx] = fit_forecast_one(kind, series[idx], cuts[idx], m, h, options);
	}
	return out;
}

std::vector<BatchForecast> fit_forecast_all_serial(PredictorKind kind, std::span<const std::span<const double>> series,
                                                   std::span<const std::size_t> cuts, std::size_t m, std::size_t h,
                                                   const FitOptions &options) {
	check_batch_shapes(series, cuts);
	std::vector<BatchForecast> out;
	out.reserve(series.size());
	for (std::size_t i = 0; i < series.size(); ++i) {
		out.push_back(fit_forecast_one(kind, series[i], cuts[i], m, h, options));
	}
	return out;
}

} // namespace hermes::predictors
