#pragma once

#include <json.hpp>

#include <cstddef>
#include <optional>
#include <span>
#include <stdexcept>
#include <string>
#include <string_view>
#include <variant>
#include <vector>

namespace hermes::predictors {

enum class PredictorKind { snaive, hw_ets, theta, stl_es, tbats_lite };

std::string_view to_string(PredictorKind kind);
/// Accepts the canonical names plus the common aliases (ets, thetam, stlm, tbats).
PredictorKind parse_kind(std::string_view name);

/// Fit failure: too-short history, invalid values, or a diverging optimizer.
class FitError : public std::runtime_error {
public:
	FitError(const std::string &what, std::string diagnostics = {})
	    : std::runtime_error(what), diagnostics_(std::move(diagnostics)) {}
	const std::string &diagnostics() const { return diagnostics_; }

private:
	std::string diagnostics_;
};

struct SnaiveParams {
	std::vector<double> pattern; // last m observations, oldest first
};

/// Additive level + additive seasonal exponential smoothing (error-correction form).
struct HwEtsParams {
	double alpha = 0.0;
	double gamma = 0.0;
	double level = 0.0;
	std::vector<double> seasonal; // final state of each phase, indexed by t % m
};

struct ThetaParams {
	std::vector<double> seasonal_indices; // additive, indexed by t % m
	double intercept = 0.0;               // theta=0 line: intercept + slope * t
	double slope = 0.0;
	double alpha = 0.0;                   // SES on the theta=2 line
	double ses_level = 0.0;
};

struct StlEsParams {
	std::vector<double> seasonal_indices; // multiplicative, mean 1, indexed by t % m
	double alpha = 0.0;
	double level = 0.0;
};

struct TbatsLiteParams {
	bool log_transform = false;
	std::size_t harmonics = 0;             // K
	std::vector<double> cos_coefficients;  // a_1..a_K
	std::vector<double> sin_coefficients;  // b_1..b_K
	double alpha = 0.0;
	double level = 0.0;
	std::vector<double> ar;                // phi_1..phi_p
	std::vector<double> ma;                // theta_1..theta_q
	std::vector<double> recent_errors;     // last max(p) SES errors, oldest first
	std::vector<double> recent_innovations; // last max(q) innovations, oldest first
	double aic = 0.0;
};

using PredictorParams = std::variant<SnaiveParams, HwEtsParams, ThetaParams, StlEsParams, TbatsLiteParams>;

struct PredictorFit {
	PredictorKind kind = PredictorKind::snaive;
	std::size_t seasonal_period = 1;
	std::size_t history_length = 0;
	PredictorParams params;
	std::vector<double> residuals; // in-sample one-step errors, original scale
};

struct TbatsOptions {
	bool allow_log = true;
	std::size_t max_harmonics = 5;
	std::size_t max_arma_order = 2;
};

struct FitOptions {
	TbatsOptions tbats;
};

/// Minimum history a kind needs for seasonal period m.
std::size_t min_history(PredictorKind kind, std::size_t m);

PredictorFit fit_predictor(PredictorKind kind, std::span<const double> series, std::size_t m,
                           const FitOptions &options = {});

/// h values for steps T+1..T+h of the fitted history.
std::vector<double> forecast_predictor(const PredictorFit &fit, std::size_t h);

nlohmann::json to_json(const PredictorFit &fit);
PredictorFit fit_from_json(const nlohmann::json &j);

/// Outcome of a fit-and-forecast over one series inside a batch.
struct BatchForecast {
	std::optional<PredictorFit> fit;
	std::vector<double> forecast;
	std::string error;
};

/**
 * Fits `kind` on prefixes `series[n][0, cuts[n])` and forecasts h steps for
 * every n. Failures are captured per series. Runs one OpenMP task per series.
 */
std::vector<BatchForecast> fit_forecast_all(PredictorKind kind, std::span<const std::span<const double>> series,
                                            std::span<const std::size_t> cuts, std::size_t m, std::size_t h,
                                            const FitOptions &options = {});

/// Serial reference for fit_forecast_all().
std::vector<BatchForecast> fit_forecast_all_serial(PredictorKind kind, std::span<const std::span<const double>> series,
                                                   std::span<const std::size_t> cuts, std::size_t m, std::size_t h,
                                                   const FitOptions &options = {});

namespace detail {

/// One-step SSE of simple exponential smoothing started at level y[0].
double ses_sse(std::span<const double> y, double alpha);

struct SesFit {
	double alpha = 0.0;
	double level = 0.0;
	double sse = 0.0;
	std::vector<double> errors; // errors[t-1] = y[t] - level_{t-1}, t >= 1
};

/// Grid over {0.01, 0.03, .., 0.99} then golden-section refinement.
SesFit fit_ses(std::span<const double> y);

TbatsLiteParams fit_tbats_lite(std::span<const double> y, std::size_t m, const TbatsOptions &options,
                               std::vector<double> &residuals);
std::vector<double> forecast_tbats_lite(const TbatsLiteParams &p, std::size_t history_length, std::size_t m,
                                        std::size_t h);

/// AIC = n ln(SSE/n) + 2k, with SSE floored relative to `scale` so exact fits tie.
double aic(double sse, std::size_t n, std::size_t k, double scale);

} // namespace detail

} // namespace hermes::predictors
