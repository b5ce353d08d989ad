// Trigonometric seasonality + SES level + ARMA(p, q) errors.
//
// The seasonal block is a static Fourier regression with K harmonics. The
// seasonally adjusted series is smoothed by SES; its one-step errors are
// modelled as ARMA(p, q) estimated by Hannan-Rissanen least squares. The
// transform (identity/log), K and (p, q) are chosen jointly by AIC computed on
// original-scale one-step residuals.

#include "hermes/predictors.hpp"

#include <Eigen/Dense>

#include <algorithm>
#include <cmath>
#include <numbers>
#include <numeric>

namespace hermes::predictors::detail {

namespace {

struct ArmaFit {
	std::vector<double> ar;
	std::vector<double> ma;
	std::vector<double> innovations; // same length as the input errors
};

bool stationary(const std::vector<double> &phi) {
	if (phi.empty()) {
		return true;
	}
	if (phi.size() == 1) {
		return std::abs(phi[0]) < 1.0;
	}
	// Roots of 1 - phi1 z - phi2 z^2 outside the unit circle.
	return phi[1] + phi[0] < 1.0 && phi[1] - phi[0] < 1.0 && std::abs(phi[1]) < 1.0;
}

bool invertible(const std::vector<double> &theta) {
	// 1 + theta1 z + theta2 z^2 = 1 - (-theta1) z - (-theta2) z^2
	std::vector<double> neg(theta.size());
	std::transform(theta.begin(), theta.end(), neg.begin(), [](double v) { return -v; });
	return stationary(neg);
}

std::vector<double> arma_innovations(std::span<const double> r, const std::vector<double> &ar,
                                     const std::vector<double> &ma) {
	std::vector<double> eps(r.size(), 0.0);
	for (std::size_t t = 0; t < r.size(); ++t) {
		double pred = 0.0;
		for (std::size_t i = 0; i < ar.size(); ++i) {
			if (t > i) {
				pred += ar[i] * r[t - i - 1];
			}
		}
		for (std::size_t j = 0; j < ma.size(); ++j) {
			if (t > j) {
				pred += ma[j] * eps[t - j - 1];
			}
		}
		eps[t] = r[t] - pred;
	}
	return eps;
}

Eigen::VectorXd least_squares(const Eigen::MatrixXd &x, const Eigen::VectorXd &y) {
	return x.colPivHouseholderQr().solve(y);
}

std::optional<ArmaFit> fit_arma(std::span<const double> r, std::size_t p, std::size_t q) {
	ArmaFit out;
	const std::size_t n = r.size();
	if (p == 0 && q == 0) {
		out.innovations.assign(r.begin(), r.end());
		return out;
	}

	// Innovation proxies from a long autoregression.
	std::vector<double> proxy(n, 0.0);
	std::size_t start = p;
	if (q > 0) {
		const std::size_t long_order = std::min<std::size_t>(10, n / 4);
		if (long_order == 0 || n <= long_order + q + p + 2) {
			return std::nullopt;
		}
		const std::size_t rows = n - long_order;
		Eigen::MatrixXd x(rows, long_order);
		Eigen::VectorXd y(rows);
		for (std::size_t t = long_order; t < n; ++t) {
			y(t - long_order) = r[t];
			for (std::size_t i = 0; i < long_order; ++i) {
				x(t - long_order, i) = r[t - i - 1];
			}
		}
		const Eigen::VectorXd coef = least_squares(x, y);
		for (std::size_t t = long_order; t < n; ++t) {
			double pred = 0.0;
			for (std::size_t i = 0; i < long_order; ++i) {
				pred += coef(i) * r[t - i - 1];
			}
			proxy[t] = r[t] - pred;
		}
		start = std::max(p, long_order + q);
	}
	if (n <= start + p + q + 1) {
		return std::nullopt;
	}
	const std::size_t rows = n - start;
	Eigen::MatrixXd x(rows, p + q);
	Eigen::VectorXd y(rows);
	for (std::size_t t = start; t < n; ++t) {
		y(t - start) = r[t];
		for (std::size_t i = 0; i < p; ++i) {
			x(t - start, i) = r[t - i - 1];
		}
		for (std::size_t j = 0; j < q; ++j) {
			x(t - start, p + j) = proxy[t - j - 1];
		}
	}
	const Eigen::VectorXd coef = least_squares(x, y);
	for (std::size_t i = 0; i < p; ++i) {
		out.ar.push_back(coef(i));
	}
	for (std::size_t j = 0; j < q; ++j) {
		out.ma.push_back(coef(p + j));
	}
	if (!std::all_of(coef.data(), coef.data() + coef.size(), [](double v) { return std::isfinite(v); })) {
		return std::nullopt;
	}
	if (!stationary(out.ar) || !invertible(out.ma)) {
		return std::nullopt;
	}
	out.innovations = arma_innovations(r, out.ar, out.ma);
	return out;
}

double harmonic_term(std::size_t t, std::size_t j, std::size_t m, bool cosine) {
	const double angle = 2.0 * std::numbers::pi * static_cast<double>(j) * static_cast<double>(t % m) / static_cast<double>(m);
	return cosine ? std::cos(angle) : std::sin(angle);
}

struct Candidate {
	TbatsLiteParams params;
	std::vector<double> residuals;
};

} // namespace

TbatsLiteParams fit_tbats_lite(std::span<const double> y, std::size_t m, const TbatsOptions &options,
                               std::vector<double> &residuals) {
	const std::size_t n = y.size();
	if (n < 3) {
		throw FitError("tbats_lite: history too short");
	}
	const bool positive = std::all_of(y.begin(), y.end(), [](double v) { return v > 0.0; });
	const double scale = std::accumulate(y.begin(), y.end(), 0.0, [](double a, double v) { return a + std::abs(v); }) /
	                     static_cast<double>(n);

	const std::size_t k_max = m >= 3 ? std::min(options.max_harmonics, (m - 1) / 2) : 0;
	const std::size_t k_min = k_max > 0 ? 1 : 0;
	const std::size_t order_max = std::min<std::size_t>(options.max_arma_order, 2);

	std::optional<Candidate> best;
	std::vector<bool> transforms = {false};
	if (options.allow_log && positive) {
		transforms.push_back(true);
	}

	for (const bool use_log : transforms) {
		std::vector<double> x(n);
		for (std::size_t t = 0; t < n; ++t) {
			x[t] = use_log ? std::log(y[t]) : y[t];
		}
		for (std::size_t k = k_min; k <= k_max; ++k) {
			// Fourier regression with intercept.
			Eigen::MatrixXd design(n, 1 + 2 * k);
			Eigen::VectorXd target(n);
			for (std::size_t t = 0; t < n; ++t) {
				target(t) = x[t];
				design(t, 0) = 1.0;
				for (std::size_t j = 1; j <= k; ++j) {
					design(t, 2 * j - 1) = harmonic_term(t, j, m, true);
					design(t, 2 * j) = harmonic_term(t, j, m, false);
				}
			}
			const Eigen::VectorXd coef = least_squares(design, target);
			std::vector<double> a(k);
			std::vector<double> b(k);
			for (std::size_t j = 1; j <= k; ++j) {
				a[j - 1] = coef(2 * j - 1);
				b[j - 1] = coef(2 * j);
			}
			std::vector<double> seasonal(n, 0.0);
			std::vector<double> adjusted(n);
			for (std::size_t t = 0; t < n; ++t) {
				for (std::size_t j = 1; j <= k; ++j) {
					seasonal[t] += a[j - 1] * harmonic_term(t, j, m, true) + b[j - 1] * harmonic_term(t, j, m, false);
				}
				adjusted[t] = x[t] - seasonal[t];
			}
			const auto ses = fit_ses(adjusted);
			if (!std::isfinite(ses.sse)) {
				continue;
			}
			for (std::size_t order = 0; order <= 2 * order_max; ++order) {
				for (std::size_t p = 0; p <= std::min(order, order_max); ++p) {
					const std::size_t q = order - p;
					if (q > order_max) {
						continue;
					}
					const auto arma = fit_arma(ses.errors, p, q);
					if (!arma) {
						continue;
					}
					// One-step fitted values on the original scale, t = 1..n-1.
					Candidate c;
					double sse = 0.0;
					for (std::size_t t = 1; t < n; ++t) {
						const double fitted_x = x[t] - arma->innovations[t - 1];
						const double fitted = use_log ? std::exp(fitted_x) : fitted_x;
						const double e = y[t] - fitted;
						c.residuals.push_back(e);
						sse += e * e;
					}
					if (!std::isfinite(sse)) {
						continue;
					}
					const std::size_t n_params = 2 + 2 * k + p + q;
					const double score = aic(sse, n - 1, n_params, scale);
					if (best && !(score < best->params.aic)) {
						continue;
					}
					auto &prm = c.params;
					prm.log_transform = use_log;
					prm.harmonics = k;
					prm.cos_coefficients = a;
					prm.sin_coefficients = b;
					prm.alpha = ses.alpha;
					prm.level = ses.level;
					prm.ar = arma->ar;
					prm.ma = arma->ma;
					const std::size_t ne = ses.errors.size();
					prm.recent_errors.assign(ses.errors.end() - static_cast<std::ptrdiff_t>(std::min(p, ne)), ses.errors.end());
					prm.recent_innovations.assign(arma->innovations.end() - static_cast<std::ptrdiff_t>(std::min(q, ne)),
					                              arma->innovations.end());
					prm.aic = score;
					best = std::move(c);
				}
			}
		}
	}
	if (!best) {
		throw FitError("tbats_lite: no admissible model", "all (transform, K, p, q) candidates failed");
	}
	residuals = std::move(best->residuals);
	return std::move(best->params);
}

std::vector<double> forecast_tbats_lite(const TbatsLiteParams &p, std::size_t history_length, std::size_t m,
                                        std::size_t h) {
	// Error history for the ARMA recursion, oldest first; future innovations are zero.
	std::vector<double> errors = p.recent_errors;
	std::vector<double> innovations = p.recent_innovations;
	std::vector<double> out(h);
	for (std::size_t i = 0; i < h; ++i) {
		double arma = 0.0;
		for (std::size_t a = 0; a < p.ar.size(); ++a) {
			if (errors.size() > a) {
				arma += p.ar[a] * errors[errors.size() - 1 - a];
			}
		}
		for (std::size_t b = 0; b < p.ma.size(); ++b) {
			if (innovations.size() > b) {
				arma += p.ma[b] * innovations[innovations.size() - 1 - b];
			}
		}
		errors.push_back(arma);
		innovations.push_back(0.0);

		const std::size_t t = history_length + i;
		double seasonal = 0.0;
		for (std::size_t j = 1; j <= p.harmonics; ++j) {
			seasonal += p.cos_coefficients[j - 1] * harmonic_term(t, j, m, true) +
			            p.sin_coefficients[j - 1] * harmonic_term(t, j, m, false);
		}
		const double x = p.level + seasonal + arma;
		out[i] = p.log_transform ? std::exp(x) : x;
	}
	return out;
}

} // namespace hermes::predictors::detail
