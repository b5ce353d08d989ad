#include "doctest.h"

#include "hermes/eval_metrics.hpp"
#include "oracle.hpp"
#include "support.hpp"

#include <cmath>
#include <random>

using namespace hermes::metrics;

namespace {

std::vector<double> uniform(std::mt19937_64 &rng, std::size_t n, double lo, double hi) {
	std::uniform_real_distribution<double> d(lo, hi);
	std::vector<double> v(n);
	for (auto &x : v) {
		x = d(rng);
	}
	return v;
}

SeriesScore score(std::string id, std::optional<double> m, double s, TrendLabel t, TrendLabel p) {
	SeriesScore out;
	out.id = std::move(id);
	out.mase = m;
	out.smape = s;
	out.true_label = t;
	out.predicted_label = p;
	return out;
}

} // namespace

TEST_CASE("MASE hand examples") {
	const std::vector<double> hist{1, 2, 3, 4, 5, 6};
	CHECK(mase(hist, std::vector<double>{7, 8}, std::vector<double>{8, 8}, 1) == doctest::Approx(0.5).epsilon(1e-15));
	CHECK(mase(hist, std::vector<double>{7, 8}, std::vector<double>{7, 8}, 1) == 0.0);
	CHECK_THROWS_AS(mase(std::vector<double>(10, 3.0), std::vector<double>{1}, std::vector<double>{2}, 1),
	                ZeroScaleError);
	CHECK_THROWS_AS(mase(std::vector<double>{1, 2}, std::vector<double>{1}, std::vector<double>{2}, 2),
	                std::invalid_argument);
	CHECK_THROWS_AS(mase(hist, std::vector<double>{1, 2}, std::vector<double>{2}, 1), std::invalid_argument);
}

TEST_CASE("MASE matches the displayed double sum on random inputs") {
	std::mt19937_64 rng(17);
	for (int trial = 0; trial < 200; ++trial) {
		const std::size_t m = 1 + rng() % 13;
		const std::size_t T = m + 1 + rng() % 80;
		const std::size_t h = 1 + rng() % 20;
		const auto hist = uniform(rng, T, -50, 50);
		const auto truth = uniform(rng, h, -50, 50);
		const auto pred = uniform(rng, h, -50, 50);
		const double expected = oracle::mase(hist, truth, pred, m);
		CHECK(mase(hist, truth, pred, m) == doctest::Approx(expected).epsilon(1e-12));

		// Joint rescaling and shifting leave the score unchanged.
		auto affine = [](std::vector<double> v) {
			for (auto &x : v) {
				x = 3.5 * x + 20.0;
			}
			return v;
		};
		CHECK(mase(affine(hist), affine(truth), affine(pred), m) == doctest::Approx(expected).epsilon(1e-10));
	}
}

TEST_CASE("sMAPE") {
	CHECK(smape(std::vector<double>{100}, std::vector<double>{50}) == doctest::Approx(200.0 / 3.0).epsilon(1e-15));
	CHECK(smape(std::vector<double>{3, 4}, std::vector<double>{3, 4}) == 0.0);
	CHECK(smape(std::vector<double>{0, 1}, std::vector<double>{0, 1}) == 0.0);
	CHECK(smape(std::vector<double>{1}, std::vector<double>{-1}) == 200.0);
	std::mt19937_64 rng(2);
	for (int trial = 0; trial < 100; ++trial) {
		const auto a = uniform(rng, 10, -5, 5);
		const auto b = uniform(rng, 10, -5, 5);
		const double s = smape(a, b);
		CHECK(s == doctest::Approx(smape(b, a)).epsilon(1e-14));
		CHECK(s >= 0.0);
		CHECK(s <= 200.0);
	}
}

TEST_CASE("OWA") {
	CHECK(owa({9.161, 2.777}, {9.161, 2.777}) == 1.0);
	CHECK(owa({2.0, 1.0}, {4.0, 2.0}) == 0.5);
	CHECK(owa({3.0, 1.0}, {4.0, 2.0}) == doctest::Approx(0.625));
	CHECK_THROWS_AS(owa({1, 1}, {0, 1}), std::domain_error);
	CHECK_THROWS_AS(owa({1, 1}, {1, 0}), std::domain_error);
}

TEST_CASE("trend classification with a strict 5% threshold") {
	const std::vector<double> prev{100, 100};
	CHECK(classify_trend(prev, std::vector<double>{106, 106}) == TrendLabel::increasing);
	CHECK(classify_trend(prev, std::vector<double>{100, 100}) == TrendLabel::flat);
	CHECK(classify_trend(prev, std::vector<double>{94, 94}) == TrendLabel::decreasing);
	CHECK(classify_trend(std::vector<double>{100}, std::vector<double>{105}) == TrendLabel::flat);
	CHECK(classify_trend(std::vector<double>{100}, std::vector<double>{95}) == TrendLabel::flat);
	CHECK(classify_trend(std::vector<double>{10, 30}, std::vector<double>{1, 45}) == TrendLabel::increasing);
	// Joint rescaling keeps the label.
	CHECK(classify_trend(std::vector<double>{0.2, 0.6}, std::vector<double>{0.02, 0.9}) == TrendLabel::increasing);
	CHECK_THROWS_AS(classify_trend(std::vector<double>{0.0}, std::vector<double>{1.0}), std::domain_error);
	CHECK_THROWS_AS(classify_trend(std::vector<double>{-1.0}, std::vector<double>{1.0}), std::domain_error);
	CHECK_THROWS_AS(classify_trend(std::vector<double>{}, std::vector<double>{1.0}), std::invalid_argument);
	// Repeating the previous year always yields flat.
	std::mt19937_64 rng(5);
	for (int i = 0; i < 50; ++i) {
		const auto year = uniform(rng, 52, 0.1, 10);
		CHECK(classify_trend(year, year) == TrendLabel::flat);
	}
}

TEST_CASE("confusion matrix and accuracy") {
	using L = TrendLabel;
	const std::vector<L> truth{L::decreasing, L::flat, L::increasing, L::increasing, L::flat};
	const std::vector<L> pred{L::decreasing, L::increasing, L::increasing, L::flat, L::flat};
	const auto c = confusion_and_accuracy(truth, pred);
	CHECK(c.counts[0][0] == 1);
	CHECK(c.counts[1][2] == 1);
	CHECK(c.counts[1][1] == 1);
	CHECK(c.counts[2][2] == 1);
	CHECK(c.counts[2][1] == 1);
	CHECK(c.total() == 5);
	CHECK(c.true_count(L::increasing) == 2);
	CHECK(c.accuracy == doctest::Approx(0.6));

	const auto perfect = confusion_and_accuracy(truth, truth);
	CHECK(perfect.accuracy == 1.0);
	for (std::size_t i = 0; i < 3; ++i) {
		for (std::size_t j = 0; j < 3; ++j) {
			if (i != j) {
				CHECK(perfect.counts[i][j] == 0);
			}
		}
	}
	// An always-flat predictor scores the flat share.
	const std::vector<L> flat(truth.size(), L::flat);
	CHECK(confusion_and_accuracy(truth, flat).accuracy == doctest::Approx(0.4));
	CHECK_THROWS(confusion_and_accuracy(std::vector<L>{}, std::vector<L>{}));
	CHECK_THROWS(confusion_and_accuracy(truth, std::span(flat).first(2)));
}

TEST_CASE("mean and sample standard deviation") {
	const auto two = mean_std(std::vector<double>{0.71, 0.73});
	CHECK(two.mean == doctest::Approx(0.72));
	CHECK(two.std == doctest::Approx(std::sqrt(2.0) / 100.0).epsilon(1e-12));
	CHECK(two.n == 2);
	const auto one = mean_std(std::vector<double>{0.5});
	CHECK(one.std == 0.0);
	CHECK(mean_std(std::vector<double>{0.4, 0.4}).std == 0.0);
}

TEST_CASE("aggregate report over seeds") {
	using L = TrendLabel;
	std::vector<std::vector<SeriesScore>> runs(2);
	runs[0] = {score("a", 0.6, 10.0, L::flat, L::flat), score("b", 0.8, 30.0, L::increasing, L::flat),
	           score("c", std::nullopt, 20.0, L::decreasing, L::decreasing)};
	runs[1] = {score("a", 0.7, 12.0, L::flat, L::flat), score("b", 0.76, 28.0, L::increasing, L::increasing),
	           score("c", std::nullopt, 20.0, L::decreasing, L::flat)};
	runs[1][1].fallback = true;

	const auto report = aggregate_report(runs, MetricPair{20.0, 1.0});
	REQUIRE(report.per_seed.size() == 2);
	CHECK(report.per_seed[0].mean_mase == doctest::Approx(0.7));
	CHECK(report.per_seed[0].n_zero_scale == 1);
	CHECK(report.per_seed[1].n_fallback == 1);
	CHECK(report.per_seed[0].accuracy == doctest::Approx(2.0 / 3.0));
	CHECK(report.per_seed[1].accuracy == doctest::Approx(2.0 / 3.0));
	CHECK(report.mase.mean == doctest::Approx((0.7 + 0.73) / 2.0));
	CHECK(report.mase.std == doctest::Approx(std::fabs(0.7 - 0.73) / std::sqrt(2.0)));
	REQUIRE(report.owa.has_value());
	const double owa0 = 0.5 * (20.0 / 20.0 + 0.7 / 1.0);
	const double owa1 = 0.5 * (20.0 / 20.0 + 0.73 / 1.0);
	CHECK(report.owa->mean == doctest::Approx((owa0 + owa1) / 2.0));
	CHECK(report.series.size() == 3);
	CHECK(report.series[0].mase == 0.6);
	CHECK(report.confusion.counts[2][1] == 1);

	const auto single = aggregate_report(std::span(runs).first(1));
	CHECK(single.mase.std == 0.0);
	CHECK(!single.owa.has_value());
	CHECK_THROWS(aggregate_report(std::span<const std::vector<SeriesScore>>{}));
}

TEST_CASE("report serialization") {
	using L = TrendLabel;
	std::vector<std::vector<SeriesScore>> runs{{score("x,y", 0.5, 10.0, L::flat, L::increasing)}};
	const auto report = aggregate_report(runs);
	const auto j = to_json(report);
	CHECK(j.at("mase").at("mean") == 0.5);

	support::TempDir dir("metrics");
	write_series_csv(dir / "s.csv", report.series);
	write_confusion_csv(dir / "c.csv", report.confusion);
	const auto series = support::read_text(dir / "s.csv");
	CHECK(series.find("\"x,y\"") != std::string::npos);
	const auto confusion = support::read_text(dir / "c.csv");
	CHECK(confusion.find("flat") != std::string::npos);
}
