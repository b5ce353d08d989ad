#include "doctest.h"

#include "hermes/corrector.hpp"
#include "oracle.hpp"

#include <cmath>
#include <filesystem>
#include <numeric>
#include <random>

using namespace hermes::corrector;

namespace {

std::vector<double> random_vector(std::mt19937_64 &rng, std::size_t n, double lo, double hi) {
	std::uniform_real_distribution<double> dist(lo, hi);
	std::vector<double> v(n);
	for (auto &x : v) {
		x = dist(rng);
	}
	return v;
}

CorrectorExample random_example(std::mt19937_64 &rng, std::size_t w, std::size_t h, std::size_t K) {
	CorrectorExample ex;
	ex.input.window = w;
	ex.input.width = 1 + K;
	ex.input.features = random_vector(rng, w * (1 + K), -0.5, 0.5);
	ex.input.window_mean = std::uniform_real_distribution<double>(2.0, 8.0)(rng);
	ex.input.origin = w;
	ex.input.horizon = h;
	ex.pred_forecast = random_vector(rng, h, 5.0, 10.0);
	// Targets sit 3 units from the forecast.
	ex.target = ex.pred_forecast;
	for (auto &t : ex.target) {
		t += std::uniform_real_distribution<double>(0.0, 1.0)(rng) < 0.5 ? -3.0 : 3.0;
	}
	return ex;
}

double oracle_loss(LossKind kind, const std::vector<double> &y, const std::vector<double> &yhat, double ybar) {
	double s = 0.0;
	for (std::size_t i = 0; i < y.size(); ++i) {
		const double e = y[i] - yhat[i];
		s += (kind == LossKind::MAE || kind == LossKind::SMAE) ? std::fabs(e) : e * e;
	}
	if (kind == LossKind::MAE || kind == LossKind::MSE) {
		return s / static_cast<double>(y.size());
	}
	return s / ybar;
}

double oracle_example_loss(const oracle::Net &net, const std::vector<double> &p, const CorrectorExample &ex,
                           LossKind kind) {
	const auto rnn = oracle::lstm(net, p, ex.input.features, ex.input.window);
	std::vector<double> yhat(rnn.size());
	for (std::size_t j = 0; j < rnn.size(); ++j) {
		yhat[j] = ex.pred_forecast[j] + rnn[j] * ex.input.window_mean;
	}
	return oracle_loss(kind, ex.target, yhat, ex.input.window_mean);
}

} // namespace

TEST_CASE("phase map repeats every h steps") {
	CHECK(phase_of(1, 2) == 1);
	CHECK(phase_of(2, 2) == 2);
	CHECK(phase_of(3, 2) == 1);
	for (std::size_t i = 1; i <= 208; ++i) {
		CHECK(phase_of(i, 52) >= 1);
		CHECK(phase_of(i, 52) <= 52);
		CHECK(phase_of(i, 52) == phase_of(i + 52, 52));
	}
}

TEST_CASE("z input hand example") {
	const std::vector<double> y{10, 12, 11, 13};
	const std::vector<double> pred{11, 12};
	const auto z = build_z_input(y, pred, 4, 2);
	CHECK(z.window_mean == doctest::Approx(11.5).epsilon(1e-15));
	CHECK(z.z(0) == doctest::Approx(-1.0 / 11.5).epsilon(1e-14));
	CHECK(z.z(1) == 0.0);
	CHECK(z.z(2) == 0.0);
	CHECK(z.z(3) == doctest::Approx(1.0 / 11.5).epsilon(1e-14));
	CHECK(z.origin == 4);
}

TEST_CASE("z input uses only the last w observations and is scale invariant") {
	std::vector<double> y{100, 200, 10, 12, 11, 13};
	const std::vector<double> pred{11, 12};
	const auto z = build_z_input(y, pred, 4, 2);
	CHECK(z.window_mean == doctest::Approx(11.5));
	std::vector<double> y3 = y;
	std::vector<double> p3 = pred;
	for (auto &v : y3) {
		v *= 3.0;
	}
	for (auto &v : p3) {
		v *= 3.0;
	}
	const auto z3 = build_z_input(y3, p3, 4, 2);
	for (std::size_t i = 0; i < 4; ++i) {
		CHECK(z3.z(i) == doctest::Approx(z.z(i)).epsilon(1e-14));
	}
}

TEST_CASE("z input is zero for a perfect predictor") {
	const std::vector<double> y{3, 4, 3, 4, 3, 4};
	const auto z = build_z_input(y, std::vector<double>{3, 4}, 6, 2);
	for (std::size_t i = 0; i < 6; ++i) {
		CHECK(z.z(i) == 0.0);
	}
}

TEST_CASE("z input errors") {
	const std::vector<double> zeros(8, 0.0);
	CHECK_THROWS_AS(build_z_input(zeros, std::vector<double>{0, 0}, 4, 2), std::domain_error);
	const std::vector<double> y{1, 2, 3, 4, 5, 6};
	CHECK_THROWS_AS(build_z_input(y, std::vector<double>{1, 2}, 5, 2), std::invalid_argument);
	CHECK_THROWS_AS(build_z_input(y, std::vector<double>{1, 2}, 8, 2), std::invalid_argument);
}

TEST_CASE("concat input appends weak channels from the window") {
	const std::vector<double> y{1, 1, 10, 12, 11, 13};
	const auto z = build_z_input(y, std::vector<double>{11, 12}, 4, 2);
	const std::vector<std::vector<double>> channels{{0.1, 0.2, 0.3, 0.4, 0.5, 0.6, 0.9, 0.9},
	                                                {1, 2, 3, 4, 5, 6, 7, 8}};
	const auto x = build_concat_input(z, channels);
	CHECK(x.width == 3);
	CHECK(x.weak_channels() == 2);
	for (std::size_t i = 0; i < 4; ++i) {
		CHECK(x.z(i) == z.z(i));
		CHECK(x.at(i, 1) == channels[0][2 + i]);
		CHECK(x.at(i, 2) == channels[1][2 + i]);
	}
	const auto same = build_concat_input(z, std::vector<std::vector<double>>{});
	CHECK(same.features == z.features);
	CHECK_THROWS_AS(build_concat_input(z, std::vector<std::vector<double>>{{0.5, 0.5}}), std::invalid_argument);
}

TEST_CASE("fashion input width") {
	std::vector<double> y(209, 5.0);
	std::vector<double> pred(52, 5.0);
	const auto z = build_z_input(y, pred, 104, 52);
	CHECK(z.features.size() == 104);
	const std::vector<std::vector<double>> channels(2, std::vector<double>(261, 0.5));
	const auto x = build_concat_input(z, channels);
	CHECK(x.window == 104);
	CHECK(x.width == 3);
}

TEST_CASE("losses by direct substitution") {
	const std::vector<double> y{3, 5};
	const std::vector<double> yhat{2, 6};
	for (const auto kind : {LossKind::MAE, LossKind::MSE, LossKind::SMAE, LossKind::SMSE}) {
		CHECK(loss_eval(kind, y, yhat, 2.0) == doctest::Approx(1.0).epsilon(1e-15));
		CHECK(loss_eval(kind, y, y, 2.0) == 0.0);
	}
	const std::vector<double> y2{1, 2, 3};
	const std::vector<double> p2{1.5, 0.5, 4};
	CHECK(loss_eval(LossKind::SMAE, y2, p2, 1.7) == doctest::Approx(3.0 * loss_eval(LossKind::MAE, y2, p2, 1.7) / 1.7));
	CHECK_THROWS_AS(loss_eval(LossKind::SMAE, y, yhat, 0.0), std::domain_error);
	CHECK(parse_loss("smae") == LossKind::SMAE);
	CHECK_THROWS_AS(parse_loss("huber"), std::invalid_argument);
}

TEST_CASE("loss gradients match finite differences") {
	const std::vector<double> y{3, 5, -1};
	std::vector<double> yhat{2.2, 6.1, 0.7};
	for (const auto kind : {LossKind::MAE, LossKind::MSE, LossKind::SMAE, LossKind::SMSE}) {
		std::vector<double> g(3);
		loss_gradient(kind, y, yhat, 2.5, g);
		for (std::size_t j = 0; j < 3; ++j) {
			auto up = yhat;
			auto dn = yhat;
			up[j] += 1e-6;
			dn[j] -= 1e-6;
			const double fd = (loss_eval(kind, y, up, 2.5) - loss_eval(kind, y, dn, 2.5)) / 2e-6;
			CHECK(g[j] == doctest::Approx(fd).epsilon(1e-7));
		}
	}
}

TEST_CASE("layout matches the reference parameter count") {
	for (std::size_t K : {0u, 1u, 2u}) {
		const LstmShape shape{1 + K, 50, 3, 52};
		const LstmLayout layout(shape);
		CHECK(layout.size == oracle::lstm_size({1 + K, 50, 3, 52}));
		CHECK(layout.layers.size() == 3);
		CHECK(layout.layers[1].input_width == 50);
	}
}

TEST_CASE("forward pass agrees with the loop oracle") {
	std::mt19937_64 rng(7);
	for (std::size_t K : {0u, 1u}) {
		const LstmShape shape{1 + K, 5, 3, 4};
		const auto params = init_params(shape, 11 + K);
		const auto ex = random_example(rng, 8, 4, K);
		const auto got = lstm_forward(params, ex.input);
		const auto want = oracle::lstm({1 + K, 5, 3, 4}, params.values, ex.input.features, 8);
		REQUIRE(got.size() == 4);
		for (std::size_t j = 0; j < 4; ++j) {
			CHECK(got[j] == doctest::Approx(want[j]).epsilon(1e-12));
		}
	}
}

TEST_CASE("zero network outputs its dense bias") {
	const LstmShape shape{1, 4, 3, 3};
	LstmParams params(shape);
	const LstmLayout layout(shape);
	params.values[layout.head_b + 0] = 0.25;
	params.values[layout.head_b + 1] = -1.0;
	params.values[layout.head_b + 2] = 2.0;
	CorrectorInput in;
	in.window = 6;
	in.width = 1;
	in.features = {1, -2, 3, 0.5, 0.1, 9};
	in.window_mean = 1.0;
	const auto out = lstm_forward(params, in);
	CHECK(out == std::vector<double>{0.25, -1.0, 2.0});
}

TEST_CASE("initialization is seeded and bounded") {
	const LstmShape shape{2, 50, 3, 52};
	const auto a = init_params(shape, 3);
	const auto b = init_params(shape, 3);
	const auto c = init_params(shape, 4);
	CHECK(a.values == b.values);
	CHECK(a.values != c.values);
	const LstmLayout layout(shape);
	for (std::size_t i = 0; i < 4 * 50 * 2; ++i) {
		CHECK(std::fabs(a.values[layout.layers[0].wx + i]) <= 1.0 / std::sqrt(2.0));
	}
	for (std::size_t i = 0; i < 4 * 50 * 50; ++i) {
		CHECK(std::fabs(a.values[layout.layers[1].wh + i]) <= 1.0 / std::sqrt(50.0));
	}
	for (std::size_t j = 0; j < 200; ++j) {
		const double bias = a.values[layout.layers[2].bias + j];
		CHECK(bias == ((j >= 50 && j < 100) ? 1.0 : 0.0));
	}
	for (std::size_t j = 0; j < 52; ++j) {
		CHECK(a.values[layout.head_b + j] == 0.0);
	}
}

TEST_CASE("analytic gradient matches central differences on 20 small configurations") {
	std::size_t worst_index = 0;
	double worst = 0.0;
	for (std::uint64_t seed = 0; seed < 20; ++seed) {
		std::mt19937_64 rng(1000 + seed);
		const std::size_t K = seed % 2;
		const auto kind = static_cast<LossKind>(seed % 4);
		const oracle::Net net{1 + K, 3, 3, 2};
		const auto params = init_params({1 + K, 3, 3, 2}, seed);
		const auto ex = random_example(rng, 6, 2, K);
		const auto grad = example_gradient(params, ex, kind);
		REQUIRE(grad.values.size() == params.values.size());
		const double floor = 1e-5 * std::max(1.0, std::fabs(grad.loss));
		CHECK(grad.loss == doctest::Approx(oracle_example_loss(net, params.values, ex, kind)).epsilon(1e-12));
		for (std::size_t i = 0; i < params.values.size(); ++i) {
			auto up = params.values;
			auto dn = params.values;
			up[i] += 1e-5;
			dn[i] -= 1e-5;
			const double fd = (oracle_example_loss(net, up, ex, kind) - oracle_example_loss(net, dn, ex, kind)) / 2e-5;
			const double a = grad.values[i];
			const double rel = std::fabs(a - fd) / std::max({std::fabs(a), std::fabs(fd), floor});
			if (rel > worst) {
				worst = rel;
				worst_index = i;
			}
			CHECK_MESSAGE(rel < 1e-4, "seed " << seed << " i " << i << " a " << a << " fd " << fd << " loss " << grad.loss);
		}
	}
	MESSAGE("worst relative error " << worst << " at parameter " << worst_index);
}

TEST_CASE("batch gradient is the mean of example gradients; serial and parallel agree bit for bit") {
	std::mt19937_64 rng(5);
	const LstmShape shape{2, 4, 3, 3};
	const auto params = init_params(shape, 9);
	std::vector<CorrectorExample> examples;
	for (int i = 0; i < 13; ++i) {
		examples.push_back(random_example(rng, 9, 3, 1));
	}
	std::vector<std::size_t> idx{4, 0, 12, 7, 3};
	const auto par = lstm_gradient(params, examples, idx, LossKind::SMAE);
	const auto ser = lstm_gradient_serial(params, examples, idx, LossKind::SMAE);
	CHECK(par.values == ser.values);
	CHECK(par.loss == ser.loss);

	std::vector<double> mean(params.size(), 0.0);
	for (const auto i : idx) {
		const auto g = example_gradient(params, examples[i], LossKind::SMAE);
		for (std::size_t k = 0; k < mean.size(); ++k) {
			mean[k] += g.values[k] / 5.0;
		}
	}
	for (std::size_t k = 0; k < mean.size(); ++k) {
		CHECK(par.values[k] == doctest::Approx(mean[k]).epsilon(1e-12));
	}

	const std::vector<std::size_t> dup{2, 2};
	const std::vector<std::size_t> single{2};
	const auto gd = lstm_gradient(params, examples, dup, LossKind::MSE);
	const auto gs = lstm_gradient(params, examples, single, LossKind::MSE);
	for (std::size_t k = 0; k < gd.values.size(); ++k) {
		CHECK(gd.values[k] == doctest::Approx(gs.values[k]).epsilon(1e-14));
	}
}

TEST_CASE("dense head gradient vanishes at the SMAE optimum") {
	const LstmShape shape{1, 3, 3, 2};
	auto params = init_params(shape, 1);
	std::mt19937_64 rng(2);
	auto ex = random_example(rng, 6, 2, 0);
	const auto rnn = lstm_forward(params, ex.input);
	ex.target = recombine(ex.pred_forecast, rnn, ex.input.window_mean);
	const auto g = example_gradient(params, ex, LossKind::SMSE);
	const LstmLayout layout(shape);
	for (std::size_t k = layout.head_w; k < layout.size; ++k) {
		CHECK(g.values[k] == 0.0);
	}
	CHECK(g.loss == 0.0);
}

TEST_CASE("adam first step and zero gradient") {
	std::vector<double> p{1.0, -2.0, 0.5};
	const std::vector<double> g{0.3, -4.0, 1e-3};
	AdamState state;
	adam_step(p, g, state, 0.01);
	CHECK(state.step == 1);
	for (std::size_t i = 0; i < 3; ++i) {
		const double m_hat = g[i];
		const double v_hat = g[i] * g[i];
		const double expected = std::vector<double>{1.0, -2.0, 0.5}[i] - 0.01 * m_hat / (std::sqrt(v_hat) + 1e-8);
		CHECK(p[i] == doctest::Approx(expected).epsilon(1e-14));
	}
	const auto before = p;
	const auto m1 = state.first_moment;
	const auto v1 = state.second_moment;
	const std::vector<double> zero(3, 0.0);
	adam_step(p, zero, state, 0.01);
	for (std::size_t i = 0; i < 3; ++i) {
		CHECK(state.first_moment[i] == doctest::Approx(0.9 * m1[i]));
		CHECK(state.second_moment[i] == doctest::Approx(0.999 * v1[i]));
	}
	// The decayed first moment keeps moving the parameters; the update is not zero here.
	std::vector<double> fresh{1.0, 2.0};
	AdamState fresh_state;
	adam_step(fresh, std::vector<double>{0.0, 0.0}, fresh_state, 0.01);
	CHECK(fresh == std::vector<double>{1.0, 2.0});
	CHECK(before != p);
	CHECK_THROWS_AS(adam_step(p, std::vector<double>{1.0}, state, 0.01), std::invalid_argument);
}

TEST_CASE("train config validation") {
	TrainConfig c;
	CHECK_NOTHROW(c.validate());
	c.patience = 100;
	CHECK_THROWS_AS(c.validate(), std::invalid_argument);
	c = {};
	c.learning_rate = 0.0;
	CHECK_THROWS_AS(c.validate(), std::invalid_argument);
	c = {};
	c.batch_size = 0;
	CHECK_THROWS_AS(c.validate(), std::invalid_argument);
}

namespace {

std::vector<CorrectorExample> zero_residual_examples(std::size_t n, std::uint64_t seed) {
	std::mt19937_64 rng(seed);
	std::vector<CorrectorExample> out;
	for (std::size_t i = 0; i < n; ++i) {
		auto ex = random_example(rng, 6, 2, 0);
		ex.target = ex.pred_forecast;
		out.push_back(std::move(ex));
	}
	return out;
}

} // namespace

TEST_CASE("training with zero epochs returns the initial parameters") {
	const auto train = zero_residual_examples(4, 1);
	TrainConfig c;
	c.max_epochs = 0;
	c.patience = 0;
	c.hidden = 3;
	c.seed = 8;
	const auto r = train_corrector(train, train, c);
	CHECK(r.trace.empty());
	CHECK(r.best_epoch == 0);
	CHECK(r.params.values == init_params({1, 3, 3, 2}, 8).values);
}

TEST_CASE("training on zero residuals drives the correction toward zero") {
	const auto train = zero_residual_examples(32, 3);
	const auto eval = zero_residual_examples(16, 4);
	TrainConfig c;
	c.hidden = 4;
	c.batch_size = 8;
	c.max_epochs = 40;
	c.patience = 10;
	c.learning_rate = 0.01;
	c.seed = 1;
	const auto initial = mean_loss(init_params({1, 4, 3, 2}, 1), eval, LossKind::SMAE);
	const auto r = train_corrector(train, eval, c);
	REQUIRE(!r.trace.empty());
	CHECK(r.best_eval_loss < initial);
	for (const auto &rec : r.trace) {
		CHECK(r.best_eval_loss <= rec.eval_loss);
	}
	CHECK(mean_loss(r.params, eval, LossKind::SMAE) == r.best_eval_loss);

	const auto again = train_corrector(train, eval, c);
	CHECK(again.params.values == r.params.values);
	REQUIRE(again.trace.size() == r.trace.size());
	for (std::size_t i = 0; i < r.trace.size(); ++i) {
		CHECK(again.trace[i].train_loss == r.trace[i].train_loss);
		CHECK(again.trace[i].eval_loss == r.trace[i].eval_loss);
	}
}

TEST_CASE("parameter files round trip") {
	const auto params = init_params({2, 5, 3, 4}, 42);
	const auto dir = std::filesystem::temp_directory_path() / "hermes_test_params";
	std::filesystem::create_directories(dir);
	save_params(dir / "p", params);
	const auto back = load_params(dir / "p");
	CHECK(back.shape == params.shape);
	CHECK(back.values == params.values);
	std::filesystem::resize_file(dir / "p.bin", 16);
	CHECK_THROWS(load_params(dir / "p"));
	std::filesystem::remove_all(dir);
}

TEST_CASE("shuffle is a seeded permutation") {
	std::vector<std::size_t> a(50);
	std::iota(a.begin(), a.end(), 0);
	auto b = a;
	auto c = a;
	rng::shuffle(b, 1, 2);
	rng::shuffle(c, 1, 2);
	CHECK(b == c);
	rng::shuffle(c, 1, 3);
	CHECK(b != c);
	std::sort(b.begin(), b.end());
	CHECK(a == b);
}
