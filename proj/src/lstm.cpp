#include "hermes/corrector.hpp"

#include <Eigen/Dense>

#include <cmath>

namespace hermes::corrector {

namespace {

using RowMatrix = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using ConstRowMap = Eigen::Map<const RowMatrix>;
using RowMap = Eigen::Map<RowMatrix>;
using ConstVecMap = Eigen::Map<const Eigen::VectorXd>;
using VecMap = Eigen::Map<Eigen::VectorXd>;

struct LayerCache {
	Eigen::MatrixXd gates;     // 4H x w, activated (i, f, g, o)
	Eigen::MatrixXd cell;      // H x w
	Eigen::MatrixXd tanh_cell; // H x w
	Eigen::MatrixXd hidden;    // H x w
};

struct ForwardPass {
	Eigen::MatrixXd input; // F x w
	std::vector<LayerCache> layers;
	Eigen::VectorXd output;
};

void check_input(const LstmParams &params, const CorrectorInput &input) {
	if (input.width != params.shape.input_width) {
		throw std::invalid_argument("lstm: input width " + std::to_string(input.width) + " does not match network width " +
		                            std::to_string(params.shape.input_width));
	}
	if (input.window == 0 || input.features.size() != input.window * input.width) {
		throw std::invalid_argument("lstm: malformed input window");
	}
	if (params.values.size() != LstmLayout(params.shape).size) {
		throw std::invalid_argument("lstm: parameter vector does not match its shape");
	}
}

Eigen::VectorXd sigmoid(const Eigen::VectorXd &x) {
	return (1.0 + (-x.array()).exp()).inverse().matrix();
}

Eigen::VectorXd tanh_vec(const Eigen::VectorXd &x) {
	return x.array().tanh().matrix();
}

ForwardPass run_forward(const LstmParams &params, const CorrectorInput &input) {
	check_input(params, input);
	const LstmLayout layout(params.shape);
	const auto H = static_cast<Eigen::Index>(params.shape.hidden);
	const auto w = static_cast<Eigen::Index>(input.window);
	const double *p = params.values.data();

	ForwardPass pass;
	pass.input = Eigen::Map<const Eigen::MatrixXd>(input.features.data(), static_cast<Eigen::Index>(input.width), w);
	pass.layers.resize(layout.layers.size());

	const Eigen::MatrixXd *below = &pass.input;
	for (std::size_t l = 0; l < layout.layers.size(); ++l) {
		const auto &L = layout.layers[l];
		const ConstRowMap wx(p + L.wx, 4 * H, static_cast<Eigen::Index>(L.input_width));
		const ConstRowMap wh(p + L.wh, 4 * H, H);
		const ConstVecMap bias(p + L.bias, 4 * H);

		auto &cache = pass.layers[l];
		Eigen::MatrixXd pre = wx * (*below);
		pre.colwise() += bias;
		cache.gates.resize(4 * H, w);
		cache.cell.resize(H, w);
		cache.tanh_cell.resize(H, w);
		cache.hidden.resize(H, w);

		Eigen::VectorXd h_prev = Eigen::VectorXd::Zero(H);
		Eigen::VectorXd c_prev = Eigen::VectorXd::Zero(H);
		Eigen::VectorXd a(4 * H);
		for (Eigen::Index t = 0; t < w; ++t) {
			a.noalias() = pre.col(t);
			a.noalias() += wh * h_prev;
			if (!a.allFinite()) {
				throw DivergenceError("lstm_forward: non-finite activation in layer " + std::to_string(l + 1) + " at step " +
				                          std::to_string(t + 1),
				                      static_cast<std::size_t>(t + 1));
			}
			const Eigen::VectorXd ig = sigmoid(a.segment(0, H));
			const Eigen::VectorXd fg = sigmoid(a.segment(H, H));
			const Eigen::VectorXd gg = tanh_vec(a.segment(2 * H, H));
			const Eigen::VectorXd og = sigmoid(a.segment(3 * H, H));
			const Eigen::VectorXd c = fg.cwiseProduct(c_prev) + ig.cwiseProduct(gg);
			const Eigen::VectorXd tc = tanh_vec(c);
			h_prev = og.cwiseProduct(tc);
			c_prev = c;
			cache.gates.col(t) << ig, fg, gg, og;
			cache.cell.col(t) = c;
			cache.tanh_cell.col(t) = tc;
			cache.hidden.col(t) = h_prev;
		}
		below = &cache.hidden;
	}

	const ConstRowMap head_w(p + layout.head_w, static_cast<Eigen::Index>(params.shape.horizon), H);
	const ConstVecMap head_b(p + layout.head_b, static_cast<Eigen::Index>(params.shape.horizon));
	pass.output = head_w * pass.layers.back().hidden.col(w - 1) + head_b;
	if (!pass.output.allFinite()) {
		throw DivergenceError("lstm_forward: non-finite output", input.window);
	}
	return pass;
}

// Accumulates d loss / d params into `grad` given d loss / d output.
void run_backward(const LstmParams &params, const ForwardPass &pass, const Eigen::VectorXd &d_output, double *grad) {
	const LstmLayout layout(params.shape);
	const auto H = static_cast<Eigen::Index>(params.shape.hidden);
	const auto w = pass.input.cols();
	const double *p = params.values.data();

	const ConstRowMap head_w(p + layout.head_w, static_cast<Eigen::Index>(params.shape.horizon), H);
	RowMap d_head_w(grad + layout.head_w, static_cast<Eigen::Index>(params.shape.horizon), H);
	VecMap d_head_b(grad + layout.head_b, static_cast<Eigen::Index>(params.shape.horizon));
	d_head_w.noalias() += d_output * pass.layers.back().hidden.col(w - 1).transpose();
	d_head_b += d_output;

	// Gradient w.r.t. each layer's hidden outputs coming from above.
	Eigen::MatrixXd d_hidden = Eigen::MatrixXd::Zero(H, w);
	d_hidden.col(w - 1) = head_w.transpose() * d_output;

	for (std::size_t li = layout.layers.size(); li-- > 0;) {
		const auto &L = layout.layers[li];
		const auto &cache = pass.layers[li];
		const Eigen::MatrixXd &below = li == 0 ? pass.input : pass.layers[li - 1].hidden;
		const auto in_width = static_cast<Eigen::Index>(L.input_width);
		const ConstRowMap wx(p + L.wx, 4 * H, in_width);
		const ConstRowMap wh(p + L.wh, 4 * H, H);

		Eigen::MatrixXd d_pre(4 * H, w);
		Eigen::VectorXd dh_next = Eigen::VectorXd::Zero(H);
		Eigen::VectorXd dc_next = Eigen::VectorXd::Zero(H);
		for (Eigen::Index t = w - 1; t >= 0; --t) {
			const auto ig = cache.gates.col(t).segment(0, H).array();
			const auto fg = cache.gates.col(t).segment(H, H).array();
			const auto gg = cache.gates.col(t).segment(2 * H, H).array();
			const auto og = cache.gates.col(t).segment(3 * H, H).array();
			const auto tc = cache.tanh_cell.col(t).array();

			const Eigen::ArrayXd dh = d_hidden.col(t).array() + dh_next.array();
			const Eigen::ArrayXd dc = dc_next.array() + dh * og * (1.0 - tc * tc);
			const Eigen::ArrayXd d_o = dh * tc;
			const Eigen::ArrayXd d_i = dc * gg;
			const Eigen::ArrayXd d_g = dc * ig;
			Eigen::ArrayXd d_f;
			if (t > 0) {
				d_f = dc * cache.cell.col(t - 1).array();
			} else {
				d_f = Eigen::ArrayXd::Zero(H);
			}
			dc_next = (dc * fg).matrix();

			d_pre.col(t).segment(0, H) = (d_i * ig * (1.0 - ig)).matrix();
			d_pre.col(t).segment(H, H) = (d_f * fg * (1.0 - fg)).matrix();
			d_pre.col(t).segment(2 * H, H) = (d_g * (1.0 - gg * gg)).matrix();
			d_pre.col(t).segment(3 * H, H) = (d_o * og * (1.0 - og)).matrix();
			dh_next.noalias() = wh.transpose() * d_pre.col(t);
		}

		RowMap d_wx(grad + L.wx, 4 * H, in_width);
		RowMap d_wh(grad + L.wh, 4 * H, H);
		VecMap d_bias(grad + L.bias, 4 * H);
		d_wx.noalias() += d_pre * below.transpose();
		if (w > 1) {
			d_wh.noalias() += d_pre.rightCols(w - 1) * cache.hidden.leftCols(w - 1).transpose();
		}
		d_bias += d_pre.rowwise().sum();
		if (li > 0) {
			d_hidden.noalias() = wx.transpose() * d_pre;
		}
	}
}

void accumulate_example(const LstmParams &params, const CorrectorExample &example, LossKind loss, double *grad,
                        double &loss_value) {
	const auto pass = run_forward(params, example.input);
	const std::vector<double> rnn(pass.output.data(), pass.output.data() + pass.output.size());
	const auto y_hat = recombine(example.pred_forecast, rnn, example.input.window_mean);
	loss_value = loss_eval(loss, example.target, y_hat, example.input.window_mean);

	std::vector<double> d_yhat(y_hat.size());
	loss_gradient(loss, example.target, y_hat, example.input.window_mean, d_yhat);
	Eigen::VectorXd d_output(static_cast<Eigen::Index>(d_yhat.size()));
	for (std::size_t i = 0; i < d_yhat.size(); ++i) {
		d_output(static_cast<Eigen::Index>(i)) = d_yhat[i] * example.input.window_mean;
	}
	run_backward(params, pass, d_output, grad);
}

void check_batch(std::span<const CorrectorExample> examples, std::span<const std::size_t> indices) {
	if (indices.empty()) {
		throw std::invalid_argument("lstm_gradient: empty batch");
	}
	for (const auto i : indices) {
		if (i >= examples.size()) {
			throw std::out_of_range("lstm_gradient: example index out of range");
		}
	}
}

void finish_batch(LstmGradient &out, std::size_t batch) {
	const double scale = 1.0 / static_cast<double>(batch);
	for (auto &g : out.values) {
		g *= scale;
		if (!std::isfinite(g)) {
			throw DivergenceError("lstm_gradient: non-finite gradient", 0);
		}
	}
	out.loss *= scale;
}

} // namespace

LstmLayout::LstmLayout(const LstmShape &shape) {
	if (shape.input_width == 0 || shape.hidden == 0 || shape.layers == 0 || shape.horizon == 0) {
		throw std::invalid_argument("LstmShape: all dimensions must be positive");
	}
	const std::size_t gates = 4 * shape.hidden;
	std::size_t offset = 0;
	for (std::size_t l = 0; l < shape.layers; ++l) {
		Layer layer;
		layer.input_width = l == 0 ? shape.input_width : shape.hidden;
		layer.wx = offset;
		offset += gates * layer.input_width;
		layer.wh = offset;
		offset += gates * shape.hidden;
		layer.bias = offset;
		offset += gates;
		layers.push_back(layer);
	}
	head_w = offset;
	offset += shape.horizon * shape.hidden;
	head_b = offset;
	offset += shape.horizon;
	size = offset;
}

LstmParams::LstmParams(const LstmShape &s) : shape(s), values(LstmLayout(s).size, 0.0) {}

LstmParams init_params(const LstmShape &shape, std::uint64_t seed) {
	LstmParams params(shape);
	const LstmLayout layout(shape);
	std::uint64_t state = seed;
	// splitmix64 stream.
	auto next = [&state]() {
		std::uint64_t z = (state += 0x9E3779B97F4A7C15ULL);
		z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9ULL;
		z = (z ^ (z >> 27)) * 0x94D049BB133111EBULL;
		return z ^ (z >> 31);
	};
	auto fill = [&](std::size_t offset, std::size_t count, std::size_t fan_in) {
		const double s = 1.0 / std::sqrt(static_cast<double>(fan_in));
		for (std::size_t i = 0; i < count; ++i) {
			params.values[offset + i] = (2.0 * rng::uniform(next()) - 1.0) * s;
		}
	};
	const std::size_t gates = 4 * shape.hidden;
	for (const auto &L : layout.layers) {
		fill(L.wx, gates * L.input_width, L.input_width);
		fill(L.wh, gates * shape.hidden, shape.hidden);
		// Gate blocks are (input, forget, cell, output); only the forget block starts at 1.
		for (std::size_t j = 0; j < shape.hidden; ++j) {
			params.values[L.bias + shape.hidden + j] = 1.0;
		}
	}
	fill(layout.head_w, shape.horizon * shape.hidden, shape.hidden);
	return params;
}

std::vector<double> lstm_forward(const LstmParams &params, const CorrectorInput &input) {
	const auto pass = run_forward(params, input);
	return {pass.output.data(), pass.output.data() + pass.output.size()};
}

double example_loss(const LstmParams &params, const CorrectorExample &example, LossKind loss) {
	const auto rnn = lstm_forward(params, example.input);
	const auto y_hat = recombine(example.pred_forecast, rnn, example.input.window_mean);
	return loss_eval(loss, example.target, y_hat, example.input.window_mean);
}

LstmGradient example_gradient(const LstmParams &params, const CorrectorExample &example, LossKind loss) {
	LstmGradient out;
	out.values.assign(params.values.size(), 0.0);
	accumulate_example(params, example, loss, out.values.data(), out.loss);
	return out;
}

LstmGradient lstm_gradient(const LstmParams &params, std::span<const CorrectorExample> examples,
                           std::span<const std::size_t> indices, LossKind loss) {
	check_batch(examples, indices);
	const std::size_t n = indices.size();
	std::vector<LstmGradient> parts(n);
	const auto count = static_cast<std::ptrdiff_t>(n);
	bool failed = false;
	std::string failure;
#pragma omp parallel for schedule(dynamic, 1)
	for (std::ptrdiff_t b = 0; b < count; ++b) {
		try {
			parts[static_cast<std::size_t>(b)] = example_gradient(params, examples[indices[static_cast<std::size_t>(b)]], loss);
		} catch (const std::exception &e) {
#pragma omp critical(hermes_gradient_failure)
			{
				failed = true;
				failure = e.what();
			}
		}
	}
	if (failed) {
		throw DivergenceError(failure, 0);
	}
	LstmGradient out;
	out.values.assign(params.values.size(), 0.0);
	for (const auto &part : parts) {
		for (std::size_t k = 0; k < out.values.size(); ++k) {
			out.values[k] += part.values[k];
		}
		out.loss += part.loss;
	}
	finish_batch(out, n);
	return out;
}

LstmGradient lstm_gradient_serial(const LstmParams &params, std::span<const CorrectorExample> examples,
                                  std::span<const std::size_t> indices, LossKind loss) {
	check_batch(examples, indices);
	LstmGradient out;
	out.values.assign(params.values.size(), 0.0);
	for (const auto i : indices) {
		const auto part = example_gradient(params, examples[i], loss);
		for (std::size_t k = 0; k < out.values.size(); ++k) {
			out.values[k] += part.values[k];
		}
		out.loss += part.loss;
	}
	finish_batch(out, indices.size());
	return out;
}

double mean_loss(const LstmParams &params, std::span<const CorrectorExample> examples, LossKind loss) {
	if (examples.empty()) {
		throw std::invalid_argument("mean_loss: no examples");
	}
	std::vector<double> losses(examples.size());
	const auto count = static_cast<std::ptrdiff_t>(examples.size());
	bool failed = false;
	std::string failure;
#pragma omp parallel for schedule(dynamic, 1)
	for (std::ptrdiff_t i = 0; i < count; ++i) {
		try {
			losses[static_cast<std::size_t>(i)] = example_loss(params, examples[static_cast<std::size_t>(i)], loss);
		} catch (const std::exception &e) {
#pragma omp critical(hermes_loss_failure)
			{
				failed = true;
				failure = e.what();
			}
		}
	}
	if (failed) {
		throw DivergenceError(failure, 0);
	}
	double total = 0.0;
	for (const double l : losses) {
		total += l;
	}
	return total / static_cast<double>(examples.size());
}

} // namespace hermes::corrector
