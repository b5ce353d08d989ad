#include "hermes/corrector.hpp"

#include "hermes/csv.hpp"

#include <json.hpp>

#include <bit>
#include <cmath>
#include <fstream>
#include <numeric>

namespace hermes::corrector {

namespace rng {

double uniform(std::uint64_t bits) {
	return static_cast<double>(bits >> 11) * 0x1.0p-53;
}

void shuffle(std::vector<std::size_t> &items, std::uint64_t seed, std::uint64_t epoch) {
	std::uint64_t state = seed * 0x9E3779B97F4A7C15ULL + epoch * 0xD1B54A32D192ED03ULL + 0x2545F4914F6CDD1DULL;
	auto next = [&state]() {
		std::uint64_t z = (state += 0x9E3779B97F4A7C15ULL);
		z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9ULL;
		z = (z ^ (z >> 27)) * 0x94D049BB133111EBULL;
		return z ^ (z >> 31);
	};
	for (std::size_t i = items.size(); i > 1; --i) {
		const auto j = static_cast<std::size_t>(next() % i);
		std::swap(items[i - 1], items[j]);
	}
}

} // namespace rng

CorrectorInput build_z_input(std::span<const double> history, std::span<const double> pred_forecast, std::size_t w,
                             std::size_t h) {
	if (h == 0 || w == 0) {
		throw std::invalid_argument("build_z_input: window and horizon must be positive");
	}
	if (w % h != 0) {
		throw std::invalid_argument("build_z_input: window " + std::to_string(w) + " is not a multiple of horizon " +
		                            std::to_string(h));
	}
	if (history.size() < w) {
		throw std::invalid_argument("build_z_input: history of " + std::to_string(history.size()) +
		                            " steps is shorter than the window " + std::to_string(w));
	}
	if (pred_forecast.size() < h) {
		throw std::invalid_argument("build_z_input: forecast shorter than the horizon");
	}
	const auto window = history.last(w);
	const double mean = std::accumulate(window.begin(), window.end(), 0.0) / static_cast<double>(w);
	if (!(mean > 0.0)) {
		throw std::domain_error("build_z_input: window mean must be positive (got " + csv::format_double(mean) + ")");
	}
	CorrectorInput out;
	out.window = w;
	out.width = 1;
	out.horizon = h;
	out.origin = history.size();
	out.window_mean = mean;
	out.features.resize(w);
	for (std::size_t i = 1; i <= w; ++i) {
		out.features[i - 1] = (window[i - 1] - pred_forecast[phase_of(i, h) - 1]) / mean;
	}
	return out;
}

CorrectorInput build_concat_input(const CorrectorInput &z_input, std::span<const std::vector<double>> channels) {
	if (z_input.width != 1) {
		throw std::invalid_argument("build_concat_input: input already carries weak channels");
	}
	if (channels.empty()) {
		return z_input;
	}
	const std::size_t w = z_input.window;
	const std::size_t origin = z_input.origin;
	for (std::size_t k = 0; k < channels.size(); ++k) {
		if (channels[k].size() < origin || origin < w) {
			throw std::invalid_argument("build_concat_input: weak channel " + std::to_string(k + 1) +
			                            " does not cover the input window");
		}
	}
	CorrectorInput out = z_input;
	out.width = 1 + channels.size();
	out.features.assign(w * out.width, 0.0);
	for (std::size_t i = 0; i < w; ++i) {
		out.features[i * out.width] = z_input.features[i];
		for (std::size_t k = 0; k < channels.size(); ++k) {
			out.features[i * out.width + 1 + k] = channels[k][origin - w + i];
		}
	}
	return out;
}

std::string_view to_string(LossKind kind) {
	switch (kind) {
	case LossKind::MAE:
		return "MAE";
	case LossKind::MSE:
		return "MSE";
	case LossKind::SMAE:
		return "SMAE";
	case LossKind::SMSE:
		return "SMSE";
	}
	return "unknown";
}

LossKind parse_loss(std::string_view name) {
	std::string upper(name);
	for (auto &c : upper) {
		c = static_cast<char>(std::toupper(static_cast<unsigned char>(c)));
	}
	if (upper == "MAE") {
		return LossKind::MAE;
	}
	if (upper == "MSE") {
		return LossKind::MSE;
	}
	if (upper == "SMAE") {
		return LossKind::SMAE;
	}
	if (upper == "SMSE") {
		return LossKind::SMSE;
	}
	throw std::invalid_argument("unknown loss '" + std::string(name) + "'");
}

namespace {

void check_loss_args(LossKind kind, std::span<const double> y_true, std::span<const double> y_hat, double window_mean) {
	if (y_true.size() != y_hat.size() || y_true.empty()) {
		throw std::invalid_argument("loss: truth and forecast lengths differ or are empty");
	}
	if ((kind == LossKind::SMAE || kind == LossKind::SMSE) && !(window_mean > 0.0)) {
		throw std::domain_error("loss: scaled losses need a positive window mean");
	}
}

} // namespace

double loss_eval(LossKind kind, std::span<const double> y_true, std::span<const double> y_hat, double window_mean) {
	check_loss_args(kind, y_true, y_hat, window_mean);
	double abs_sum = 0.0;
	double sq_sum = 0.0;
	for (std::size_t i = 0; i < y_true.size(); ++i) {
		const double e = y_true[i] - y_hat[i];
		abs_sum += std::abs(e);
		sq_sum += e * e;
	}
	const auto h = static_cast<double>(y_true.size());
	switch (kind) {
	case LossKind::MAE:
		return abs_sum / h;
	case LossKind::MSE:
		return sq_sum / h;
	case LossKind::SMAE:
		return abs_sum / window_mean;
	case LossKind::SMSE:
		return sq_sum / window_mean;
	}
	return 0.0;
}

void loss_gradient(LossKind kind, std::span<const double> y_true, std::span<const double> y_hat, double window_mean,
                   std::span<double> out) {
	check_loss_args(kind, y_true, y_hat, window_mean);
	if (out.size() != y_true.size()) {
		throw std::invalid_argument("loss_gradient: output size mismatch");
	}
	const auto h = static_cast<double>(y_true.size());
	for (std::size_t i = 0; i < y_true.size(); ++i) {
		const double e = y_true[i] - y_hat[i];
		const double sign = e > 0.0 ? 1.0 : (e < 0.0 ? -1.0 : 0.0);
		switch (kind) {
		case LossKind::MAE:
			out[i] = -sign / h;
			break;
		case LossKind::MSE:
			out[i] = -2.0 * e / h;
			break;
		case LossKind::SMAE:
			out[i] = -sign / window_mean;
			break;
		case LossKind::SMSE:
			out[i] = -2.0 * e / window_mean;
			break;
		}
	}
}

std::vector<double> recombine(std::span<const double> pred_forecast, std::span<const double> rnn_output,
                              double window_mean) {
	if (pred_forecast.size() < rnn_output.size()) {
		throw std::invalid_argument("recombine: predictor forecast shorter than the network output");
	}
	std::vector<double> out(rnn_output.size());
	for (std::size_t i = 0; i < out.size(); ++i) {
		out[i] = pred_forecast[i] + rnn_output[i] * window_mean;
	}
	return out;
}

void adam_step(std::span<double> params, std::span<const double> gradient, AdamState &state, double learning_rate,
               const AdamConfig &config) {
	if (params.size() != gradient.size()) {
		throw std::invalid_argument("adam_step: gradient size mismatch");
	}
	if (state.first_moment.empty() && state.second_moment.empty()) {
		state.first_moment.assign(params.size(), 0.0);
		state.second_moment.assign(params.size(), 0.0);
	}
	if (state.first_moment.size() != params.size() || state.second_moment.size() != params.size()) {
		throw std::invalid_argument("adam_step: state size mismatch");
	}
	++state.step;
	const double t = static_cast<double>(state.step);
	const double correction1 = 1.0 - std::pow(config.beta1, t);
	const double correction2 = 1.0 - std::pow(config.beta2, t);
	for (std::size_t k = 0; k < params.size(); ++k) {
		const double g = gradient[k];
		auto &m = state.first_moment[k];
		auto &v = state.second_moment[k];
		m = config.beta1 * m + (1.0 - config.beta1) * g;
		v = config.beta2 * v + (1.0 - config.beta2) * g * g;
		const double m_hat = m / correction1;
		const double v_hat = v / correction2;
		params[k] -= learning_rate * m_hat / (std::sqrt(v_hat) + config.epsilon);
	}
}

void TrainConfig::validate() const {
	if (!(learning_rate > 0.0)) {
		throw std::invalid_argument("train config: learning rate must be positive");
	}
	if (batch_size == 0) {
		throw std::invalid_argument("train config: batch size must be at least 1");
	}
	if (max_epochs > 0 && patience >= max_epochs) {
		throw std::invalid_argument("train config: patience must be smaller than max epochs");
	}
	if (n_windows == 0) {
		throw std::invalid_argument("train config: n_windows must be at least 1");
	}
	if (hidden == 0 || layers == 0) {
		throw std::invalid_argument("train config: hidden width and layer count must be positive");
	}
	if (!(clip_norm >= 0.0) || !std::isfinite(clip_norm)) {
		throw std::invalid_argument("train config: clip_norm must be finite and non-negative");
	}
}

void clip_gradient(std::span<double> gradient, double max_norm) {
	if (max_norm <= 0.0) {
		return;
	}
	double sq = 0.0;
	for (const double g : gradient) {
		sq += g * g;
	}
	const double norm = std::sqrt(sq);
	if (norm > max_norm) {
		const double scale = max_norm / norm;
		for (auto &g : gradient) {
			g *= scale;
		}
	}
}

namespace {

LstmShape shape_for(std::span<const CorrectorExample> examples, const TrainConfig &config) {
	const auto &first = examples.front();
	LstmShape shape;
	shape.input_width = first.input.width;
	shape.horizon = first.target.size();
	shape.hidden = config.hidden;
	shape.layers = config.layers;
	for (const auto &e : examples) {
		if (e.input.width != shape.input_width || e.target.size() != shape.horizon ||
		    e.pred_forecast.size() != shape.horizon) {
			throw std::invalid_argument("train_corrector: examples have inconsistent shapes");
		}
	}
	return shape;
}

} // namespace

TrainResult train_corrector(std::span<const CorrectorExample> train, std::span<const CorrectorExample> eval,
                            const TrainConfig &config) {
	config.validate();
	if (train.empty() || eval.empty()) {
		throw std::invalid_argument("train_corrector: train and eval sets must be nonempty");
	}
	const auto shape = shape_for(train, config);
	if (shape_for(eval, config) != shape) {
		throw std::invalid_argument("train_corrector: train and eval shapes differ");
	}

	TrainResult result;
	LstmParams params = init_params(shape, config.seed);
	result.params = params;
	if (config.max_epochs == 0) {
		return result;
	}

	AdamState adam(params.size());
	std::vector<std::size_t> order(train.size());
	std::iota(order.begin(), order.end(), std::size_t{0});
	double best = std::numeric_limits<double>::infinity();
	std::size_t since_best = 0;

	for (std::size_t epoch = 1; epoch <= config.max_epochs; ++epoch) {
		rng::shuffle(order, config.seed, epoch);
		double train_loss = 0.0;
		for (std::size_t start = 0; start < order.size(); start += config.batch_size) {
			const std::size_t stop = std::min(order.size(), start + config.batch_size);
			const std::span<const std::size_t> batch(order.data() + start, stop - start);
			LstmGradient grad;
			try {
				grad = lstm_gradient(params, train, batch, config.loss);
			} catch (const std::exception &e) {
				throw TrainingDiverged(std::string("training diverged at epoch ") + std::to_string(epoch) + ": " + e.what(),
				                       result.trace);
			}
			train_loss += grad.loss * static_cast<double>(batch.size());
			clip_gradient(grad.values, config.clip_norm);
			adam_step(params.values, grad.values, adam, config.learning_rate);
		}
		train_loss /= static_cast<double>(order.size());

		double eval_loss = 0.0;
		try {
			eval_loss = mean_loss(params, eval, config.loss);
		} catch (const std::exception &e) {
			throw TrainingDiverged(std::string("eval diverged at epoch ") + std::to_string(epoch) + ": " + e.what(),
			                       result.trace);
		}
		result.trace.push_back({epoch, train_loss, eval_loss});
		if (!std::isfinite(train_loss) || !std::isfinite(eval_loss)) {
			throw TrainingDiverged("non-finite loss at epoch " + std::to_string(epoch), result.trace);
		}
		if (eval_loss < best) {
			best = eval_loss;
			result.params = params;
			result.best_epoch = epoch;
			result.best_eval_loss = eval_loss;
			since_best = 0;
		} else if (++since_best >= config.patience) {
			break;
		}
	}
	return result;
}

void save_params(const std::filesystem::path &stem, const LstmParams &params) {
	static_assert(std::endian::native == std::endian::little, "parameter files are little-endian");
	const LstmLayout layout(params.shape);
	if (stem.has_parent_path()) {
		std::filesystem::create_directories(stem.parent_path());
	}
	auto bin_path = stem;
	bin_path += ".bin";
	std::ofstream bin(bin_path, std::ios::binary);
	if (!bin) {
		throw std::runtime_error("cannot write " + bin_path.string());
	}
	bin.write(reinterpret_cast<const char *>(params.values.data()),
	          static_cast<std::streamsize>(params.values.size() * sizeof(double)));

	nlohmann::json j;
	j["dtype"] = "float64";
	j["byte_order"] = "little";
	j["count"] = params.values.size();
	j["input_width"] = params.shape.input_width;
	j["hidden"] = params.shape.hidden;
	j["layers"] = params.shape.layers;
	j["horizon"] = params.shape.horizon;
	j["gate_order"] = {"input", "forget", "cell", "output"};
	nlohmann::json blocks = nlohmann::json::array();
	const std::size_t gates = 4 * params.shape.hidden;
	for (std::size_t l = 0; l < layout.layers.size(); ++l) {
		const auto &L = layout.layers[l];
		const std::string prefix = "lstm" + std::to_string(l + 1);
		blocks.push_back({{"name", prefix + ".w_input"}, {"offset", L.wx}, {"rows", gates}, {"cols", L.input_width}});
		blocks.push_back({{"name", prefix + ".w_recurrent"}, {"offset", L.wh}, {"rows", gates}, {"cols", params.shape.hidden}});
		blocks.push_back({{"name", prefix + ".bias"}, {"offset", L.bias}, {"rows", gates}, {"cols", 1}});
	}
	blocks.push_back({{"name", "dense.weight"}, {"offset", layout.head_w}, {"rows", params.shape.horizon}, {"cols", params.shape.hidden}});
	blocks.push_back({{"name", "dense.bias"}, {"offset", layout.head_b}, {"rows", params.shape.horizon}, {"cols", 1}});
	j["blocks"] = std::move(blocks);

	auto json_path = stem;
	json_path += ".json";
	std::ofstream manifest(json_path, std::ios::binary);
	if (!manifest) {
		throw std::runtime_error("cannot write " + json_path.string());
	}
	manifest << j.dump(2) << '\n';
}

LstmParams load_params(const std::filesystem::path &stem) {
	auto json_path = stem;
	json_path += ".json";
	std::ifstream manifest(json_path);
	if (!manifest) {
		throw std::runtime_error("cannot open " + json_path.string());
	}
	const auto j = nlohmann::json::parse(manifest);
	LstmShape shape;
	shape.input_width = j.at("input_width").get<std::size_t>();
	shape.hidden = j.at("hidden").get<std::size_t>();
	shape.layers = j.at("layers").get<std::size_t>();
	shape.horizon = j.at("horizon").get<std::size_t>();
	LstmParams params(shape);
	if (j.at("count").get<std::size_t>() != params.size()) {
		throw std::runtime_error(json_path.string() + ": count does not match shape");
	}
	auto bin_path = stem;
	bin_path += ".bin";
	std::ifstream bin(bin_path, std::ios::binary);
	if (!bin) {
		throw std::runtime_error("cannot open " + bin_path.string());
	}
	bin.read(reinterpret_cast<char *>(params.values.data()), static_cast<std::streamsize>(params.size() * sizeof(double)));
	if (bin.gcount() != static_cast<std::streamsize>(params.size() * sizeof(double))) {
		throw std::runtime_error(bin_path.string() + ": truncated parameter file");
	}
	return params;
}

void write_trace_csv(const std::filesystem::path &path, std::span<const EpochRecord> trace) {
	if (path.has_parent_path()) {
		std::filesystem::create_directories(path.parent_path());
	}
	std::ofstream out(path, std::ios::binary);
	if (!out) {
		throw std::runtime_error("cannot write " + path.string());
	}
	out << "epoch,train_loss,eval_loss\n";
	for (const auto &r : trace) {
		out << r.epoch << ',' << csv::format_double(r.train_loss) << ',' << csv::format_double(r.eval_loss) << '\n';
	}
}

} // namespace hermes::corrector
