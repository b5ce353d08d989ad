#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <span>
#include <stdexcept>
#include <string>
#include <string_view>
#include <vector>

namespace hermes::corrector {

// ---------------------------------------------------------------------------
// Inputs
// ---------------------------------------------------------------------------

/**
 * @brief Normalized window fed to the recurrent corrector.
 *
 * `features` is row-major (window x width): step i holds
 * (z_i, weak_1, ..., weak_K). `window_mean` rescales the network output back to
 * series units. `origin` is the forecast origin T (number of observations the
 * window was cut from).
 */
struct CorrectorInput {
	std::size_t window = 0;
	std::size_t width = 1;
	std::vector<double> features;
	double window_mean = 0.0;
	std::size_t origin = 0;
	std::size_t horizon = 0;

	double z(std::size_t i) const { return features[i * width]; }
	double at(std::size_t step, std::size_t channel) const { return features[step * width + channel]; }
	std::size_t weak_channels() const { return width - 1; }
};

/// Forecast step (1..h) sharing the phase of window step i (1..w).
constexpr std::size_t phase_of(std::size_t i, std::size_t h) {
	return (i - 1) % h + 1;
}

/**
 * z_i = (y_{T-w+i} - pred_{T+k(i)}) / mean(y_{T-w+1..T}).
 * `history` holds the observations up to and including T.
 */
CorrectorInput build_z_input(std::span<const double> history, std::span<const double> pred_forecast, std::size_t w,
                             std::size_t h);

/**
 * Appends K weak channels, sliced to steps T-w+1..T. Each channel must cover
 * at least `origin` steps; values past the origin are never read.
 */
CorrectorInput build_concat_input(const CorrectorInput &z_input, std::span<const std::vector<double>> channels);

// ---------------------------------------------------------------------------
// Losses
// ---------------------------------------------------------------------------

enum class LossKind { MAE, MSE, SMAE, SMSE };

std::string_view to_string(LossKind kind);
LossKind parse_loss(std::string_view name);

/**
 * MAE = mean |e|, MSE = mean e^2, SMAE = sum |e| / ybar, SMSE = sum e^2 / ybar,
 * with e = y_true - y_hat.
 */
double loss_eval(LossKind kind, std::span<const double> y_true, std::span<const double> y_hat, double window_mean);

/// d loss / d y_hat, written to `out`.
void loss_gradient(LossKind kind, std::span<const double> y_true, std::span<const double> y_hat, double window_mean,
                   std::span<double> out);

// ---------------------------------------------------------------------------
// Network
// ---------------------------------------------------------------------------

struct LstmShape {
	std::size_t input_width = 1;
	std::size_t hidden = 50;
	std::size_t layers = 3;
	std::size_t horizon = 52;

	bool operator==(const LstmShape &) const = default;
};

/// Offsets of every parameter block in the flat vector.
struct LstmLayout {
	struct Layer {
		std::size_t input_width = 0;
		std::size_t wx = 0; // (4H x input_width), row-major
		std::size_t wh = 0; // (4H x H), row-major
		std::size_t bias = 0; // 4H
	};
	std::vector<Layer> layers;
	std::size_t head_w = 0; // (horizon x H), row-major
	std::size_t head_b = 0; // horizon
	std::size_t size = 0;

	explicit LstmLayout(const LstmShape &shape);
};

/**
 * @brief Stacked LSTM with a dense head on the final top-layer state.
 *
 * Gate blocks are ordered (input, forget, cell, output). All parameters live
 * in one flat vector so the optimizer and serialization treat them uniformly.
 */
struct LstmParams {
	LstmShape shape;
	std::vector<double> values;

	LstmParams() = default;
	explicit LstmParams(const LstmShape &s);

	std::size_t size() const { return values.size(); }
};

/// Weights uniform(-s, s) with s = 1/sqrt(fan-in); gate biases zero except the forget gate (1); head bias zero.
LstmParams init_params(const LstmShape &shape, std::uint64_t seed);

/// A non-finite activation appeared; carries the step index.
class DivergenceError : public std::runtime_error {
public:
	DivergenceError(const std::string &what, std::size_t step) : std::runtime_error(what), step_(step) {}
	std::size_t step() const { return step_; }

private:
	std::size_t step_;
};

/// Raw network output RNN(x) of length horizon (before rescaling by the window mean).
std::vector<double> lstm_forward(const LstmParams &params, const CorrectorInput &input);

struct CorrectorExample {
	CorrectorInput input;
	std::vector<double> target;        // y_{T+1..T+h}
	std::vector<double> pred_forecast; // predictor forecast for the same steps
};

/// pred + RNN(x) * ybar, computed exactly in that form.
std::vector<double> recombine(std::span<const double> pred_forecast, std::span<const double> rnn_output,
                              double window_mean);

double example_loss(const LstmParams &params, const CorrectorExample &example, LossKind loss);

struct LstmGradient {
	std::vector<double> values; // same layout as LstmParams::values
	double loss = 0.0;          // batch-mean loss at the current parameters
};

/// Analytic gradient of one example's loss (backpropagation through time).
LstmGradient example_gradient(const LstmParams &params, const CorrectorExample &example, LossKind loss);

/**
 * Batch-mean gradient over `examples[indices[*]]`. Per-example gradients are
 * computed in parallel and reduced in index order, so the result does not
 * depend on the thread count.
 */
LstmGradient lstm_gradient(const LstmParams &params, std::span<const CorrectorExample> examples,
                           std::span<const std::size_t> indices, LossKind loss);

/// Serial reference for lstm_gradient().
LstmGradient lstm_gradient_serial(const LstmParams &params, std::span<const CorrectorExample> examples,
                                  std::span<const std::size_t> indices, LossKind loss);

/// Mean loss over all examples (parallel forward, ordered reduction).
double mean_loss(const LstmParams &params, std::span<const CorrectorExample> examples, LossKind loss);

// ---------------------------------------------------------------------------
// Optimizer and training
// ---------------------------------------------------------------------------

struct AdamConfig {
	double beta1 = 0.9;
	double beta2 = 0.999;
	double epsilon = 1e-8;
};

struct AdamState {
	std::vector<double> first_moment;
	std::vector<double> second_moment;
	std::size_t step = 0;

	AdamState() = default;
	explicit AdamState(std::size_t n) : first_moment(n, 0.0), second_moment(n, 0.0) {}
};

/// Rescales `gradient` in place so its L2 norm is at most `max_norm`; a non-positive bound is a no-op.
void clip_gradient(std::span<double> gradient, double max_norm);

void adam_step(std::span<double> params, std::span<const double> gradient, AdamState &state, double learning_rate,
               const AdamConfig &config = {});

struct TrainConfig {
	LossKind loss = LossKind::SMAE;
	double learning_rate = 0.001;
	std::size_t batch_size = 64;
	std::size_t max_epochs = 100;
	std::size_t patience = 10;
	std::uint64_t seed = 0;
	std::size_t n_windows = 1;
	std::size_t hidden = 50;
	std::size_t layers = 3;
	double clip_norm = 0.0; // rescale batch gradients whose L2 norm exceeds this; 0 disables

	/// Throws std::invalid_argument when an invariant is violated.
	void validate() const;
};

struct EpochRecord {
	std::size_t epoch = 0; // 1-based
	double train_loss = 0.0;
	double eval_loss = 0.0;
};

struct TrainResult {
	LstmParams params;               // snapshot with the lowest eval loss
	std::vector<EpochRecord> trace;
	std::size_t best_epoch = 0;      // 0 when no epoch ran
	double best_eval_loss = 0.0;
};

class TrainingDiverged : public std::runtime_error {
public:
	TrainingDiverged(const std::string &what, std::vector<EpochRecord> trace)
	    : std::runtime_error(what), trace_(std::move(trace)) {}
	const std::vector<EpochRecord> &trace() const { return trace_; }

private:
	std::vector<EpochRecord> trace_;
};

/**
 * Seeded init, shuffled mini-batches, Adam; eval loss after every epoch with
 * best-snapshot checkpointing and patience-based early stopping.
 */
TrainResult train_corrector(std::span<const CorrectorExample> train, std::span<const CorrectorExample> eval,
                            const TrainConfig &config);

// ---------------------------------------------------------------------------
// Serialization
// ---------------------------------------------------------------------------

/// Writes `<stem>.bin` (little-endian float64) and `<stem>.json` (shape manifest).
void save_params(const std::filesystem::path &stem, const LstmParams &params);
LstmParams load_params(const std::filesystem::path &stem);

void write_trace_csv(const std::filesystem::path &path, std::span<const EpochRecord> trace);

/// Deterministic 64-bit generator helpers shared by init and shuffling.
namespace rng {
double uniform(std::uint64_t bits);
void shuffle(std::vector<std::size_t> &items, std::uint64_t seed, std::uint64_t epoch);
} // namespace rng

} // namespace hermes::corrector
