#pragma once

#include <cstddef>
#include <filesystem>
#include <optional>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

namespace hermes::store {

/// Raised by the loaders; the message names the offending row.
class LoadError : public std::runtime_error {
public:
	using std::runtime_error::runtime_error;
};

struct Series {
	std::string id;
	std::vector<double> values;
	std::optional<std::string> category;
	std::optional<std::string> geozone;

	std::size_t length() const { return values.size(); }
};

/**
 * @brief N weekly univariate series with unique ids.
 *
 * Fashion panels are aligned (every series has the same length). M4 panels
 * are ragged. `dates` carries the header of aligned panels and is empty for
 * ragged ones.
 */
struct TimePanel {
	std::vector<Series> series;
	std::vector<std::string> dates;

	std::size_t size() const { return series.size(); }
	bool empty() const { return series.empty(); }
	bool aligned() const;
	/// Common length of an aligned panel; throws for ragged or empty panels.
	std::size_t common_length() const;
	std::optional<std::size_t> index_of(const std::string &id) const;
};

/**
 * @brief K external channels per series, time-aligned with the target panel.
 *
 * `values[n][k]` is channel k of the n-th series in `ids`. The order of
 * `ids` follows the target panel the weak signals were loaded with.
 */
struct WeakSignalPanel {
	std::size_t num_channels = 0;
	std::vector<std::string> ids;
	std::vector<std::vector<std::vector<double>>> values;

	const std::vector<std::vector<double>> *find(const std::string &id) const;
};

/**
 * Cut indices of the three-block split. Indices are 0-based exclusive ends:
 * train is [0, train_end), eval is [train_end, eval_end), test is
 * [eval_end, test_end).
 */
struct SplitSpec {
	std::size_t train_end = 0;
	std::size_t eval_end = 0;
	std::size_t test_end = 0;
	std::size_t horizon = 0;
	std::size_t window = 0;
};

struct RollingCuts {
	std::vector<std::size_t> cuts;
	std::size_t dropped = 0;
};

struct FashionData {
	TimePanel panel;
	WeakSignalPanel weak;
};

// Loaders

/// Default sibling path of the weak-signal file: `<stem>.weak.csv`.
std::filesystem::path weak_signal_path(const std::filesystem::path &panel_path);

/**
 * Loads a fashion-format panel. The weak-signal file is looked up at
 * weak_signal_path(path); when absent the returned weak panel has K = 0.
 * When `expected_length` is set every row must carry exactly that many values.
 */
FashionData load_fashion_panel(const std::filesystem::path &path,
                               std::optional<std::size_t> expected_length = std::nullopt);

/// Loads with an explicit list of weak-signal files, one channel per file.
FashionData load_fashion_panel(const std::filesystem::path &path,
                               const std::vector<std::filesystem::path> &weak_paths,
                               std::optional<std::size_t> expected_length = std::nullopt);

TimePanel load_fashion_values(const std::filesystem::path &path,
                              std::optional<std::size_t> expected_length = std::nullopt);

/// M4-style CSV: quoted header, id column, variable-length rows with blank tails.
TimePanel load_m4_weekly(const std::filesystem::path &path);

void write_fashion_panel(const std::filesystem::path &path, const TimePanel &panel);
void write_weak_channel(const std::filesystem::path &path, const TimePanel &panel,
                        const WeakSignalPanel &weak, std::size_t channel);
void write_m4_panel(const std::filesystem::path &path, const TimePanel &panel);
void write_split_manifest(const std::filesystem::path &path, const SplitSpec &split,
                          std::size_t seasonal_period);

/// ISO dates of `count` consecutive weeks starting at `first` (YYYY-MM-DD).
std::vector<std::string> weekly_dates(const std::string &first, std::size_t count);

// Transforms

/**
 * Classical additive decomposition: the trend is a centered moving average
 * of width m (2xm for even m), seasonal indices are phase means of the
 * detrended interior steps, centered to zero mean. Returns the input minus
 * the seasonal index of each step's phase.
 */
std::vector<double> deseasonalize(std::span<const double> series, std::size_t m);

/// Seasonal indices used by deseasonalize(); index p applies to steps t with t % m == p.
std::vector<double> additive_seasonal_indices(std::span<const double> series, std::size_t m);

/// child / deseasonalize(parent, m), "share of category" units.
std::vector<double> normalize_by_parent(std::span<const double> child,
                                        std::span<const double> parent, std::size_t m);

/// Per-step forward / (forward + main); 0.5 where both are zero.
std::vector<double> fashion_forward_ratio(std::span<const double> main,
                                          std::span<const double> forward);

/**
 * Crops long series to their last L values; pads short ones by prepending
 * copies of their last m observations, then keeps the last L.
 */
std::vector<double> resize_to_length(std::span<const double> series, std::size_t length = 300,
                                     std::size_t m = 52);

/**
 * Cuts T_i = first_cut - (i-1)*h for i = 1..n_windows. Cuts leaving fewer
 * than `min_history` observations before them are dropped and counted.
 */
RollingCuts rolling_windows(std::size_t first_cut, std::size_t n_windows, std::size_t h,
                            std::size_t min_history);

/// test = last h steps, eval = the h before, train = the rest. Requires T >= 2h + w.
SplitSpec temporal_split(std::size_t length, std::size_t h, std::size_t w);

} // namespace hermes::store
