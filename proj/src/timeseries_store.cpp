#include "hermes/timeseries_store.hpp"

#include "hermes/csv.hpp"

#include <json.hpp>

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <numeric>
#include <sstream>
#include <unordered_set>

namespace hermes::store {

namespace {

std::ifstream open_input(const std::filesystem::path &path) {
	std::ifstream in(path);
	if (!in) {
		throw LoadError("cannot open " + path.string());
	}
	return in;
}

std::ofstream open_output(const std::filesystem::path &path) {
	if (path.has_parent_path()) {
		std::filesystem::create_directories(path.parent_path());
	}
	std::ofstream out(path, std::ios::binary);
	if (!out) {
		throw std::runtime_error("cannot write " + path.string());
	}
	return out;
}

bool is_blank(const std::string &line) {
	return std::all_of(line.begin(), line.end(), [](char c) { return c == ' ' || c == '\r' || c == '\t'; });
}

std::string lower(std::string s) {
	std::transform(s.begin(), s.end(), s.begin(), [](unsigned char c) { return static_cast<char>(std::tolower(c)); });
	return s;
}

// Days since 1970-01-01 for a proleptic Gregorian date (H. Hinnant's algorithm).
long days_from_civil(long y, unsigned m, unsigned d) {
	y -= m <= 2;
	const long era = (y >= 0 ? y : y - 399) / 400;
	const auto yoe = static_cast<unsigned>(y - era * 400);
	const unsigned doy = (153 * (m > 2 ? m - 3 : m + 9) + 2) / 5 + d - 1;
	const unsigned doe = yoe * 365 + yoe / 4 - yoe / 100 + doy;
	return era * 146097 + static_cast<long>(doe) - 719468;
}

void civil_from_days(long z, long &y, unsigned &m, unsigned &d) {
	z += 719468;
	const long era = (z >= 0 ? z : z - 146096) / 146097;
	const auto doe = static_cast<unsigned>(z - era * 146097);
	const unsigned yoe = (doe - doe / 1460 + doe / 36524 - doe / 146096) / 365;
	y = static_cast<long>(yoe) + era * 400;
	const unsigned doy = doe - (365 * yoe + yoe / 4 - yoe / 100);
	const unsigned mp = (5 * doy + 2) / 153;
	d = doy - (153 * mp + 2) / 5 + 1;
	m = mp < 10 ? mp + 3 : mp - 9;
	y += m <= 2;
}

struct FashionLayout {
	std::size_t category_col = 0;
	std::size_t geozone_col = 0;
	std::size_t first_value_col = 1;
};

FashionLayout parse_fashion_header(const std::vector<std::string> &header) {
	FashionLayout layout;
	std::size_t col = 1;
	while (col < header.size()) {
		const std::string name = lower(header[col]);
		if (name == "category") {
			layout.category_col = col;
		} else if (name == "geozone") {
			layout.geozone_col = col;
		} else {
			break;
		}
		++col;
	}
	layout.first_value_col = col;
	return layout;
}

} // namespace

bool TimePanel::aligned() const {
	if (series.empty()) {
		return true;
	}
	const auto len = series.front().length();
	return std::all_of(series.begin(), series.end(), [len](const Series &s) { return s.length() == len; });
}

std::size_t TimePanel::common_length() const {
	if (series.empty() || !aligned()) {
		throw std::logic_error("TimePanel: panel is empty or ragged");
	}
	return series.front().length();
}

std::optional<std::size_t> TimePanel::index_of(const std::string &id) const {
	for (std::size_t i = 0; i < series.size(); ++i) {
		if (series[i].id == id) {
			return i;
		}
	}
	return std::nullopt;
}

const std::vector<std::vector<double>> *WeakSignalPanel::find(const std::string &id) const {
	for (std::size_t i = 0; i < ids.size(); ++i) {
		if (ids[i] == id) {
			return &values[i];
		}
	}
	return nullptr;
}

std::filesystem::path weak_signal_path(const std::filesystem::path &panel_path) {
	auto out = panel_path;
	out.replace_filename(panel_path.stem().string() + ".weak.csv");
	return out;
}

TimePanel load_fashion_values(const std::filesystem::path &path, std::optional<std::size_t> expected_length) {
	auto in = open_input(path);
	std::string line;
	if (!std::getline(in, line)) {
		throw LoadError(path.string() + ": empty file");
	}
	const auto header = csv::split_line(line);
	const auto layout = parse_fashion_header(header);
	if (header.size() <= layout.first_value_col) {
		throw LoadError(path.string() + ": header has no date columns");
	}
	const std::size_t n_values = header.size() - layout.first_value_col;
	if (expected_length && *expected_length != n_values) {
		throw LoadError(path.string() + ": header has " + std::to_string(n_values) + " dates, expected " +
		                std::to_string(*expected_length));
	}

	TimePanel panel;
	panel.dates.assign(header.begin() + static_cast<std::ptrdiff_t>(layout.first_value_col), header.end());
	std::unordered_set<std::string> seen;
	std::size_t row = 0;
	while (std::getline(in, line)) {
		if (is_blank(line)) {
			continue;
		}
		++row;
		auto cells = csv::split_line(line);
		if (cells.size() != header.size()) {
			throw LoadError(path.string() + ": length mismatch at row " + std::to_string(row) + " (" +
			                std::to_string(cells.size() > layout.first_value_col ? cells.size() - layout.first_value_col : 0) +
			                " values, expected " + std::to_string(n_values) + ")");
		}
		Series s;
		s.id = cells[0];
		if (s.id.empty()) {
			throw LoadError(path.string() + ": empty id at row " + std::to_string(row));
		}
		if (!seen.insert(s.id).second) {
			throw LoadError(path.string() + ": duplicate id '" + s.id + "' at row " + std::to_string(row));
		}
		if (layout.category_col != 0) {
			s.category = cells[layout.category_col];
		}
		if (layout.geozone_col != 0) {
			s.geozone = cells[layout.geozone_col];
		}
		s.values.reserve(n_values);
		for (std::size_t c = layout.first_value_col; c < cells.size(); ++c) {
			const auto v = csv::parse_double(cells[c]);
			if (!v) {
				throw LoadError(path.string() + ": non-numeric cell '" + cells[c] + "' at row " + std::to_string(row) +
				                ", column " + std::to_string(c + 1));
			}
			s.values.push_back(*v);
		}
		panel.series.push_back(std::move(s));
	}
	return panel;
}

FashionData load_fashion_panel(const std::filesystem::path &path, std::optional<std::size_t> expected_length) {
	std::vector<std::filesystem::path> weak_paths;
	const auto sibling = weak_signal_path(path);
	if (std::filesystem::exists(sibling)) {
		weak_paths.push_back(sibling);
	}
	return load_fashion_panel(path, weak_paths, expected_length);
}

FashionData load_fashion_panel(const std::filesystem::path &path,
                               const std::vector<std::filesystem::path> &weak_paths,
                               std::optional<std::size_t> expected_length) {
	FashionData data;
	data.panel = load_fashion_values(path, expected_length);
	data.weak.num_channels = weak_paths.size();
	for (const auto &s : data.panel.series) {
		data.weak.ids.push_back(s.id);
	}
	data.weak.values.assign(data.panel.size(), {});
	for (const auto &weak_path : weak_paths) {
		const auto channel = load_fashion_values(weak_path, expected_length);
		for (std::size_t n = 0; n < data.panel.size(); ++n) {
			const auto &target = data.panel.series[n];
			const auto idx = channel.index_of(target.id);
			if (!idx) {
				throw LoadError(weak_path.string() + ": no weak-signal row for id '" + target.id + "'");
			}
			const auto &values = channel.series[*idx].values;
			if (values.size() != target.values.size()) {
				throw LoadError(weak_path.string() + ": length mismatch at row " + std::to_string(*idx + 1));
			}
			data.weak.values[n].push_back(values);
		}
	}
	return data;
}

TimePanel load_m4_weekly(const std::filesystem::path &path) {
	auto in = open_input(path);
	TimePanel panel;
	std::unordered_set<std::string> seen;
	std::string line;
	std::size_t row = 0;
	bool first = true;
	while (std::getline(in, line)) {
		if (is_blank(line)) {
			continue;
		}
		auto cells = csv::split_line(line);
		if (first) {
			first = false;
			// Header: "V1","V2",... or any row whose second cell is not numeric.
			if (cells.size() < 2 || !csv::parse_double(cells[1])) {
				continue;
			}
		}
		++row;
		Series s;
		s.id = cells[0];
		if (!seen.insert(s.id).second) {
			throw LoadError(path.string() + ": duplicate id '" + s.id + "' at row " + std::to_string(row));
		}
		bool tail = false;
		for (std::size_t c = 1; c < cells.size(); ++c) {
			const bool blank = std::all_of(cells[c].begin(), cells[c].end(), [](char ch) { return ch == ' '; });
			if (blank) {
				tail = true;
				continue;
			}
			if (tail) {
				throw LoadError(path.string() + ": gap inside series at row " + std::to_string(row));
			}
			const auto v = csv::parse_double(cells[c]);
			if (!v) {
				throw LoadError(path.string() + ": non-numeric cell '" + cells[c] + "' at row " + std::to_string(row));
			}
			s.values.push_back(*v);
		}
		if (s.values.empty()) {
			throw LoadError(path.string() + ": empty series at row " + std::to_string(row));
		}
		panel.series.push_back(std::move(s));
	}
	return panel;
}

void write_fashion_panel(const std::filesystem::path &path, const TimePanel &panel) {
	const std::size_t len = panel.common_length();
	auto dates = panel.dates;
	if (dates.size() != len) {
		dates = weekly_dates("2015-01-05", len);
	}
	const bool has_category = std::any_of(panel.series.begin(), panel.series.end(), [](const Series &s) { return s.category.has_value(); });
	const bool has_geozone = std::any_of(panel.series.begin(), panel.series.end(), [](const Series &s) { return s.geozone.has_value(); });

	auto out = open_output(path);
	out << "id";
	if (has_category) {
		out << ",category";
	}
	if (has_geozone) {
		out << ",geozone";
	}
	for (const auto &d : dates) {
		out << ',' << csv::quote(d);
	}
	out << '\n';
	for (const auto &s : panel.series) {
		out << csv::quote(s.id);
		if (has_category) {
			out << ',' << csv::quote(s.category.value_or(""));
		}
		if (has_geozone) {
			out << ',' << csv::quote(s.geozone.value_or(""));
		}
		for (const double v : s.values) {
			out << ',' << csv::format_double(v);
		}
		out << '\n';
	}
}

void write_weak_channel(const std::filesystem::path &path, const TimePanel &panel, const WeakSignalPanel &weak,
                        std::size_t channel) {
	if (channel >= weak.num_channels) {
		throw std::out_of_range("write_weak_channel: channel index out of range");
	}
	TimePanel out;
	out.dates = panel.dates;
	for (const auto &s : panel.series) {
		const auto *channels = weak.find(s.id);
		if (channels == nullptr) {
			throw std::invalid_argument("write_weak_channel: no weak signal for id '" + s.id + "'");
		}
		out.series.push_back(Series{s.id, (*channels)[channel], std::nullopt, std::nullopt});
	}
	write_fashion_panel(path, out);
}

void write_m4_panel(const std::filesystem::path &path, const TimePanel &panel) {
	std::size_t width = 0;
	for (const auto &s : panel.series) {
		width = std::max(width, s.length());
	}
	auto out = open_output(path);
	out << "\"V1\"";
	for (std::size_t c = 0; c < width; ++c) {
		out << ",\"V" << c + 2 << '"';
	}
	out << '\n';
	for (const auto &s : panel.series) {
		out << '"' << s.id << '"';
		for (std::size_t c = 0; c < width; ++c) {
			out << ',';
			if (c < s.length()) {
				out << csv::format_double(s.values[c]);
			}
		}
		out << '\n';
	}
}

void write_split_manifest(const std::filesystem::path &path, const SplitSpec &split, std::size_t seasonal_period) {
	nlohmann::json j;
	j["train_end"] = split.train_end;
	j["eval_end"] = split.eval_end;
	j["test_end"] = split.test_end;
	j["h"] = split.horizon;
	j["w"] = split.window;
	j["m"] = seasonal_period;
	auto out = open_output(path);
	out << j.dump(2) << '\n';
}

std::vector<std::string> weekly_dates(const std::string &first, std::size_t count) {
	long y = 0;
	unsigned m = 0;
	unsigned d = 0;
	if (std::sscanf(first.c_str(), "%ld-%u-%u", &y, &m, &d) != 3) {
		throw std::invalid_argument("weekly_dates: expected YYYY-MM-DD, got '" + first + "'");
	}
	const long start = days_from_civil(y, m, d);
	std::vector<std::string> out;
	out.reserve(count);
	for (std::size_t i = 0; i < count; ++i) {
		civil_from_days(start + 7 * static_cast<long>(i), y, m, d);
		char buffer[32];
		std::snprintf(buffer, sizeof(buffer), "%04ld-%02u-%02u", y, m, d);
		out.emplace_back(buffer);
	}
	return out;
}

std::vector<double> additive_seasonal_indices(std::span<const double> series, std::size_t m) {
	if (m <= 1) {
		return std::vector<double>(std::max<std::size_t>(m, 1), 0.0);
	}
	const std::size_t n = series.size();
	if (n < 2 * m) {
		throw std::invalid_argument("deseasonalize: length " + std::to_string(n) + " < 2m = " + std::to_string(2 * m));
	}
	const std::size_t half = m / 2;
	const bool even = m % 2 == 0;
	std::vector<double> sums(m, 0.0);
	std::vector<std::size_t> counts(m, 0);
	for (std::size_t t = half; t + half < n; ++t) {
		double trend = 0.0;
		if (even) {
			trend = 0.5 * series[t - half] + 0.5 * series[t + half];
			for (std::size_t j = t - half + 1; j < t + half; ++j) {
				trend += series[j];
			}
		} else {
			for (std::size_t j = t - half; j <= t + half; ++j) {
				trend += series[j];
			}
		}
		trend /= static_cast<double>(m);
		sums[t % m] += series[t] - trend;
		++counts[t % m];
	}
	std::vector<double> indices(m);
	for (std::size_t p = 0; p < m; ++p) {
		indices[p] = sums[p] / static_cast<double>(counts[p]);
	}
	const double centre = std::accumulate(indices.begin(), indices.end(), 0.0) / static_cast<double>(m);
	for (auto &s : indices) {
		s -= centre;
	}
	return indices;
}

std::vector<double> deseasonalize(std::span<const double> series, std::size_t m) {
	const auto indices = additive_seasonal_indices(series, m);
	std::vector<double> out(series.begin(), series.end());
	if (m <= 1) {
		return out;
	}
	for (std::size_t t = 0; t < out.size(); ++t) {
		out[t] -= indices[t % m];
	}
	return out;
}

std::vector<double> normalize_by_parent(std::span<const double> child, std::span<const double> parent, std::size_t m) {
	if (child.size() != parent.size()) {
		throw std::invalid_argument("normalize_by_parent: child and parent lengths differ");
	}
	const auto base = deseasonalize(parent, m);
	std::vector<double> out(child.size());
	for (std::size_t t = 0; t < child.size(); ++t) {
		if (!(base[t] > 0.0)) {
			throw std::domain_error("normalize_by_parent: nonpositive deseasonalized parent at index " + std::to_string(t));
		}
		out[t] = child[t] / base[t];
	}
	return out;
}

std::vector<double> fashion_forward_ratio(std::span<const double> main, std::span<const double> forward) {
	if (main.size() != forward.size()) {
		throw std::invalid_argument("fashion_forward_ratio: lengths differ");
	}
	std::vector<double> out(main.size());
	for (std::size_t t = 0; t < main.size(); ++t) {
		if (main[t] < 0.0 || forward[t] < 0.0) {
			throw std::domain_error("fashion_forward_ratio: negative value at index " + std::to_string(t));
		}
		const double total = forward[t] + main[t];
		out[t] = total > 0.0 ? forward[t] / total : 0.5;
	}
	return out;
}

std::vector<double> resize_to_length(std::span<const double> series, std::size_t length, std::size_t m) {
	const std::size_t n = series.size();
	if (m == 0 || n < m) {
		throw std::invalid_argument("resize_to_length: length " + std::to_string(n) + " shorter than m = " + std::to_string(m));
	}
	if (n >= length) {
		return {series.end() - static_cast<std::ptrdiff_t>(length), series.end()};
	}
	const std::size_t copies = (length - n + m - 1) / m;
	const auto last_period = series.subspan(n - m);
	std::vector<double> padded;
	padded.reserve(copies * m + n);
	for (std::size_t c = 0; c < copies; ++c) {
		padded.insert(padded.end(), last_period.begin(), last_period.end());
	}
	padded.insert(padded.end(), series.begin(), series.end());
	return {padded.end() - static_cast<std::ptrdiff_t>(length), padded.end()};
}

RollingCuts rolling_windows(std::size_t first_cut, std::size_t n_windows, std::size_t h, std::size_t min_history) {
	RollingCuts out;
	for (std::size_t i = 0; i < n_windows; ++i) {
		const std::size_t back = i * h;
		if (back > first_cut || first_cut - back < min_history) {
			++out.dropped;
			continue;
		}
		out.cuts.push_back(first_cut - back);
	}
	return out;
}

SplitSpec temporal_split(std::size_t length, std::size_t h, std::size_t w) {
	if (h == 0) {
		throw std::invalid_argument("temporal_split: horizon must be positive");
	}
	if (length < 2 * h + w) {
		throw std::invalid_argument("temporal_split: length " + std::to_string(length) + " < 2h + w = " +
		                            std::to_string(2 * h + w));
	}
	SplitSpec split;
	split.test_end = length;
	split.eval_end = length - h;
	split.train_end = length - 2 * h;
	split.horizon = h;
	split.window = w;
	return split;
}

} // namespace hermes::store
