#include "hermes/cli.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <numbers>
#include <random>

namespace hermes::cli {

namespace {

constexpr std::size_t kYear = 52;

class Stream {
public:
	explicit Stream(std::uint64_t seed) : engine_(seed) {}

	double uniform() { return static_cast<double>(engine_() >> 11) * 0x1.0p-53; }
	double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }
	std::size_t index(std::size_t lo, std::size_t hi) { // inclusive
		return lo + static_cast<std::size_t>(engine_() % (hi - lo + 1));
	}
	double sign() { return (engine_() >> 63) != 0 ? 1.0 : -1.0; }

	// Box-Muller, first variate only.
	double normal() {
		double u1 = uniform();
		while (u1 <= 0.0) {
			u1 = uniform();
		}
		const double u2 = uniform();
		return std::sqrt(-2.0 * std::log(u1)) * std::cos(2.0 * std::numbers::pi * u2);
	}

	std::vector<std::size_t> choose(std::size_t n, std::size_t k) {
		std::vector<std::size_t> order(n);
		for (std::size_t i = 0; i < n; ++i) {
			order[i] = i;
		}
		for (std::size_t i = n; i > 1; --i) {
			std::swap(order[i - 1], order[static_cast<std::size_t>(engine_() % i)]);
		}
		order.resize(k);
		std::sort(order.begin(), order.end());
		return order;
	}

private:
	std::mt19937_64 engine_;
};

std::size_t exact_count(double fraction, std::size_t n) {
	return static_cast<std::size_t>(std::llround(fraction * static_cast<double>(n)));
}

std::string series_id(std::size_t i, std::size_t n) {
	const std::size_t digits = std::max<std::size_t>(4, std::to_string(n).size());
	auto s = std::to_string(i + 1);
	return "S" + std::string(digits - s.size(), '0') + s;
}

std::vector<double> multiplier_path(const std::vector<SynthShift> &shifts, std::size_t length) {
	std::vector<double> path(length, 1.0);
	for (const auto &shift : shifts) {
		for (std::size_t t = shift.week; t < length; ++t) {
			path[t] *= 1.0 + shift.delta;
		}
	}
	return path;
}

} // namespace

void SynthConfig::validate() const {
	if (n_series == 0) {
		throw std::invalid_argument("synth: n_series must be at least 1");
	}
	if (length < 3 * kYear) {
		throw std::invalid_argument("synth: length must be at least 156 weeks");
	}
	if (shift_fraction < 0.0 || shift_fraction > 1.0 || background_fraction < 0.0 || background_fraction > 1.0) {
		throw std::invalid_argument("synth: fractions must lie in [0, 1]");
	}
	if (lead_min == 0 || lead_min > lead_max || lead_max >= kYear) {
		throw std::invalid_argument("synth: leads must satisfy 1 <= lead_min <= lead_max < 52");
	}
	if (length < kYear * (background_years + 1) + lead_max) {
		throw std::invalid_argument("synth: too many background years for the series length");
	}
	if (!(shift_min >= 0.0 && shift_min <= shift_max && shift_max < 1.0)) {
		throw std::invalid_argument("synth: shift sizes must satisfy 0 <= min <= max < 1");
	}
	if (!(amplitude_min >= 0.0 && amplitude_min <= amplitude_max && amplitude_max < 1.0)) {
		throw std::invalid_argument("synth: amplitudes must satisfy 0 <= min <= max < 1");
	}
	if (!(level_min > 0.0 && level_min <= level_max)) {
		throw std::invalid_argument("synth: levels must be positive");
	}
	if (trend_max < 0.0 || noise < 0.0 || weak_noise < 0.0 || attenuation < 0.0) {
		throw std::invalid_argument("synth: trend, noise and attenuation must be non-negative");
	}
}

SynthPanel generate_synthetic(const SynthConfig &config) {
	config.validate();
	const std::size_t n = config.n_series;
	const std::size_t T = config.length;
	Stream stream(config.seed);

	SynthPanel out;
	out.info.resize(n);
	for (std::size_t i = 0; i < n; ++i) {
		auto &info = out.info[i];
		info.id = series_id(i, n);
		info.level = stream.uniform(config.level_min, config.level_max);
		info.amplitude = stream.uniform(config.amplitude_min, config.amplitude_max);
		info.phase = stream.uniform(0.0, 2.0 * std::numbers::pi);
		info.trend = info.level * stream.uniform(-config.trend_max, config.trend_max) / static_cast<double>(kYear);
	}

	// Year b = 0 is the final year; b >= 1 are the background years before it.
	for (std::size_t b = 0; b <= config.background_years; ++b) {
		const double fraction = b == 0 ? config.shift_fraction : config.background_fraction;
		const std::size_t year_start = T - kYear * (b + 1);
		for (const auto i : stream.choose(n, exact_count(fraction, n))) {
			SynthShift shift;
			shift.lead = stream.index(config.lead_min, config.lead_max);
			shift.week = year_start + stream.index(0, shift.lead - 1);
			shift.delta = stream.sign() * stream.uniform(config.shift_min, config.shift_max);
			shift.final_year = b == 0;
			out.info[i].shifts.push_back(shift);
		}
	}

	out.weak.num_channels = 1;
	out.panel.dates = store::weekly_dates("2015-01-05", T);
	for (std::size_t i = 0; i < n; ++i) {
		auto &info = out.info[i];
		std::sort(info.shifts.begin(), info.shifts.end(),
		          [](const SynthShift &a, const SynthShift &b) { return a.week < b.week; });
		const auto path = multiplier_path(info.shifts, T);
		// Same shifts, each moved forward by its own lead.
		std::vector<SynthShift> early = info.shifts;
		for (auto &shift : early) {
			shift.week -= shift.lead;
		}
		const auto forward_path = multiplier_path(early, T);

		std::vector<double> y(T);
		std::vector<double> main_clean(T);
		std::vector<double> forward_clean(T);
		for (std::size_t t = 0; t < T; ++t) {
			const double season =
			    1.0 + info.amplitude * std::sin(2.0 * std::numbers::pi * static_cast<double>(t) / kYear + info.phase);
			const double base = info.level * season;
			main_clean[t] = base * path[t];
			forward_clean[t] = base * forward_path[t];
			const double value = main_clean[t] + info.trend * static_cast<double>(t) +
			                     config.noise * info.level * stream.normal();
			y[t] = std::max(value, 0.0);
		}
		auto ratio = store::fashion_forward_ratio(main_clean, forward_clean);
		for (auto &r : ratio) {
			r = 0.5 + config.attenuation * (r - 0.5) + config.weak_noise * stream.normal();
		}
		out.panel.series.push_back(store::Series{info.id, std::move(y), std::nullopt, std::nullopt});
		out.weak.ids.push_back(info.id);
		out.weak.values.push_back({std::move(ratio)});
	}
	return out;
}

nlohmann::json to_json(const SynthConfig &c) {
	return {{"n_series", c.n_series},
	        {"length", c.length},
	        {"seed", c.seed},
	        {"shift_fraction", c.shift_fraction},
	        {"background_fraction", c.background_fraction},
	        {"background_years", c.background_years},
	        {"lead_min", c.lead_min},
	        {"lead_max", c.lead_max},
	        {"shift_min", c.shift_min},
	        {"shift_max", c.shift_max},
	        {"amplitude_min", c.amplitude_min},
	        {"amplitude_max", c.amplitude_max},
	        {"level_min", c.level_min},
	        {"level_max", c.level_max},
	        {"trend_max", c.trend_max},
	        {"noise", c.noise},
	        {"attenuation", c.attenuation},
	        {"weak_noise", c.weak_noise}};
}

SynthConfig synth_config_from_json(const nlohmann::json &j) {
	if (!j.is_object()) {
		throw ConfigError("synth config must be an object");
	}
	SynthConfig c;
	const auto defaults = to_json(c);
	for (const auto &[key, value] : j.items()) {
		if (!defaults.contains(key)) {
			throw ConfigError("synth config: unknown key '" + key + "'");
		}
	}
	try {
		c.n_series = j.value("n_series", c.n_series);
		c.length = j.value("length", c.length);
		c.seed = j.value("seed", c.seed);
		c.shift_fraction = j.value("shift_fraction", c.shift_fraction);
		c.background_fraction = j.value("background_fraction", c.background_fraction);
		c.background_years = j.value("background_years", c.background_years);
		c.lead_min = j.value("lead_min", c.lead_min);
		c.lead_max = j.value("lead_max", c.lead_max);
		c.shift_min = j.value("shift_min", c.shift_min);
		c.shift_max = j.value("shift_max", c.shift_max);
		c.amplitude_min = j.value("amplitude_min", c.amplitude_min);
		c.amplitude_max = j.value("amplitude_max", c.amplitude_max);
		c.level_min = j.value("level_min", c.level_min);
		c.level_max = j.value("level_max", c.level_max);
		c.trend_max = j.value("trend_max", c.trend_max);
		c.noise = j.value("noise", c.noise);
		c.attenuation = j.value("attenuation", c.attenuation);
		c.weak_noise = j.value("weak_noise", c.weak_noise);
	} catch (const nlohmann::json::exception &e) {
		throw ConfigError(std::string("synth config: ") + e.what());
	}
	return c;
}

void write_synthetic(const std::filesystem::path &path, const SynthPanel &synth) {
	store::write_fashion_panel(path, synth.panel);
	store::write_weak_channel(store::weak_signal_path(path), synth.panel, synth.weak, 0);

	nlohmann::json series = nlohmann::json::array();
	for (const auto &info : synth.info) {
		nlohmann::json shifts = nlohmann::json::array();
		for (const auto &s : info.shifts) {
			shifts.push_back({{"week", s.week}, {"lead", s.lead}, {"delta", s.delta}, {"final_year", s.final_year}});
		}
		series.push_back({{"id", info.id},
		                  {"level", info.level},
		                  {"amplitude", info.amplitude},
		                  {"phase", info.phase},
		                  {"trend", info.trend},
		                  {"shifts", std::move(shifts)}});
	}
	auto meta_path = path;
	meta_path.replace_extension(".meta.json");
	std::ofstream out(meta_path, std::ios::binary);
	if (!out) {
		throw std::runtime_error("cannot write " + meta_path.string());
	}
	out << nlohmann::json{{"series", std::move(series)}}.dump(1) << '\n';
}

SynthPanel cmd_synth(const SynthConfig &config, const std::filesystem::path &output) {
	auto synth = generate_synthetic(config);
	write_synthetic(output, synth);
	return synth;
}

} // namespace hermes::cli
