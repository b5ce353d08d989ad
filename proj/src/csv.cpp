#include "hermes/csv.hpp"

#include <charconv>
#include <cmath>
#include <stdexcept>

namespace hermes::csv {

std::vector<std::string> split_line(std::string_view line) {
	if (!line.empty() && line.back() == '\r') {
		line.remove_suffix(1);
	}
	std::vector<std::string> fields;
	std::string current;
	bool in_quotes = false;
	for (std::size_t i = 0; i < line.size(); ++i) {
		const char c = line[i];
		if (in_quotes) {
			if (c == '"') {
				if (i + 1 < line.size() && line[i + 1] == '"') {
					current.push_back('"');
					++i;
				} else {
					in_quotes = false;
				}
			} else {
				current.push_back(c);
			}
		} else if (c == '"') {
			in_quotes = true;
		} else if (c == ',') {
			fields.push_back(std::move(current));
			current.clear();
		} else {
			current.push_back(c);
		}
	}
	fields.push_back(std::move(current));
	return fields;
}

std::optional<double> parse_double(std::string_view cell) {
	while (!cell.empty() && (cell.front() == ' ' || cell.front() == '\t')) {
		cell.remove_prefix(1);
	}
	while (!cell.empty() && (cell.back() == ' ' || cell.back() == '\t')) {
		cell.remove_suffix(1);
	}
	if (!cell.empty() && cell.front() == '+') {
		cell.remove_prefix(1);
	}
	if (cell.empty()) {
		return std::nullopt;
	}
	double value = 0.0;
	const auto [ptr, ec] = std::from_chars(cell.data(), cell.data() + cell.size(), value);
	if (ec != std::errc{} || ptr != cell.data() + cell.size() || !std::isfinite(value)) {
		return std::nullopt;
	}
	return value;
}

std::string format_double(double value) {
	char buffer[64];
	const auto [ptr, ec] = std::to_chars(buffer, buffer + sizeof(buffer), value);
	if (ec != std::errc{}) {
		throw std::runtime_error("format_double: conversion failed");
	}
	return std::string(buffer, ptr);
}

std::string quote(std::string_view field) {
	if (field.find_first_of(",\"\n") == std::string_view::npos) {
		return std::string(field);
	}
	std::string out = "\"";
	for (const char c : field) {
		if (c == '"') {
			out.push_back('"');
		}
		out.push_back(c);
	}
	out.push_back('"');
	return out;
}

} // namespace hermes::csv
