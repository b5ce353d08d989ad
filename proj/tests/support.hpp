#pragma once

#include <filesystem>
#include <fstream>
#include <iterator>
#include <random>
#include <string>

namespace support {

/// Fresh directory under the system temp dir, removed on destruction.
class TempDir {
public:
	explicit TempDir(const std::string &tag) {
		std::random_device rd;
		path_ = std::filesystem::temp_directory_path() / ("hermes_" + tag + "_" + std::to_string(rd()));
		std::filesystem::remove_all(path_);
		std::filesystem::create_directories(path_);
	}
	~TempDir() {
		std::error_code ec;
		std::filesystem::remove_all(path_, ec);
	}
	TempDir(const TempDir &) = delete;
	TempDir &operator=(const TempDir &) = delete;

	const std::filesystem::path &path() const { return path_; }
	std::filesystem::path operator/(const std::string &name) const { return path_ / name; }

private:
	std::filesystem::path path_;
};

inline void write_text(const std::filesystem::path &path, const std::string &text) {
	std::ofstream out(path, std::ios::binary);
	out << text;
}

inline std::string read_text(const std::filesystem::path &path) {
	std::ifstream in(path, std::ios::binary);
	return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

} // namespace support
