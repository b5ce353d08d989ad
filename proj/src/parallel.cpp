#include "hermes/parallel.hpp"

#include <omp.h>

#include <cstdlib>
#include <string>

namespace hermes::parallel {

std::size_t configure_from_env() {
	if (const char *value = std::getenv(kWorkersEnv)) {
		try {
			const long n = std::stol(value);
			if (n > 0) {
				set_workers(static_cast<std::size_t>(n));
			}
		} catch (const std::exception &) {
			// ignored: keep the OpenMP default
		}
	}
	return workers();
}

void set_workers(std::size_t n) {
	omp_set_num_threads(static_cast<int>(n == 0 ? 1 : n));
}

std::size_t workers() {
	return static_cast<std::size_t>(omp_get_max_threads());
}

} // namespace hermes::parallel
