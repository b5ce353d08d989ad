#pragma once

#include <cstddef>

namespace hermes::parallel {

/// Name of the environment variable bounding the worker pool.
inline constexpr const char *kWorkersEnv = "HERMES_WORKERS";

/// Applies HERMES_WORKERS (when set and positive) to the OpenMP pool; returns the pool size.
std::size_t configure_from_env();

void set_workers(std::size_t n);
std::size_t workers();

} // namespace hermes::parallel
