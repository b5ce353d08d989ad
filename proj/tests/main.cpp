#define DOCTEST_CONFIG_IMPLEMENT
#include "doctest.h"

#include "hermes/parallel.hpp"

int main(int argc, char **argv) {
	hermes::parallel::configure_from_env();
	doctest::Context context;
	context.applyCommandLine(argc, argv);
	return context.run();
}
