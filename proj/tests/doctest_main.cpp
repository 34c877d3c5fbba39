#define DOCTEST_CONFIG_IMPLEMENT
#include <cstdlib>

#include "afd/error.hpp"
#include "doctest.h"

int main(int argc, char** argv) {
  // Library warnings are counted either way; print them only on request.
  if (std::getenv("AFD_TEST_VERBOSE") == nullptr) afd::set_warning_sink([](std::string_view) {});
  doctest::Context ctx(argc, argv);
  return ctx.run();
}
