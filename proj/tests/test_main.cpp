#define DOCTEST_CONFIG_IMPLEMENT
#include <doctest.h>

#include "nambert/log.hpp"

int main(int argc, char** argv) {
  nambert::log::set_level(nambert::log::Level::error);
  doctest::Context ctx(argc, argv);
  return ctx.run();
}
