#include "posenorm/cli.hpp"

#include <malloc.h>

#include <iostream>

int main(int argc, char** argv) {
  // Keep large im2col buffers on the heap instead of fresh mmaps every step.
  mallopt(M_MMAP_THRESHOLD, 32 << 20);
  mallopt(M_TRIM_THRESHOLD, 256 << 20);
  return posenorm::run_cli(argc, argv, std::cout, std::cerr);
}
