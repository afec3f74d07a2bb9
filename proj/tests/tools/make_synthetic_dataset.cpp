// Writes a small synthetic PNG dataset: make_synthetic_dataset <root> <per_class> [seed].
#include "ecvd/data/source.hpp"

#include <iostream>
#include <string>

int main(int argc, char** argv) {
  if (argc < 3) {
    std::cerr << "usage: make_synthetic_dataset <root> <per_class> [seed]\n";
    return 1;
  }
  try {
    const std::uint64_t seed = argc > 3 ? std::stoull(argv[3]) : 1;
    ecvd::data::write_synthetic_dataset(argv[1], std::stol(argv[2]), seed);
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << '\n';
    return 1;
  }
  return 0;
}
