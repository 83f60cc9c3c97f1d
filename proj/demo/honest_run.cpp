// Runs the full protocol against a Werner-state device and prints the report and seed accounting.
#include <iostream>
#include <sstream>

#include "direx/protocol.hpp"

int main(int argc, char** argv) {
  const std::size_t rounds = argc > 1 ? std::stoul(argv[1]) : 100000;
  const std::string visibility = argc > 2 ? argv[2] : "0.95";
  std::istringstream text("format=1\nrounds=" + std::to_string(rounds) + "\ndevice=werner:" + visibility + "\nseed=1\n");
  const auto config = direx::parse_config(direx::KeyValueFile::parse(text));
  const auto run = direx::run_protocol(config);
  direx::write_report(std::cout, config, run);
  std::cout << "\ninput seed " << run.cost.input_seed_bits << " bits, extractor seed " << run.cost.extractor_seed_bits
            << " bits, output " << run.cost.output_bits << " bits\n";
  return run.exit_code();
}
