// cue: concept-based uncertainty explanations from the command line.

#include <csignal>
#include <iostream>

#include <CLI11.hpp>

#include "cue/cli.hpp"

int main(int argc, char** argv) {
  std::signal(SIGPIPE, SIG_IGN);
  return cue::cli_main(argc, argv, std::cout, std::cerr);
}
