#include "colnode/cli.hpp"

int main(int argc, char ** argv)
{
  return colnode::cli::run(argc, argv);
}
