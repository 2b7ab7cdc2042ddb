#include "judgelab/cli.hpp"

int main(int argc, char** argv) {
  return judgelab::dispatch(argc, argv, std::cout, std::cerr, JUDGELAB_DATA_DIR);
}
