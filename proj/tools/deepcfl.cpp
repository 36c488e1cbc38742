#include "deepcfl/harness.hpp"

int main(int argc, char** argv) { return deepcfl::run_task(argc, argv); }
