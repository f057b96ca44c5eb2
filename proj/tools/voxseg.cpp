#include <cstdio>

int main(int argc, char** argv) {
  (void)argc;
  (void)argv;
  std::puts("voxseg: subcommands land here as modules come online");
  return 0;
}
