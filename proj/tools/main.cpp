#include <cstdio>

int main() {
  std::puts("mpiv: CLI under construction");
  return 1;
}
