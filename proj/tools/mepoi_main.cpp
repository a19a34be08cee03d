#include <cstdio>

int main() {
  std::puts("mepoi: cli not wired up yet");
  return 0;
}
