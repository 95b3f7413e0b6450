#include <stressmeter/app.hpp>

int main(int argc, char** argv) {
  std::vector<std::string> args(argv + 1, argv + argc);
  return stressmeter::app::run(args);
}
