#include "metoken/cli.hpp"

int main(int argc, char** argv) { return metoken::cli::run(argc, argv); }
