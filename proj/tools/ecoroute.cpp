#include "ecoroute/cli_app.hpp"

int main(int argc, char** argv) { return ecoroute::cli_main(argc, argv); }
