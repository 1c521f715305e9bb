#include "app.hpp"

int main(int argc, char** argv) { return samba::app::run_cli(argc, argv); }
