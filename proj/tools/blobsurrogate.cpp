#include "blobsurrogate/cli.hpp"

int main(int argc, char** argv) { return blobsurrogate::cli_dispatch(argc, argv); }
