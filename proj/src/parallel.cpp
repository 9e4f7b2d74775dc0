#include "blobsurrogate/parallel.hpp"

#include <cstdlib>
#include <string>

#include <omp.h>

namespace blobsurrogate {

void set_thread_count(int threads) {
    if (threads <= 0) {
        if (const char* env = std::getenv("BLOBSURROGATE_THREADS")) {
            try {
                threads = std::stoi(env);
            } catch (...) {
                threads = 0;
            }
        }
    }
    if (threads <= 0) {
        threads = omp_get_num_procs();
    }
    omp_set_num_threads(threads);
}

int thread_count() { return omp_get_max_threads(); }

}  // namespace blobsurrogate
