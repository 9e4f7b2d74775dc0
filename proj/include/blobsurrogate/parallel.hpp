#pragma once

#include <cstddef>

namespace blobsurrogate {

/// Sets the worker count used by module-internal parallel loops. Zero picks
/// BLOBSURROGATE_THREADS from the environment, falling back to the OpenMP
/// default.
void set_thread_count(int threads);
int thread_count();

}  // namespace blobsurrogate
