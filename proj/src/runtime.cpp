#include "scribeid/runtime.hpp"

#include <malloc.h>

#include <climits>

namespace scribeid {

void tune_allocator() {
  mallopt(M_MMAP_THRESHOLD, INT_MAX);
  mallopt(M_TRIM_THRESHOLD, INT_MAX);
}

}  // namespace scribeid
