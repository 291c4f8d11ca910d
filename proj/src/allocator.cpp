#include "madspace/allocator.hpp"

#include <cstdlib>

#if defined(__GLIBC__)
#include <malloc.h>
#endif

namespace madspace {

void retain_heap_memory() {
#if defined(__GLIBC__)
  mallopt(M_TOP_PAD, 1 << 28);
  mallopt(M_TRIM_THRESHOLD, 1 << 30);
  mallopt(M_MMAP_THRESHOLD, 1 << 25);
#endif
}

}  // namespace madspace
