#pragma once

namespace madspace {

/// Keeps freed heap memory in the process instead of returning it to the OS.
/// No-op outside glibc.
void retain_heap_memory();

}  // namespace madspace
