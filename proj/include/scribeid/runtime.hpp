#pragma once

namespace scribeid {

// Keeps large tensor buffers on the heap between steps instead of returning
// them to the kernel after every free. Call once at program start.
void tune_allocator();

}  // namespace scribeid
