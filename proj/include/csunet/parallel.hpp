#pragma once

#include <cstdint>
#include <functional>

namespace csunet {

/// Worker count for parallel kernels. 0 and 1 both mean the deterministic
/// single-thread path. Initialised from CSUNET_THREADS (default 0).
int thread_count();
void set_thread_count(int n);

/// Run fn(i) for i in [0, n). Tasks are split into contiguous ranges, one per
/// worker; callers must make tasks write disjoint memory.
void parallel_for(std::int64_t n, const std::function<void(std::int64_t)>& fn);

namespace debug {
/// Test fixture: negate the gradients produced by conv3d backward.
void set_conv_backward_sign_flip(bool on);
bool conv_backward_sign_flip();
}  // namespace debug

}  // namespace csunet
