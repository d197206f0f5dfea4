#pragma once

// <torch/torch.h> drags in c10's glog-style logging macros, which clobber
// doctest's short assertion names (a c10 CHECK aborts instead of reporting).
// Torch-touching test files include project headers first and then this
// header, so the doctest macros are the ones in effect for the test bodies.
#ifdef CHECK
#undef CHECK
#undef CHECK_EQ
#undef CHECK_NE
#undef CHECK_LE
#undef CHECK_LT
#undef CHECK_GE
#undef CHECK_GT
#endif

#include <doctest.h>
