#pragma once

#include <functional>

namespace benk {

/// Runs fn(chunk_index) for every chunk_index in [0, n_chunks) on up to
/// `threads` workers. Chunks are claimed atomically, so callers must merge
/// results by chunk index to stay deterministic across thread counts.
/// The first exception thrown by any chunk is rethrown after all workers join.
void run_chunked(int n_chunks, int threads, const std::function<void(int)>& fn);

}  // namespace benk
