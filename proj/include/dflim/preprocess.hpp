#pragma once

// Frame preprocessing: consecutive differences and the patch rearrangement.

#include <span>
#include <string>
#include <vector>

#include "dflim/linalg.hpp"

namespace dflim {

/// D_t = X_{t+1} − X_t, one fewer frame than the input.
inline std::vector<Matrix> diff_frames(std::span<const Matrix> frames) {
  if (frames.size() < 2) throw Error(ErrorKind::InvalidInput, "differencing needs at least 2 frames");
  std::vector<Matrix> out;
  out.reserve(frames.size() - 1);
  for (std::size_t t = 0; t + 1 < frames.size(); ++t) {
    require_same_shape(frames[t + 1], frames[t], "frame " + std::to_string(t + 2));
    out.push_back(frames[t + 1] - frames[t]);
  }
  return out;
}

/**
 * Cuts the frame into non-overlapping b×b tiles, scanned row-major over the
 * tile grid; tile k becomes column k, vectorized column-major. Output shape
 * is b² × ((p1/b)·(p2/b)).
 */
inline Matrix patch_transform(const Matrix& frame, long b) {
  if (b < 1) throw Error(ErrorKind::InvalidInput, "patch side must be positive");
  if (frame.rows() % b != 0 || frame.cols() % b != 0) {
    throw Error(ErrorKind::InvalidInput, "patch side " + std::to_string(b) + " does not divide " +
                                             std::to_string(frame.rows()) + "x" + std::to_string(frame.cols()) +
                                             "; crop the frame to a multiple of the patch side");
  }
  const long tr = frame.rows() / b;
  const long tc = frame.cols() / b;
  Matrix out(b * b, tr * tc);
  for (long ti = 0; ti < tr; ++ti)
    for (long tj = 0; tj < tc; ++tj) {
      const long col = ti * tc + tj;
      for (long j = 0; j < b; ++j)
        for (long i = 0; i < b; ++i) out(j * b + i, col) = frame(ti * b + i, tj * b + j);
    }
  return out;
}

}  // namespace dflim
