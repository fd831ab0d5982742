#pragma once

namespace condisr::fft {

// In-place 2-D complex DFT on interleaved (re,im) data, row-major h x w.
// Forward uses negative exponent; inverse is unnormalized (caller divides
// by h*w). Plans are cached; planning is serialized internally.
void dft2d(double* data, long h, long w, bool inverse);
void dft2d(float* data, long h, long w, bool inverse);

}  // namespace condisr::fft
