#pragma once

#include <complex>
#include <cstddef>
#include <span>

namespace qgan::fft {

using Complex = std::complex<double>;

/// In-place 2-D DFT of a row-major rows x cols array. The inverse transform
/// carries the 1/(rows*cols) factor so that inverse(forward(x)) == x.
/// Plans are cached per size; safe to call from several threads.
void transform2d(std::span<Complex> data, std::size_t rows, std::size_t cols, bool inverse);

}  // namespace qgan::fft
