#include "qgan/fft.hpp"

#include <fftw3.h>

#include <cstring>
#include <map>
#include <mutex>
#include <stdexcept>
#include <tuple>

namespace qgan::fft {
namespace {

struct Buffer {
  explicit Buffer(std::size_t n) : ptr(static_cast<fftw_complex*>(fftw_malloc(sizeof(fftw_complex) * n))) {
    if (!ptr) throw std::bad_alloc();
  }
  ~Buffer() { fftw_free(ptr); }
  Buffer(const Buffer&) = delete;
  Buffer& operator=(const Buffer&) = delete;
  fftw_complex* ptr;
};

class PlanCache {
 public:
  ~PlanCache() {
    for (auto& [key, plan] : plans_) fftw_destroy_plan(plan);
  }

  // The planner is not thread-safe; execution of an existing plan on new
  // arrays (fftw_execute_dft) is.
  fftw_plan get(std::size_t rows, std::size_t cols, bool inverse) {
    std::lock_guard lock(mutex_);
    const auto key = std::make_tuple(rows, cols, inverse);
    if (auto it = plans_.find(key); it != plans_.end()) return it->second;
    Buffer a(rows * cols), b(rows * cols);
    fftw_plan plan = fftw_plan_dft_2d(static_cast<int>(rows), static_cast<int>(cols), a.ptr, b.ptr,
                                      inverse ? FFTW_BACKWARD : FFTW_FORWARD, FFTW_ESTIMATE);
    if (!plan) throw std::runtime_error("fft: planner failed");
    plans_.emplace(key, plan);
    return plan;
  }

 private:
  std::mutex mutex_;
  std::map<std::tuple<std::size_t, std::size_t, bool>, fftw_plan> plans_;
};

PlanCache& cache() {
  static PlanCache instance;
  return instance;
}

}  // namespace

void transform2d(std::span<Complex> data, std::size_t rows, std::size_t cols, bool inverse) {
  const std::size_t n = rows * cols;
  if (data.size() != n) throw std::invalid_argument("fft: buffer size does not match rows*cols");
  fftw_plan plan = cache().get(rows, cols, inverse);
  Buffer in(n), out(n);
  std::memcpy(in.ptr, data.data(), sizeof(fftw_complex) * n);
  fftw_execute_dft(plan, in.ptr, out.ptr);
  std::memcpy(data.data(), out.ptr, sizeof(fftw_complex) * n);
  if (inverse) {
    const double s = 1.0 / static_cast<double>(n);
    for (auto& v : data) v *= s;
  }
}

}  // namespace qgan::fft
