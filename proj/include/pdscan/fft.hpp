#pragma once

#include <complex>
#include <cstddef>
#include <span>
#include <vector>

namespace pdscan::dsp {

using cf64 = std::complex<double>;

bool is_power_of_two(std::size_t n) noexcept;
std::size_t next_power_of_two(std::size_t n) noexcept;

// Power-of-two transform backed by FFTW. Forward uses the e^(-j2πkn/N)
// kernel, inverse is unscaled (callers divide by N). Execution is
// thread-safe; construction serializes on the FFTW planner.
class FftPlan {
public:
    explicit FftPlan(std::size_t n);
    ~FftPlan();
    FftPlan(const FftPlan&) = delete;
    FftPlan& operator=(const FftPlan&) = delete;

    std::size_t size() const noexcept { return n_; }
    void forward(std::span<cf64> data) const;
    void inverse(std::span<cf64> data) const;

private:
    std::size_t n_;
    void* forward_ = nullptr;
    void* inverse_ = nullptr;
};

// Direct O(N^2) evaluation of X[k] = sum x(n) e^(-j2πkn/N). Oracle only.
std::vector<cf64> dft_naive(std::span<const cf64> x);

// x is truncated or zero-padded to n_fft, which must be a power of two.
std::vector<cf64> fft(std::span<const cf64> x, std::size_t n_fft);

// Per-thread cached plan for size n.
const FftPlan& cached_plan(std::size_t n);

}  // namespace pdscan::dsp
