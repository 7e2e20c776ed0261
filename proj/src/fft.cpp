#include "pdscan/fft.hpp"

#include "pdscan/errors.hpp"

#include <fftw3.h>

#include <algorithm>
#include <bit>
#include <cmath>
#include <map>
#include <mutex>
#include <numbers>

namespace pdscan::dsp {

bool is_power_of_two(std::size_t n) noexcept { return std::has_single_bit(n); }

std::size_t next_power_of_two(std::size_t n) noexcept { return n <= 1 ? 1 : std::bit_ceil(n); }

namespace {

std::mutex& planner_mutex() {
    static std::mutex m;
    return m;
}

fftw_complex* as_fftw(cf64* p) { return reinterpret_cast<fftw_complex*>(p); }

void execute(void* plan, std::span<cf64> data, std::size_t n) {
    if (data.size() != n) {
        throw ArgumentError("fft buffer length does not match plan size");
    }
    fftw_execute_dft(static_cast<fftw_plan>(plan), as_fftw(data.data()), as_fftw(data.data()));
}

}  // namespace

FftPlan::FftPlan(std::size_t n) : n_(n) {
    if (!is_power_of_two(n)) {
        throw ArgumentError("fft size must be a power of two, got " + std::to_string(n));
    }
    std::vector<cf64> scratch(n);
    const int len = static_cast<int>(n);
    const unsigned flags = FFTW_ESTIMATE | FFTW_UNALIGNED;
    std::lock_guard lock(planner_mutex());
    forward_ = fftw_plan_dft_1d(len, as_fftw(scratch.data()), as_fftw(scratch.data()), FFTW_FORWARD, flags);
    inverse_ = fftw_plan_dft_1d(len, as_fftw(scratch.data()), as_fftw(scratch.data()), FFTW_BACKWARD, flags);
}

FftPlan::~FftPlan() {
    std::lock_guard lock(planner_mutex());
    fftw_destroy_plan(static_cast<fftw_plan>(forward_));
    fftw_destroy_plan(static_cast<fftw_plan>(inverse_));
}

void FftPlan::forward(std::span<cf64> data) const { execute(forward_, data, n_); }

void FftPlan::inverse(std::span<cf64> data) const { execute(inverse_, data, n_); }

std::vector<cf64> dft_naive(std::span<const cf64> x) {
    if (x.empty()) {
        throw ArgumentError("dft_naive: empty input");
    }
    const std::size_t n = x.size();
    std::vector<cf64> out(n);
    for (std::size_t k = 0; k < n; ++k) {
        cf64 acc{0.0, 0.0};
        for (std::size_t i = 0; i < n; ++i) {
            // Reduce k*i mod n first so the angle stays small and exact.
            const auto r = static_cast<double>((k * i) % n);
            const double angle = -2.0 * std::numbers::pi * r / static_cast<double>(n);
            acc += x[i] * cf64{std::cos(angle), std::sin(angle)};
        }
        out[k] = acc;
    }
    return out;
}

std::vector<cf64> fft(std::span<const cf64> x, std::size_t n_fft) {
    const FftPlan& plan = cached_plan(n_fft);
    std::vector<cf64> buf(n_fft, cf64{0.0, 0.0});
    std::copy_n(x.begin(), std::min(x.size(), n_fft), buf.begin());
    plan.forward(buf);
    return buf;
}

const FftPlan& cached_plan(std::size_t n) {
    thread_local std::map<std::size_t, FftPlan> plans;
    auto it = plans.find(n);
    if (it == plans.end()) {
        it = plans.try_emplace(n, n).first;
    }
    return it->second;
}

}  // namespace pdscan::dsp
