#pragma once

#include "pdscan/dsp.hpp"

#include <random>

namespace pdscan::testing {

inline dsp::IqFrame random_frame(std::mt19937_64& rng, std::size_t n) {
    std::uniform_int_distribution<int> adc(-32768, 32767);
    std::uniform_int_distribution<std::uint64_t> hz(1, 3'000'000'000ULL);
    dsp::IqFrame f;
    f.window_index = static_cast<std::uint32_t>(rng() % 100);
    f.center_freq_hz = static_cast<double>(hz(rng));
    f.iq_rate_hz = static_cast<double>(hz(rng) % 100'000'000 + 1);
    f.span_hz = f.iq_rate_hz;
    f.t0_unix_ms = static_cast<std::int64_t>(rng() % 4'000'000'000'000ULL);
    f.adc_bits = static_cast<std::uint8_t>(8 + rng() % 9);
    f.full_scale_uv = rng() % 10'000'000 + 1;
    f.cal_constant_micro = rng() % 2'000'000 + 1;
    f.samples.resize(n);
    for (auto& s : f.samples) s = {static_cast<std::int16_t>(adc(rng)), static_cast<std::int16_t>(adc(rng))};
    return f;
}

// The frame documented in tests/data/make_golden.py.
inline dsp::IqFrame golden_frame() {
    dsp::IqFrame f;
    f.window_index = 3;
    f.center_freq_hz = 315e6;
    f.span_hz = 4e6;
    f.iq_rate_hz = 4e6;
    f.t0_unix_ms = 1'714'564'800'123;
    f.adc_bits = 16;
    f.full_scale_uv = 1'000'000;
    f.cal_constant_micro = 10'000;
    f.samples = {{-32768, 32767}, {0, 0}, {1, -1}, {1000, -1000}, {12345, -12345}, {-2, 3}, {32767, -32768}, {-1, -1}};
    return f;
}

}  // namespace pdscan::testing
