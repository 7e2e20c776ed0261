#include "pdscan/records.hpp"

namespace pdscan {

std::size_t StitchedSpectrum::bin_count() const noexcept {
    std::size_t n = 0;
    for (const auto& s : segments) n += s.size();
    return n;
}

std::vector<double> StitchedSpectrum::frequencies() const {
    std::vector<double> out;
    out.reserve(bin_count());
    for (const auto& s : segments) out.insert(out.end(), s.bin_freqs_hz.begin(), s.bin_freqs_hz.end());
    return out;
}

std::vector<double> StitchedSpectrum::powers() const {
    std::vector<double> out;
    out.reserve(bin_count());
    for (const auto& s : segments) out.insert(out.end(), s.power_dbm.begin(), s.power_dbm.end());
    return out;
}

}  // namespace pdscan
