#pragma once

#include "pdscan/dsp.hpp"

#include <cstdint>
#include <string>
#include <vector>

namespace pdscan {

struct ArtifactRefs {
    std::string iq_path;
    std::string spectrum_path;
};

// A threshold crossing in one tuned window.
struct PdEvent {
    std::string event_id;
    std::int64_t t0_unix_ms = 0;
    double peak_freq_hz = 0.0;
    double peak_power_dbm = dsp::kNegInf;
    std::uint32_t window_index = 0;
    std::string sweep_id;
    double threshold_dbm = 0.0;
    ArtifactRefs artifacts;
};

// Per-window slices trimmed so that every frequency has exactly one owner.
struct StitchedSpectrum {
    std::string sweep_id;
    std::int64_t t_start_ms = 0;
    std::int64_t t_end_ms = 0;
    std::vector<dsp::PowerSpectrum> segments;  // ordered by frequency
    std::vector<std::uint32_t> gaps;           // window indices that produced no slice
    bool complete = true;

    std::size_t bin_count() const noexcept;
    std::vector<double> frequencies() const;
    std::vector<double> powers() const;
};

}  // namespace pdscan
