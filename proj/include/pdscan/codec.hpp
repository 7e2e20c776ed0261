#pragma once

#include "pdscan/dsp.hpp"
#include "pdscan/records.hpp"

#include <nlohmann/json.hpp>

#include <cstdint>
#include <filesystem>
#include <mutex>
#include <span>
#include <string>
#include <vector>

namespace pdscan::codec {

namespace fs = std::filesystem;

// .iqf layout, all integers little-endian:
//
//   off  size  field
//     0     4  magic "PDIQ"
//     4     2  version (1)
//     6     2  header_len (80)
//     8     8  center_freq_hz   u64
//    16     8  span_hz          u64
//    24     8  iq_rate_hz       u64
//    32     8  t0_unix_ms       i64
//    40     8  n_samples        u64
//    48     1  adc_bits         u8
//    49     8  full_scale_uv    u64
//    57     8  cal_constant_micro u64   (C * 1e6)
//    65     4  window_index     u32     (first word of the reserved area)
//    69    11  zero
//    80   4*n  payload: n x (I i16, Q i16)
//  80+4n    4  CRC-32 (0xEDB88320) of header + payload
//
// Readers honour header_len, so later versions may grow the header.
inline constexpr char kIqfMagic[4] = {'P', 'D', 'I', 'Q'};
inline constexpr std::uint16_t kIqfVersion = 1;
inline constexpr std::uint16_t kIqfHeaderLen = 80;
inline constexpr std::size_t kIqfMinHeaderLen = 69;

std::uint32_t crc32(std::span<const std::uint8_t> bytes) noexcept;

std::vector<std::uint8_t> encode_iqf(const dsp::IqFrame& frame);
dsp::IqFrame decode_iqf(std::span<const std::uint8_t> bytes);

// Returns the number of bytes written.
std::size_t write_iqf(const dsp::IqFrame& frame, const fs::path& path);
dsp::IqFrame read_iqf(const fs::path& path);

// sample_index,time_s,i_adc,q_adc,i_volts,q_volts; returns data rows written.
std::size_t export_csv(const dsp::IqFrame& frame, const fs::path& path);

// freq_hz,power_dbm sorted by frequency, -inf written as "-inf".
std::size_t write_spectrum_csv(const dsp::PowerSpectrum& spectrum, const fs::path& path);
std::size_t write_spectrum_csv(const StitchedSpectrum& spectrum, const fs::path& path);

struct SpectrumTable {
    std::vector<double> freqs_hz;
    std::vector<double> power_dbm;
};
SpectrumTable read_spectrum_csv(const fs::path& path);

struct DecodeEntry {
    fs::path input;
    fs::path output;
    bool ok = false;
    std::string error;
};

// Decodes every *.iqf in dir_in to CSV in dir_out; failures are recorded per file.
std::vector<DecodeEntry> batch_decode(const fs::path& dir_in, const fs::path& dir_out);

// One line of the append-only event index.
struct EventIndexRecord {
    std::string event_id;
    std::int64_t t0_unix_ms = 0;
    double peak_freq_hz = 0.0;
    double peak_power_dbm = 0.0;
    double threshold_dbm = 0.0;
    std::string sweep_id;
    std::string iq_path;
    std::string spectrum_path;
    std::string upload_state = "pending";

    static EventIndexRecord from_event(const PdEvent& event);
    friend bool operator==(const EventIndexRecord&, const EventIndexRecord&) = default;
};

nlohmann::json to_json(const EventIndexRecord& record);
EventIndexRecord record_from_json(const nlohmann::json& j);

// Appends newline-terminated lines to a file, one flush per line, serialized per instance.
class LineAppender {
public:
    explicit LineAppender(fs::path path);
    void append(std::string_view line);
    const fs::path& path() const noexcept { return path_; }

private:
    fs::path path_;
    std::mutex mutex_;
};

struct LineChunk {
    std::vector<std::string> lines;  // complete, non-empty lines without the newline
    std::uint64_t next_offset = 0;
};

// Complete lines from byte offset on; a torn final line is left for later.
LineChunk read_complete_lines(const fs::path& path, std::uint64_t offset = 0);

// Serialized appender; every line is written and flushed in one call.
class EventIndexWriter {
public:
    explicit EventIndexWriter(fs::path path) : out_(std::move(path)) {}
    void append(const EventIndexRecord& record);
    const fs::path& path() const noexcept { return out_.path(); }

private:
    LineAppender out_;
};

struct IndexChunk {
    std::vector<EventIndexRecord> records;
    std::uint64_t next_offset = 0;  // byte offset just past the last complete line
    std::size_t malformed = 0;      // complete lines that failed to parse
};

// Reads complete lines starting at byte offset; a torn final line is left for later.
IndexChunk read_index(const fs::path& path, std::uint64_t offset = 0);

// Truncates a line-oriented file after its last newline so later appends start
// on a fresh line. Returns the number of bytes dropped. Missing files are left alone.
std::uint64_t repair_torn_tail(const fs::path& path);

// Write-to-temp then rename, so readers never observe a partial file.
void write_file_atomic(const fs::path& path, std::span<const std::uint8_t> bytes);
void write_file_atomic(const fs::path& path, const std::string& text);
std::vector<std::uint8_t> read_file(const fs::path& path);

}  // namespace pdscan::codec
