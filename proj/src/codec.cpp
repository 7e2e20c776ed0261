#include "pdscan/codec.hpp"

#include "pdscan/errors.hpp"
#include "pdscan/timeutil.hpp"

#include <zlib.h>

#include <algorithm>
#include <charconv>
#include <cmath>
#include <cstdio>
#include <cstring>
#include <fstream>
#include <numeric>
#include <random>
#include <sstream>

namespace pdscan::codec {

namespace {

void put_u16(std::vector<std::uint8_t>& out, std::size_t off, std::uint16_t v) {
    for (int b = 0; b < 2; ++b) out[off + b] = static_cast<std::uint8_t>(v >> (8 * b));
}

void put_u32(std::vector<std::uint8_t>& out, std::size_t off, std::uint32_t v) {
    for (int b = 0; b < 4; ++b) out[off + b] = static_cast<std::uint8_t>(v >> (8 * b));
}

void put_u64(std::vector<std::uint8_t>& out, std::size_t off, std::uint64_t v) {
    for (int b = 0; b < 8; ++b) out[off + b] = static_cast<std::uint8_t>(v >> (8 * b));
}

template <class T>
T get_le(std::span<const std::uint8_t> in, std::size_t off) {
    std::uint64_t v = 0;
    for (std::size_t b = 0; b < sizeof(T); ++b) v |= static_cast<std::uint64_t>(in[off + b]) << (8 * b);
    return static_cast<T>(v);
}

std::uint64_t integral_hz(double hz, const char* field) {
    if (!(hz >= 0.0) || hz != std::floor(hz) || hz > 1.8e19) {
        throw FormatError(std::string(field) + " must be a non-negative integer number of Hz");
    }
    return static_cast<std::uint64_t>(hz);
}

// Shortest representation that parses back to the same double.
std::string format_double(double v, std::chars_format fmt = std::chars_format::general) {
    if (std::isinf(v)) return v < 0 ? "-inf" : "inf";
    char buf[400];
    auto [ptr, ec] = std::to_chars(buf, buf + sizeof buf, v, fmt);
    (void)ec;
    return std::string(buf, ptr);
}

double parse_double(std::string_view s) {
    if (s == "-inf") return -std::numeric_limits<double>::infinity();
    if (s == "inf") return std::numeric_limits<double>::infinity();
    double v = 0.0;
    auto [ptr, ec] = std::from_chars(s.data(), s.data() + s.size(), v);
    if (ec != std::errc{} || ptr != s.data() + s.size()) {
        throw FormatError("bad number '" + std::string(s) + "'");
    }
    return v;
}

std::size_t write_spectrum_rows(std::span<const double> freqs, std::span<const double> powers, const fs::path& path) {
    if (freqs.empty()) throw FormatError("refusing to write an empty spectrum");
    std::vector<std::size_t> order(freqs.size());
    std::iota(order.begin(), order.end(), std::size_t{0});
    std::stable_sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) { return freqs[a] < freqs[b]; });
    std::string text = "freq_hz,power_dbm\n";
    text.reserve(order.size() * 40);
    for (std::size_t k : order) {
        text += format_double(freqs[k], std::chars_format::fixed);
        text += ',';
        text += format_double(powers[k]);
        text += '\n';
    }
    write_file_atomic(path, text);
    return order.size();
}

}  // namespace

std::uint32_t crc32(std::span<const std::uint8_t> bytes) noexcept {
    uLong crc = ::crc32(0L, Z_NULL, 0);
    std::size_t done = 0;
    while (done < bytes.size()) {
        const auto chunk = static_cast<uInt>(std::min<std::size_t>(bytes.size() - done, 1U << 30));
        crc = ::crc32(crc, bytes.data() + done, chunk);
        done += chunk;
    }
    return static_cast<std::uint32_t>(crc);
}

std::vector<std::uint8_t> encode_iqf(const dsp::IqFrame& frame) {
    if (frame.samples.empty()) throw FormatError("iqf frames must contain at least one sample");
    if (frame.adc_bits < 1 || frame.adc_bits > 16) throw FormatError("adc_bits must be in [1, 16]");
    const std::size_t n = frame.samples.size();
    std::vector<std::uint8_t> out(kIqfHeaderLen + 4 * n + 4, 0);
    std::memcpy(out.data(), kIqfMagic, 4);
    put_u16(out, 4, kIqfVersion);
    put_u16(out, 6, kIqfHeaderLen);
    put_u64(out, 8, integral_hz(frame.center_freq_hz, "center_freq"));
    put_u64(out, 16, integral_hz(frame.span_hz, "span"));
    put_u64(out, 24, integral_hz(frame.iq_rate_hz, "iq_rate"));
    put_u64(out, 32, static_cast<std::uint64_t>(frame.t0_unix_ms));
    put_u64(out, 40, n);
    out[48] = frame.adc_bits;
    put_u64(out, 49, frame.full_scale_uv);
    put_u64(out, 57, frame.cal_constant_micro);
    put_u32(out, 65, frame.window_index);
    std::size_t off = kIqfHeaderLen;
    for (const auto& s : frame.samples) {
        put_u16(out, off, static_cast<std::uint16_t>(s.i));
        put_u16(out, off + 2, static_cast<std::uint16_t>(s.q));
        off += 4;
    }
    put_u32(out, off, crc32(std::span(out).first(off)));
    return out;
}

dsp::IqFrame decode_iqf(std::span<const std::uint8_t> bytes) {
    if (bytes.size() >= 4 && std::memcmp(bytes.data(), kIqfMagic, 4) != 0) {
        throw FormatError("not an iqf file (bad magic)");
    }
    if (bytes.size() < kIqfMinHeaderLen + 4) throw CorruptError("iqf file truncated inside the header");
    const std::size_t body = bytes.size() - 4;
    if (crc32(bytes.first(body)) != get_le<std::uint32_t>(bytes, body)) {
        throw CorruptError("iqf CRC mismatch");
    }
    const auto version = get_le<std::uint16_t>(bytes, 4);
    if (version != kIqfVersion) throw FormatError("unsupported iqf version " + std::to_string(version));
    const auto header_len = get_le<std::uint16_t>(bytes, 6);
    if (header_len < kIqfMinHeaderLen) throw FormatError("iqf header_len too small");
    const auto n = get_le<std::uint64_t>(bytes, 40);
    if (n == 0) throw FormatError("iqf frame has zero samples");
    if (header_len > body || (body - header_len) / 4 != n || (body - header_len) % 4 != 0) {
        throw CorruptError("iqf payload length does not match n_samples");
    }

    dsp::IqFrame frame;
    frame.center_freq_hz = static_cast<double>(get_le<std::uint64_t>(bytes, 8));
    frame.span_hz = static_cast<double>(get_le<std::uint64_t>(bytes, 16));
    frame.iq_rate_hz = static_cast<double>(get_le<std::uint64_t>(bytes, 24));
    frame.t0_unix_ms = get_le<std::int64_t>(bytes, 32);
    frame.adc_bits = bytes[48];
    frame.full_scale_uv = get_le<std::uint64_t>(bytes, 49);
    frame.cal_constant_micro = get_le<std::uint64_t>(bytes, 57);
    frame.window_index = header_len >= 69 ? get_le<std::uint32_t>(bytes, 65) : 0;
    frame.samples.resize(n);
    std::size_t off = header_len;
    for (auto& s : frame.samples) {
        s.i = get_le<std::int16_t>(bytes, off);
        s.q = get_le<std::int16_t>(bytes, off + 2);
        off += 4;
    }
    return frame;
}

std::size_t write_iqf(const dsp::IqFrame& frame, const fs::path& path) {
    const auto bytes = encode_iqf(frame);
    write_file_atomic(path, bytes);
    return bytes.size();
}

dsp::IqFrame read_iqf(const fs::path& path) {
    const auto bytes = read_file(path);
    return decode_iqf(bytes);
}

std::size_t export_csv(const dsp::IqFrame& frame, const fs::path& path) {
    if (frame.samples.empty() || !(frame.iq_rate_hz > 0.0)) throw FormatError("cannot export an invalid frame");
    const double scale = frame.volts_per_count();
    std::string text = "sample_index,time_s,i_adc,q_adc,i_volts,q_volts\n";
    text.reserve(frame.samples.size() * 56 + text.size());
    char line[160];
    for (std::size_t k = 0; k < frame.samples.size(); ++k) {
        const auto& s = frame.samples[k];
        const int len = std::snprintf(line, sizeof line, "%zu,%.12g,%d,%d,%.9g,%.9g\n", k,
                                      static_cast<double>(k) / frame.iq_rate_hz, s.i, s.q, s.i * scale, s.q * scale);
        text.append(line, static_cast<std::size_t>(len));
    }
    write_file_atomic(path, text);
    return frame.samples.size();
}

std::size_t write_spectrum_csv(const dsp::PowerSpectrum& spectrum, const fs::path& path) {
    return write_spectrum_rows(spectrum.bin_freqs_hz, spectrum.power_dbm, path);
}

std::size_t write_spectrum_csv(const StitchedSpectrum& spectrum, const fs::path& path) {
    const auto freqs = spectrum.frequencies();
    const auto powers = spectrum.powers();
    return write_spectrum_rows(freqs, powers, path);
}

SpectrumTable read_spectrum_csv(const fs::path& path) {
    std::ifstream in(path);
    if (!in) throw IoError("cannot open spectrum csv", path.string());
    std::string line;
    if (!std::getline(in, line) || line != "freq_hz,power_dbm") {
        throw FormatError("spectrum csv header mismatch in " + path.string());
    }
    SpectrumTable table;
    while (std::getline(in, line)) {
        if (line.empty()) continue;
        const auto comma = line.find(',');
        if (comma == std::string::npos) throw FormatError("spectrum csv row without comma");
        table.freqs_hz.push_back(parse_double(std::string_view(line).substr(0, comma)));
        table.power_dbm.push_back(parse_double(std::string_view(line).substr(comma + 1)));
    }
    return table;
}

std::vector<DecodeEntry> batch_decode(const fs::path& dir_in, const fs::path& dir_out) {
    if (!fs::is_directory(dir_in)) throw IoError("input directory does not exist", dir_in.string());
    std::vector<fs::path> inputs;
    for (const auto& entry : fs::directory_iterator(dir_in)) {
        if (entry.is_regular_file() && entry.path().extension() == ".iqf") inputs.push_back(entry.path());
    }
    std::sort(inputs.begin(), inputs.end());
    std::error_code ec;
    fs::create_directories(dir_out, ec);
    if (ec) throw IoError("cannot create output directory", dir_out.string());

    std::vector<DecodeEntry> manifest;
    for (const auto& input : inputs) {
        DecodeEntry entry{input, dir_out / input.filename().replace_extension(".csv"), false, {}};
        try {
            export_csv(read_iqf(input), entry.output);
            entry.ok = true;
        } catch (const Error& e) {
            entry.output.clear();
            entry.error = e.what();
        }
        manifest.push_back(std::move(entry));
    }
    return manifest;
}

// --- event index ---------------------------------------------------------------

EventIndexRecord EventIndexRecord::from_event(const PdEvent& event) {
    return {event.event_id,    event.t0_unix_ms,       event.peak_freq_hz,
            event.peak_power_dbm, event.threshold_dbm, event.sweep_id,
            event.artifacts.iq_path, event.artifacts.spectrum_path, "pending"};
}

nlohmann::json to_json(const EventIndexRecord& r) {
    return {{"event_id", r.event_id},
            {"t0", format_iso_ms(r.t0_unix_ms)},
            {"peak_freq_hz", r.peak_freq_hz},
            {"peak_power_dbm", r.peak_power_dbm},
            {"threshold_dbm", r.threshold_dbm},
            {"sweep_id", r.sweep_id},
            {"iq_path", r.iq_path},
            {"spectrum_path", r.spectrum_path},
            {"upload_state", r.upload_state}};
}

EventIndexRecord record_from_json(const nlohmann::json& j) {
    try {
        EventIndexRecord r;
        r.event_id = j.at("event_id").get<std::string>();
        r.t0_unix_ms = parse_time_ms(j.at("t0").get<std::string>());
        r.peak_freq_hz = j.at("peak_freq_hz").get<double>();
        r.peak_power_dbm = j.at("peak_power_dbm").get<double>();
        r.threshold_dbm = j.at("threshold_dbm").get<double>();
        r.sweep_id = j.at("sweep_id").get<std::string>();
        r.iq_path = j.at("iq_path").get<std::string>();
        r.spectrum_path = j.at("spectrum_path").get<std::string>();
        r.upload_state = j.value("upload_state", "pending");
        return r;
    } catch (const nlohmann::json::exception& e) {
        throw FormatError(std::string("bad event index record: ") + e.what());
    }
}

LineAppender::LineAppender(fs::path path) : path_(std::move(path)) {
    if (path_.has_parent_path()) fs::create_directories(path_.parent_path());
}

void LineAppender::append(std::string_view text) {
    std::string line(text);
    line += '\n';
    std::lock_guard lock(mutex_);
    std::FILE* f = std::fopen(path_.c_str(), "ab");
    if (!f) throw IoError("cannot open for append", path_.string());
    const bool ok = std::fwrite(line.data(), 1, line.size(), f) == line.size() && std::fflush(f) == 0;
    std::fclose(f);
    if (!ok) throw IoError("short write", path_.string());
}

LineChunk read_complete_lines(const fs::path& path, std::uint64_t offset) {
    LineChunk chunk;
    std::ifstream in(path, std::ios::binary);
    if (!in) throw IoError("cannot open", path.string());
    in.seekg(static_cast<std::streamoff>(offset));
    std::string tail((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
    std::size_t pos = 0;
    for (auto nl = tail.find('\n'); nl != std::string::npos; nl = tail.find('\n', pos)) {
        if (nl > pos) chunk.lines.emplace_back(tail, pos, nl - pos);
        pos = nl + 1;
    }
    chunk.next_offset = offset + pos;
    return chunk;
}

std::uint64_t repair_torn_tail(const fs::path& path) {
    std::error_code ec;
    const auto size = fs::file_size(path, ec);
    if (ec || size == 0) return 0;
    const auto bytes = read_file(path);
    const auto last_nl = std::string_view(reinterpret_cast<const char*>(bytes.data()), bytes.size()).rfind('\n');
    const std::uint64_t keep = last_nl == std::string_view::npos ? 0 : last_nl + 1;
    if (keep == size) return 0;
    fs::resize_file(path, keep);
    return size - keep;
}

void EventIndexWriter::append(const EventIndexRecord& record) { out_.append(to_json(record).dump()); }

IndexChunk read_index(const fs::path& path, std::uint64_t offset) {
    auto lines = read_complete_lines(path, offset);
    IndexChunk chunk;
    chunk.next_offset = lines.next_offset;
    for (const auto& line : lines.lines) {
        try {
            chunk.records.push_back(record_from_json(nlohmann::json::parse(line)));
        } catch (const std::exception&) {
            ++chunk.malformed;
        }
    }
    return chunk;
}

// --- file helpers ----------------------------------------------------------------

void write_file_atomic(const fs::path& path, std::span<const std::uint8_t> bytes) {
    if (path.has_parent_path()) {
        std::error_code ec;
        fs::create_directories(path.parent_path(), ec);
    }
    thread_local std::mt19937_64 rng{std::random_device{}()};
    fs::path tmp = path;
    tmp += ".tmp" + std::to_string(rng() % 1000000000ULL);
    {
        std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
        if (!out) throw IoError("cannot open for writing", tmp.string());
        out.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
        out.flush();
        if (!out) {
            std::error_code ec;
            fs::remove(tmp, ec);
            throw IoError("write failed", path.string());
        }
    }
    std::error_code ec;
    fs::rename(tmp, path, ec);
    if (ec) {
        fs::remove(tmp, ec);
        throw IoError("rename failed", path.string());
    }
}

void write_file_atomic(const fs::path& path, const std::string& text) {
    write_file_atomic(path, std::span(reinterpret_cast<const std::uint8_t*>(text.data()), text.size()));
}

std::vector<std::uint8_t> read_file(const fs::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw IoError("cannot open", path.string());
    return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

}  // namespace pdscan::codec
