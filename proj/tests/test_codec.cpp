#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include "doctest.h"

#include "pdscan/codec.hpp"
#include "pdscan/errors.hpp"
#include "codec_fixtures.hpp"
#include "test_util.hpp"

#include <fstream>
#include <random>
#include <sstream>

using namespace pdscan;
using namespace pdscan::codec;
using pdscan::testing::TempDir;
using pdscan::testing::golden_frame;
using pdscan::testing::random_frame;

namespace {

std::vector<std::string> read_lines(const std::filesystem::path& p) {
    std::ifstream in(p);
    std::vector<std::string> lines;
    for (std::string l; std::getline(in, l);) lines.push_back(l);
    return lines;
}

}  // namespace

TEST_CASE("iqf size arithmetic: 10 ms at 56 MS/s") {
    dsp::IqFrame f = golden_frame();
    f.samples.assign(560'000, dsp::IqSample{7, -7});
    TempDir dir;
    CHECK(write_iqf(f, dir / "big.iqf") == 80 + 2'240'000 + 4);
    CHECK(std::filesystem::file_size(dir / "big.iqf") == 2'240'084);
}

TEST_CASE("zero-sample frames are rejected") {
    dsp::IqFrame f = golden_frame();
    f.samples.clear();
    TempDir dir;
    CHECK_THROWS_AS(write_iqf(f, dir / "empty.iqf"), FormatError);
}

TEST_CASE("non-integral frequencies cannot be encoded exactly") {
    dsp::IqFrame f = golden_frame();
    f.center_freq_hz = 315e6 + 0.5;
    CHECK_THROWS_AS(encode_iqf(f), FormatError);
}

TEST_CASE("property: randomized frames round-trip bit-exactly") {
    std::mt19937_64 rng(2024);
    TempDir dir;
    for (int trial = 0; trial < 100; ++trial) {
        const auto f = random_frame(rng, 1 + rng() % 3000);
        const auto path = dir / "rt.iqf";
        write_iqf(f, path);
        CHECK(read_iqf(path) == f);
        CHECK(encode_iqf(read_iqf(path)) == read_file(path));
    }
}

TEST_CASE("read_iqf error classes") {
    TempDir dir;
    const auto f = golden_frame();
    auto bytes = encode_iqf(f);

    auto flipped = bytes;
    flipped[80 + 5] ^= 0x40;
    CHECK_THROWS_AS(decode_iqf(flipped), CorruptError);

    auto bad_magic = bytes;
    std::copy_n("XXXX", 4, bad_magic.begin());
    CHECK_THROWS_AS(decode_iqf(bad_magic), FormatError);

    auto truncated = bytes;
    truncated.resize(bytes.size() - 3);
    CHECK_THROWS_AS(decode_iqf(truncated), CorruptError);
    truncated.resize(20);
    CHECK_THROWS_AS(decode_iqf(truncated), CorruptError);

    CHECK_THROWS_AS(read_iqf(dir / "missing.iqf"), IoError);
}

TEST_CASE("fuzz: every single-bit flip is detected") {
    std::mt19937_64 rng(31);
    const auto bytes = encode_iqf(random_frame(rng, 16));
    for (std::size_t bit = 0; bit < bytes.size() * 8; ++bit) {
        auto corrupt = bytes;
        corrupt[bit / 8] ^= static_cast<std::uint8_t>(1U << (bit % 8));
        bool detected = false;
        try {
            decode_iqf(corrupt);
        } catch (const FormatError&) {
            detected = true;
        } catch (const CorruptError&) {
            detected = true;
        }
        CHECK_MESSAGE(detected, "bit " << bit);
    }
}

TEST_CASE("golden fixture decodes to the documented frame and re-encodes identically") {
    const std::filesystem::path golden = std::filesystem::path(PDSCAN_TEST_DATA) / "golden_v1.iqf";
    CHECK(read_iqf(golden) == golden_frame());
    CHECK(encode_iqf(golden_frame()) == read_file(golden));
    CHECK(crc32(std::span<const std::uint8_t>()) == 0U);
    const std::string check = "123456789";
    CHECK(crc32(std::span(reinterpret_cast<const std::uint8_t*>(check.data()), check.size())) == 0xCBF43926U);
}

TEST_CASE("export_csv layout and full-scale mapping") {
    TempDir dir;
    dsp::IqFrame f = golden_frame();
    f.samples.resize(4);
    CHECK(export_csv(f, dir / "f.csv") == 4);
    const auto lines = read_lines(dir / "f.csv");
    REQUIRE(lines.size() == 5);
    CHECK(lines[0] == "sample_index,time_s,i_adc,q_adc,i_volts,q_volts");
    CHECK(lines[1] == "0,0,-32768,32767,-1,0.999969482");
    CHECK(lines[2].rfind("1,2.5e-07,0,0,", 0) == 0);
}

TEST_CASE("export_csv re-parses to the exact ADC integers and is much larger than iqf") {
    std::mt19937_64 rng(8);
    TempDir dir;
    const auto f = random_frame(rng, 20000);
    write_iqf(f, dir / "f.iqf");
    export_csv(f, dir / "f.csv");
    const auto lines = read_lines(dir / "f.csv");
    REQUIRE(lines.size() == f.samples.size() + 1);
    for (std::size_t k = 0; k < f.samples.size(); ++k) {
        std::istringstream row(lines[k + 1]);
        std::string idx, t, i, q;
        std::getline(row, idx, ',');
        std::getline(row, t, ',');
        std::getline(row, i, ',');
        std::getline(row, q, ',');
        CHECK(std::stoul(idx) == k);
        CHECK(std::stoi(i) == f.samples[k].i);
        CHECK(std::stoi(q) == f.samples[k].q);
    }
    CHECK(std::filesystem::file_size(dir / "f.csv") > 5 * std::filesystem::file_size(dir / "f.iqf"));
}

TEST_CASE("spectrum csv: row count, ordering and -inf sentinel") {
    TempDir dir;
    dsp::PowerSpectrum s;
    s.bin_freqs_hz = {3e6, 1e6, 2e6};
    s.power_dbm = {-10.5, dsp::kNegInf, -99.123456789012};
    CHECK(write_spectrum_csv(s, dir / "s.csv") == 3);
    const auto lines = read_lines(dir / "s.csv");
    CHECK(lines[0] == "freq_hz,power_dbm");
    CHECK(lines[1] == "1000000,-inf");
    const auto table = read_spectrum_csv(dir / "s.csv");
    CHECK(table.freqs_hz == std::vector<double>{1e6, 2e6, 3e6});
    CHECK(table.power_dbm == std::vector<double>{dsp::kNegInf, -99.123456789012, -10.5});

    dsp::PowerSpectrum silent;
    silent.bin_freqs_hz = {1, 2, 3, 4};
    silent.power_dbm.assign(4, dsp::kNegInf);
    write_spectrum_csv(silent, dir / "silent.csv");
    for (std::size_t k = 1; k < 5; ++k) CHECK(read_lines(dir / "silent.csv")[k].ends_with(",-inf"));
    CHECK(read_spectrum_csv(dir / "silent.csv").power_dbm == silent.power_dbm);

    CHECK_THROWS_AS(write_spectrum_csv(dsp::PowerSpectrum{}, dir / "e.csv"), FormatError);
}

TEST_CASE("batch_decode collects per-file failures") {
    TempDir in, out;
    std::mt19937_64 rng(4);
    for (int k = 0; k < 3; ++k) write_iqf(random_frame(rng, 10), in / ("f" + std::to_string(k) + ".iqf"));
    auto bytes = encode_iqf(random_frame(rng, 10));
    bytes[90] ^= 1;
    write_file_atomic(in / "bad.iqf", bytes);
    write_file_atomic(in / "notes.txt", std::string("ignored"));

    const auto manifest = batch_decode(in.path(), out.path());
    REQUIRE(manifest.size() == 4);
    CHECK(std::count_if(manifest.begin(), manifest.end(), [](const auto& e) { return e.ok; }) == 3);
    CHECK(manifest[0].input.filename() == "bad.iqf");
    CHECK_FALSE(manifest[0].ok);
    CHECK(manifest[0].error.find("CRC") != std::string::npos);
    CHECK(std::filesystem::exists(out / "f1.csv"));

    const auto first = read_file(out / "f2.csv");
    const auto again = batch_decode(in.path(), out.path());
    CHECK(again.size() == 4);
    CHECK(read_file(out / "f2.csv") == first);

    TempDir empty;
    CHECK(batch_decode(empty.path(), out.path()).empty());
    CHECK_THROWS_AS(batch_decode(empty / "nope", out.path()), IoError);
}

TEST_CASE("event index appends, resumes from offsets and ignores a torn tail") {
    TempDir dir;
    EventIndexWriter writer(dir / "index" / "events.jsonl");
    EventIndexRecord r{"id-1", 1'714'564'800'123, 315e6, -36.1, -50.0, "sweep-1", "/a.iqf", "/a.csv", "pending"};
    writer.append(r);
    auto r2 = r;
    r2.event_id = "id-2";
    writer.append(r2);

    auto chunk = read_index(writer.path());
    REQUIRE(chunk.records.size() == 2);
    CHECK(chunk.records[0] == r);
    CHECK(to_json(r)["t0"] == "2024-05-01T12:00:00.123Z");

    {
        std::ofstream torn(writer.path(), std::ios::app);
        torn << R"({"event_id":"id-3","t0":"2024-05)";
    }
    auto tail = read_index(writer.path(), chunk.next_offset);
    CHECK(tail.records.empty());
    CHECK(tail.next_offset == chunk.next_offset);
    {
        std::ofstream finish(writer.path(), std::ios::app);
        finish << R"(-01T12:00:01.000Z","peak_freq_hz":1,"peak_power_dbm":-1,"threshold_dbm":-50,)"
               << R"("sweep_id":"s","iq_path":"x","spectrum_path":"y","upload_state":"pending"})" << "\n";
        finish << "not json\n";
    }
    tail = read_index(writer.path(), chunk.next_offset);
    REQUIRE(tail.records.size() == 1);
    CHECK(tail.records[0].event_id == "id-3");
    CHECK(tail.malformed == 1);
    // earlier lines are untouched by later appends
    CHECK(read_index(writer.path()).records[0] == r);
}
