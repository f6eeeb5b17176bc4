#include <catch2/catch_amalgamated.hpp>

#include <cstring>
#include <filesystem>
#include <random>
#include <vector>

#include "evtr/geometry.hpp"
#include "evtr/topometric_map.hpp"

using namespace evtr;

namespace {

EventFrame random_frame(int w, int h, std::int64_t tau, std::mt19937_64& eng) {
    EventFrame f(w, h, 0, tau);
    std::bernoulli_distribution on(0.2);
    for (int v = 0; v < h; ++v)
        for (int u = 0; u < w; ++u)
            if (on(eng)) f.set(u, v);
    return f;
}

TopometricMap random_map(int w, int h, int nodes, std::mt19937_64& eng) {
    TopometricMap m(w, h, 66000, 0.2, deg_to_rad(15.0), 36.0);
    std::uniform_real_distribution<double> pos(-5.0, 5.0);
    for (int i = 0; i < nodes; ++i)
        m.record(random_frame(w, h, 66000, eng), Pose2D{pos(eng), pos(eng), pos(eng) / 2.0});
    return m;
}

} // namespace

TEST_CASE("crc32 matches the standard check value", "[topometric_map]") {
    const char* msg = "123456789";
    CHECK(crc32(reinterpret_cast<const std::uint8_t*>(msg), 9) == 0xCBF43926u);
    CHECK(crc32(nullptr, 0) == 0x00000000u);
}

TEST_CASE("recording triggers on distance or wrapped heading change", "[topometric_map]") {
    const double dd = 0.2, da = deg_to_rad(15.0);
    const Pose2D base{1.0, 1.0, 0.5};
    // below both thresholds
    CHECK_FALSE(should_record(base, Pose2D{1.1, 1.0, 0.5}, dd, da));
    CHECK_FALSE(should_record(base, Pose2D{1.0, 1.0, 0.5 + deg_to_rad(14.9)}, dd, da));
    // at or past the distance threshold, straight and diagonal
    CHECK(should_record(base, Pose2D{1.25, 1.0, 0.5}, dd, da));
    CHECK(should_record(base, Pose2D{1.0 + 0.15, 1.0 + 0.15, 0.5}, dd, da));
    // at or past the heading threshold, both directions
    CHECK(should_record(base, Pose2D{1.0, 1.0, 0.5 + da + 1e-9}, dd, da));
    CHECK(should_record(base, Pose2D{1.0, 1.0, 0.5 - da - 1e-9}, dd, da));
    // heading difference wraps: 3.1 -> -3.1 is only ~4.8 degrees
    CHECK_FALSE(should_record(Pose2D{0, 0, 3.1}, Pose2D{0, 0, -3.1}, dd, da));
    CHECK(should_record(Pose2D{0, 0, 3.0}, Pose2D{0, 0, -3.0}, dd, da));
}

TEST_CASE("nodes keep insertion order and indices", "[topometric_map]") {
    std::mt19937_64 eng(1);
    TopometricMap m(32, 8, 66000, 0.2, deg_to_rad(15.0), 36.0);
    for (int i = 0; i < 5; ++i)
        m.record(random_frame(32, 8, 66000, eng), Pose2D{static_cast<double>(i), 0.0, 0.0});
    REQUIRE(m.size() == 5);
    for (std::size_t i = 0; i < 5; ++i) {
        CHECK(m.node(i).index == static_cast<int>(i));
        CHECK(m.node(i).pose.x == static_cast<double>(i));
    }
}

TEST_CASE("record rejects frames with foreign geometry", "[topometric_map]") {
    std::mt19937_64 eng(2);
    TopometricMap m(32, 8, 66000, 0.2, deg_to_rad(15.0), 36.0);
    CHECK_THROWS_AS(m.record(random_frame(16, 8, 66000, eng), Pose2D{}), std::invalid_argument);
    CHECK_THROWS_AS(m.record(random_frame(32, 4, 66000, eng), Pose2D{}), std::invalid_argument);
    CHECK_THROWS_AS(m.record(random_frame(32, 8, 33000, eng), Pose2D{}), std::invalid_argument);
    CHECK_NOTHROW(m.record(random_frame(32, 8, 66000, eng), Pose2D{}));
}

TEST_CASE("search window clamps to the map bounds", "[topometric_map]") {
    std::mt19937_64 eng(3);
    const TopometricMap m = random_map(32, 8, 10, eng);

    const auto mid = m.search_space(5, 4);
    CHECK(mid.first_index == 1);
    CHECK(mid.candidates.size() == 9);
    CHECK(mid.k == 5);
    CHECK(mid.candidates[4] == &m.node(5).frame);

    const auto head = m.search_space(1, 4);
    CHECK(head.first_index == 0);
    CHECK(head.candidates.size() == 6); // [0, 5]

    const auto tail = m.search_space(9, 4);
    CHECK(tail.first_index == 5);
    CHECK(tail.candidates.size() == 5); // [5, 9]

    CHECK_THROWS_AS(m.search_space(10, 4), std::out_of_range);
    CHECK_THROWS_AS(m.search_space(-1, 4), std::out_of_range);
    CHECK_THROWS_AS(m.search_space(0, -1), std::invalid_argument);

    const TopometricMap empty(32, 8, 66000, 0.2, deg_to_rad(15.0), 36.0);
    CHECK_THROWS_AS(empty.search_space(0, 4), std::logic_error);
}

TEST_CASE("construction validates geometry and quantized intervals", "[topometric_map]") {
    CHECK_THROWS_AS(TopometricMap(0, 8, 66000, 0.2, 0.3, 36.0), std::invalid_argument);
    CHECK_THROWS_AS(TopometricMap(32, 70000, 66000, 0.2, 0.3, 36.0), std::invalid_argument);
    CHECK_THROWS_AS(TopometricMap(32, 8, 0, 0.2, 0.3, 36.0), std::invalid_argument);
    CHECK_THROWS_AS(TopometricMap(32, 8, 66000, 0.0, 0.3, 36.0), std::invalid_argument);
    CHECK_THROWS_AS(TopometricMap(32, 8, 66000, 1e-5, 0.3, 36.0), std::invalid_argument);

    const TopometricMap m(32, 8, 66000, 0.2, deg_to_rad(15.0), 36.0);
    CHECK(m.delta_d() == Catch::Approx(0.2));
    CHECK(m.delta_d_mm() == 200);
    CHECK(m.delta_alpha_mrad() == 262); // millirad resolution
    CHECK(m.delta_alpha() == Catch::Approx(0.262));
    CHECK(m.fov_mdeg() == 36000);
}

TEST_CASE("map equality covers content, not capture timestamps", "[topometric_map]") {
    std::mt19937_64 eng(4);
    TopometricMap a(32, 8, 66000, 0.2, deg_to_rad(15.0), 36.0);
    TopometricMap b(32, 8, 66000, 0.2, deg_to_rad(15.0), 36.0);
    const EventFrame f = random_frame(32, 8, 66000, eng);
    EventFrame shifted_time(32, 8, 123456, 66000);
    for (int v = 0; v < 8; ++v)
        for (int u = 0; u < 32; ++u)
            if (f.test(u, v)) shifted_time.set(u, v);
    a.record(f, Pose2D{1, 2, 3});
    b.record(shifted_time, Pose2D{1, 2, 3});
    CHECK(a == b);

    TopometricMap c = b;
    c.record(f, Pose2D{0, 0, 0});
    CHECK_FALSE(a == c);

    TopometricMap d(32, 8, 66000, 0.2, deg_to_rad(15.0), 36.0);
    d.record(f, Pose2D{1, 2, 3.0000001});
    CHECK_FALSE(a == d);
}

TEST_CASE("serialize/deserialize round-trips and is byte-stable", "[topometric_map]") {
    std::mt19937_64 eng(5);
    for (int w : {32, 130, 320}) {
        const TopometricMap m = random_map(w, 12, 4, eng);
        const std::vector<std::uint8_t> bytes = serialize_map(m);
        const TopometricMap back = deserialize_map(bytes.data(), bytes.size());
        REQUIRE(back == m);
        const std::vector<std::uint8_t> again = serialize_map(back);
        REQUIRE(again == bytes);
    }
    // empty map round-trips too
    const TopometricMap empty(64, 4, 50000, 0.25, 0.3, 40.0);
    const auto bytes = serialize_map(empty);
    const TopometricMap back = deserialize_map(bytes.data(), bytes.size());
    CHECK(back == empty);
    CHECK(back.size() == 0);
}

TEST_CASE("map file layout starts with the magic and version", "[topometric_map]") {
    std::mt19937_64 eng(6);
    const TopometricMap m = random_map(32, 8, 2, eng);
    const auto bytes = serialize_map(m);
    REQUIRE(bytes.size() > kMapHeaderBytes + 4);
    CHECK(bytes[0] == 'E');
    CHECK(bytes[1] == 'V');
    CHECK(bytes[2] == 'T');
    CHECK(bytes[3] == 'R');
    CHECK(bytes[4] == 1);
    CHECK(bytes[5] == 0);
}

TEST_CASE("corrupted map files raise the matching error type", "[topometric_map]") {
    std::mt19937_64 eng(7);
    const TopometricMap m = random_map(32, 8, 3, eng);
    const std::vector<std::uint8_t> good = serialize_map(m);

    SECTION("flipped payload bit fails the checksum") {
        std::vector<std::uint8_t> bad = good;
        bad[kMapHeaderBytes + 30] ^= 0x10;
        CHECK_THROWS_AS(deserialize_map(bad.data(), bad.size()), MapChecksumError);
    }
    SECTION("flipped checksum byte fails the checksum") {
        std::vector<std::uint8_t> bad = good;
        bad[bad.size() - 1] ^= 0x01;
        CHECK_THROWS_AS(deserialize_map(bad.data(), bad.size()), MapChecksumError);
    }
    SECTION("truncation reports how many nodes were complete") {
        std::vector<std::uint8_t> bad(good.begin(), good.end() - 40);
        CHECK_THROWS_WITH(deserialize_map(bad.data(), bad.size()),
                          Catch::Matchers::ContainsSubstring("of 3"));
        CHECK_THROWS_AS(deserialize_map(bad.data(), bad.size()), MapTruncationError);
    }
    SECTION("bad magic is a format error") {
        std::vector<std::uint8_t> bad = good;
        bad[0] = 'X';
        CHECK_THROWS_AS(deserialize_map(bad.data(), bad.size()), MapFormatError);
    }
    SECTION("unknown version is a format error") {
        std::vector<std::uint8_t> bad = good;
        bad[4] = 9;
        CHECK_THROWS_AS(deserialize_map(bad.data(), bad.size()), MapFormatError);
    }
    SECTION("trailing bytes are a format error") {
        std::vector<std::uint8_t> bad = good;
        bad.push_back(0);
        CHECK_THROWS_AS(deserialize_map(bad.data(), bad.size()), MapFormatError);
    }
    SECTION("shorter than a header is a format error") {
        CHECK_THROWS_AS(deserialize_map(good.data(), 10), MapFormatError);
    }
}

TEST_CASE("save and load go through the filesystem unchanged", "[topometric_map]") {
    std::mt19937_64 eng(8);
    const TopometricMap m = random_map(320, 180, 3, eng);
    const std::string path =
        (std::filesystem::temp_directory_path() / "evtr_map_roundtrip.bin").string();
    save_map(m, path);
    const TopometricMap back = load_map(path);
    CHECK(back == m);
    CHECK(back.width() == 320);
    CHECK(back.height() == 180);
    CHECK(back.tau_us() == 66000);
    std::filesystem::remove(path);
    CHECK_THROWS_WITH(load_map(path), Catch::Matchers::ContainsSubstring("cannot open"));
}
