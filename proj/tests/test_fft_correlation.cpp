#include <catch2/catch_amalgamated.hpp>

#include <cmath>
#include <random>
#include <vector>

#include "evtr/event_frame.hpp"
#include "evtr/fft_correlation.hpp"

using namespace evtr;

namespace {

// Direct evaluation of the score definition: for each horizontal shift d,
// sum over rows and columns of teach(u + d) * repeat(u), zero outside.
template <class FrameT>
std::vector<double> naive_scores(const FrameT& teach, const FrameT& rep) {
    const int w = frame_width(teach);
    const int h = frame_height(teach);
    const int half = w / 2;
    std::vector<double> t(static_cast<std::size_t>(w)), r(static_cast<std::size_t>(w));
    std::vector<double> out(static_cast<std::size_t>(w), 0.0);
    for (int v = 0; v < h; ++v) {
        teach.copy_row_real(v, t.data());
        rep.copy_row_real(v, r.data());
        for (int d = -half; d < w - half; ++d) {
            double s = 0.0;
            for (int u = 0; u < w; ++u) {
                const int tu = u + d;
                if (tu >= 0 && tu < w) s += t[static_cast<std::size_t>(tu)] * r[static_cast<std::size_t>(u)];
            }
            out[static_cast<std::size_t>(d + half)] += s;
        }
    }
    return out;
}

EventFrame random_frame(int w, int h, double density, std::mt19937_64& eng) {
    EventFrame f(w, h, 0, 66000);
    std::bernoulli_distribution on(density);
    for (int v = 0; v < h; ++v)
        for (int u = 0; u < w; ++u)
            if (on(eng)) f.set(u, v);
    return f;
}

// repeat(u) = teach(u + d0): content moves left by d0 pixels for d0 > 0.
EventFrame shifted_copy(const EventFrame& teach, int d0) {
    EventFrame out(teach.width(), teach.height(), teach.t_start_us(), teach.tau_us());
    for (int v = 0; v < teach.height(); ++v)
        for (int u = 0; u < teach.width(); ++u) {
            const int su = u + d0;
            if (su >= 0 && su < teach.width() && teach.test(su, v)) out.set(u, v);
        }
    return out;
}

} // namespace

TEST_CASE("scores match the direct spatial evaluation", "[fft_correlation]") {
    std::mt19937_64 eng(31);
    CorrelationEngine engine;
    struct Case { int w, h; double density; };
    for (const Case& c : {Case{64, 16, 0.02}, Case{130, 9, 0.3}, Case{320, 45, 0.1}}) {
        const EventFrame a = random_frame(c.w, c.h, c.density, eng);
        const EventFrame b = random_frame(c.w, c.h, c.density, eng);
        const CorrelationResult res = engine.correlate_horizontal(a, b);
        const std::vector<double> ref = naive_scores(a, b);
        REQUIRE(res.scores.size() == ref.size());
        for (std::size_t i = 0; i < ref.size(); ++i) {
            REQUIRE(res.scores[i] == Catch::Approx(ref[i]).margin(1e-6));
            // scores of binary frames are integers; rounding recovers them exactly
            REQUIRE(std::llround(res.scores[i]) == std::llround(ref[i]));
        }
    }
}

TEST_CASE("scores index maps to shift delta = i - floor(w/2)", "[fft_correlation]") {
    // single pixel pair with known offset: teach at column 10, repeat at 7
    EventFrame a(32, 4, 0, 66000), b(32, 4, 0, 66000);
    a.set(10, 2);
    b.set(7, 2);
    CorrelationEngine engine;
    const CorrelationResult res = engine.correlate_horizontal(a, b);
    // teach(u + d) * repeat(u) is 1 only at u = 7, d = 3
    const int half = 32 / 2;
    for (int d = -half; d < 32 - half; ++d)
        CHECK(res.scores[static_cast<std::size_t>(d + half)] ==
              Catch::Approx(d == 3 ? 1.0 : 0.0).margin(1e-9));
    CHECK(res.delta == 3);
    CHECK(res.peak == Catch::Approx(1.0).margin(1e-9));
}

TEST_CASE("peak recovers planted shifts over the full stored range", "[fft_correlation]") {
    std::mt19937_64 eng(77);
    CorrelationEngine engine;
    const int w = 320, h = 24;
    for (int d0 : {-160, -159, -80, -13, 0, 5, 80, 120, 159}) {
        // confine content so the shifted copy loses nothing
        EventFrame teach(w, h, 0, 66000);
        std::bernoulli_distribution on(0.15);
        const int lo = std::max(0, d0), hi = w + std::min(0, d0);
        for (int v = 0; v < h; ++v)
            for (int u = lo; u < hi; ++u)
                if (on(eng)) teach.set(u, v);
        const EventFrame rep = shifted_copy(teach, d0);
        const CorrelationResult res = engine.correlate_horizontal(teach, rep);
        REQUIRE(res.delta == d0);
    }
}

TEST_CASE("ambiguous peaks resolve to the smallest shift, negative first", "[fft_correlation]") {
    CorrelationEngine engine;
    {
        // teach pixels at 10 and 20, repeat at 15: equal score at d = -5 and +5
        EventFrame a(32, 1, 0, 66000), b(32, 1, 0, 66000);
        a.set(10, 0);
        a.set(20, 0);
        b.set(15, 0);
        const CorrelationResult res = engine.correlate_horizontal(a, b);
        CHECK(res.delta == -5);
        CHECK(res.peak == Catch::Approx(1.0).margin(1e-9));
    }
    {
        // adding teach content at 15 makes the zero shift win the three-way tie
        EventFrame a(32, 1, 0, 66000), b(32, 1, 0, 66000);
        a.set(10, 0);
        a.set(15, 0);
        a.set(20, 0);
        b.set(15, 0);
        const CorrelationResult res = engine.correlate_horizontal(a, b);
        CHECK(res.delta == 0);
    }
    {
        // all-zero frames: every score ties at 0, the null shift is reported
        const EventFrame a(64, 2, 0, 66000), b(64, 2, 0, 66000);
        const CorrelationResult res = engine.correlate_horizontal(a, b);
        CHECK(res.delta == 0);
        CHECK(res.peak == Catch::Approx(0.0).margin(1e-12));
    }
}

TEST_CASE("concatenated search space equals per-candidate correlation", "[fft_correlation]") {
    std::mt19937_64 eng(404);
    CorrelationEngine engine;
    const int w = 64, h = 12;
    std::vector<EventFrame> frames;
    for (int i = 0; i < 9; ++i) frames.push_back(random_frame(w, h, 0.2, eng));
    // content hugging segment borders would expose any cross-segment leakage
    for (int v = 0; v < h; ++v) {
        frames[0].set(0, v);
        frames[0].set(w - 1, v);
        frames[8].set(0, v);
        frames[8].set(w - 1, v);
    }
    const EventFrame live = random_frame(w, h, 0.2, eng);

    for (int s : {1, 2, 3, 4}) {
        SearchSpace<EventFrame> space;
        space.k = 4;
        space.s = s;
        space.first_index = 4 - s;
        for (int i = 4 - s; i <= 4 + s; ++i)
            space.candidates.push_back(&frames[static_cast<std::size_t>(i)]);
        const auto fast = engine.correlate_search_space(space, live);
        const auto ref = engine.correlate_per_frame(space, live);
        REQUIRE(fast.size() == ref.size());
        for (std::size_t j = 0; j < ref.size(); ++j) {
            REQUIRE(fast[j].delta == ref[j].delta);
            for (std::size_t i = 0; i < ref[j].scores.size(); ++i)
                REQUIRE(fast[j].scores[i] == Catch::Approx(ref[j].scores[i]).margin(1e-6));
        }
    }
}

TEST_CASE("search-space results line up with their candidates", "[fft_correlation]") {
    std::mt19937_64 eng(2211);
    CorrelationEngine engine;
    const int w = 96, h = 8;
    // each candidate is the live frame shifted by its own amount
    const int shifts[] = {-20, -10, 0, 10, 20};
    EventFrame base(w, h, 0, 66000);
    std::bernoulli_distribution on(0.2);
    for (int v = 0; v < h; ++v)
        for (int u = 24; u < w - 24; ++u)
            if (on(eng)) base.set(u, v);
    std::vector<EventFrame> candidates;
    for (int d : shifts) candidates.push_back(shifted_copy(base, -d));
    SearchSpace<EventFrame> space;
    space.k = 2;
    space.s = 2;
    space.first_index = 0;
    for (const EventFrame& c : candidates) space.candidates.push_back(&c);

    const auto results = engine.correlate_search_space(space, base);
    REQUIRE(results.size() == 5);
    for (std::size_t j = 0; j < 5; ++j) CHECK(results[j].delta == shifts[j]);
}

TEST_CASE("plan reuse across different segment layouts stays clean", "[fft_correlation]") {
    // (2 candidates of width 40) and (4 candidates of width 20) share the same
    // total transform length; stale padding from one layout must not bleed
    // into the other.
    std::mt19937_64 eng(808);
    CorrelationEngine engine;
    std::vector<EventFrame> wide;
    for (int i = 0; i < 2; ++i) wide.push_back(random_frame(40, 6, 0.5, eng));
    const EventFrame live_wide = random_frame(40, 6, 0.5, eng);
    SearchSpace<EventFrame> ws;
    ws.k = 0;
    ws.s = 1;
    ws.first_index = 0;
    for (const EventFrame& f : wide) ws.candidates.push_back(&f);
    engine.correlate_search_space(ws, live_wide);

    std::vector<EventFrame> narrow;
    for (int i = 0; i < 4; ++i) narrow.push_back(random_frame(20, 6, 0.5, eng));
    const EventFrame live_narrow = random_frame(20, 6, 0.5, eng);
    SearchSpace<EventFrame> ns;
    ns.k = 1;
    ns.s = 2;
    ns.first_index = 0;
    for (const EventFrame& f : narrow) ns.candidates.push_back(&f);

    const auto reused = engine.correlate_search_space(ns, live_narrow);
    CorrelationEngine fresh;
    const auto clean = fresh.correlate_search_space(ns, live_narrow);
    REQUIRE(reused.size() == clean.size());
    for (std::size_t j = 0; j < clean.size(); ++j) {
        REQUIRE(reused[j].delta == clean[j].delta);
        for (std::size_t i = 0; i < clean[j].scores.size(); ++i)
            REQUIRE(reused[j].scores[i] == Catch::Approx(clean[j].scores[i]).margin(1e-9));
    }
}

TEST_CASE("compressed frames correlate like their value arrays", "[fft_correlation]") {
    std::mt19937_64 eng(1717);
    CorrelationEngine engine;
    const EventFrame a = random_frame(320, 20, 0.15, eng);
    const EventFrame b = random_frame(320, 20, 0.15, eng);
    const CompressedFrame ca = compress(a, 8);
    const CompressedFrame cb = compress(b, 8);
    const CorrelationResult res = engine.correlate_horizontal(ca, cb);
    const std::vector<double> ref = naive_scores(ca, cb);
    REQUIRE(res.scores.size() == ref.size());
    for (std::size_t i = 0; i < ref.size(); ++i)
        REQUIRE(res.scores[i] == Catch::Approx(ref[i]).margin(1e-6));
}

TEST_CASE("compression keeps a planted shift recoverable at bin resolution", "[fft_correlation]") {
    std::mt19937_64 eng(55);
    CorrelationEngine engine;
    const int w = 320, h = 24, M = 8;
    const int d0 = 37;
    EventFrame teach(w, h, 0, 66000);
    std::bernoulli_distribution on(0.15);
    for (int v = 0; v < h; ++v)
        for (int u = d0; u < w; ++u)
            if (on(eng)) teach.set(u, v);
    const EventFrame rep = shifted_copy(teach, d0);
    const CompressedFrame ct = compress(teach, M);
    const CompressedFrame cr = compress(rep, M);
    const CorrelationResult res = engine.correlate_horizontal(ct, cr);
    CHECK(std::abs(res.delta * M - d0) <= M);
}

TEST_CASE("pixel offsets convert linearly to view angles", "[fft_correlation]") {
    CHECK(pixel_offset_to_angle(0.0, 320, 36.0) == 0.0);
    CHECK(pixel_offset_to_angle(80.0, 320, 36.0) == Catch::Approx(9.0));
    CHECK(pixel_offset_to_angle(-40.0, 320, 36.0) == Catch::Approx(-4.5));
    CHECK(pixel_offset_to_angle(1.0, 320, 36.0) == Catch::Approx(0.1125));
    CHECK_THROWS_AS(pixel_offset_to_angle(1.0, 0, 36.0), std::invalid_argument);
    CHECK_THROWS_AS(pixel_offset_to_angle(1.0, 320, 0.0), std::invalid_argument);
}

TEST_CASE("geometry mismatches and empty spaces are rejected", "[fft_correlation]") {
    CorrelationEngine engine;
    const EventFrame a(64, 8, 0, 66000);
    const EventFrame b(32, 8, 0, 66000);
    CHECK_THROWS_AS(engine.correlate_horizontal(a, b), std::invalid_argument);
    SearchSpace<EventFrame> empty;
    CHECK_THROWS_AS(engine.correlate_search_space(empty, a), std::invalid_argument);
    SearchSpace<EventFrame> mixed;
    mixed.candidates.push_back(&b);
    CHECK_THROWS_AS(engine.correlate_search_space(mixed, a), std::invalid_argument);
}
