#pragma once

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdint>
#include <limits>
#include <span>
#include <stdexcept>
#include <vector>

#include "evtr/event_frame.hpp"
#include "evtr/fft_correlation.hpp"
#include "evtr/geometry.hpp"
#include "evtr/repeat_controller.hpp"
#include "evtr/topometric_map.hpp"

namespace evtr {

/// Translation-only nearest-neighbour trajectory error.
struct AteResult {
    std::vector<double> distances;
    std::vector<std::size_t> nn_index;
    double mean = 0.0;
    double rms = 0.0;
    double max = 0.0;
};

/// For each teach pose, the distance to the nearest repeat pose. Asymmetric
/// by construction: an aborted repeat leaves uncovered teach poses far from
/// everything, which is exactly what the metric should punish.
inline AteResult ate(const std::vector<Pose2D>& teach, const std::vector<Pose2D>& repeat) {
    if (teach.empty() || repeat.empty())
        throw std::invalid_argument("ate: traces must be non-empty");
    AteResult res;
    res.distances.reserve(teach.size());
    res.nn_index.reserve(teach.size());
    double sum = 0.0, sum2 = 0.0;
    for (const Pose2D& t : teach) {
        double best = std::numeric_limits<double>::max();
        std::size_t best_i = 0;
        for (std::size_t i = 0; i < repeat.size(); ++i) {
            const double dx = t.x - repeat[i].x, dy = t.y - repeat[i].y;
            const double d2 = dx * dx + dy * dy;
            if (d2 < best) {
                best = d2;
                best_i = i;
            }
        }
        const double d = std::sqrt(best);
        res.distances.push_back(d);
        res.nn_index.push_back(best_i);
        sum += d;
        sum2 += best;
        if (d > res.max) res.max = d;
    }
    res.mean = sum / static_cast<double>(teach.size());
    res.rms = std::sqrt(sum2 / static_cast<double>(teach.size()));
    return res;
}

struct RunOutcome {
    bool completed = false;
    double completed_pct = 0.0;
};

struct SuccessRate {
    int completed = 0;
    int total = 0;
    std::vector<double> lengths_pct;

    double rate() const { return total > 0 ? static_cast<double>(completed) / total : 0.0; }
    double mean_length_pct() const {
        if (lengths_pct.empty()) return 0.0;
        double s = 0.0;
        for (double v : lengths_pct) s += v;
        return s / static_cast<double>(lengths_pct.size());
    }
};

inline SuccessRate success_rate(std::span<const RunOutcome> outcomes) {
    if (outcomes.empty()) throw std::invalid_argument("success_rate: no runs");
    SuccessRate sr;
    sr.total = static_cast<int>(outcomes.size());
    for (const RunOutcome& o : outcomes) {
        if (o.completed) ++sr.completed;
        sr.lengths_pct.push_back(o.completed_pct);
    }
    return sr;
}

struct BenchParams {
    int compression = 8;
    int s = 4;
    bool per_frame = false;
    CorrectionGains gains;
};

struct BenchReport {
    std::vector<double> samples_us;
    double mean_us = 0.0;
    double median_us = 0.0;
    double p99_us = 0.0;
    double max_us = 0.0;
    double rate_hz = 0.0;            // 1e6 / mean vision latency
    double effective_rate_hz = 0.0;  // bounded by the frame hop 1/tau
    int iterations = 0;
    int warmup = 0;
    double checksum = 0.0;  // sum of computed corrections; defeats dead-code elimination
};

/// Median cost of one steady_clock timestamp pair, in microseconds.
inline double bench_timer_overhead_us(int probes = 2001) {
    std::vector<double> d;
    d.reserve(static_cast<std::size_t>(probes));
    for (int i = 0; i < probes; ++i) {
        const auto a = std::chrono::steady_clock::now();
        const auto b = std::chrono::steady_clock::now();
        d.push_back(std::chrono::duration<double, std::micro>(b - a).count());
    }
    std::sort(d.begin(), d.end());
    return d[(d.size() - 1) / 2];
}

/// Times the vision stage in isolation: compress the live frame, correlate it
/// against the goal window, convert the peaks to the two correction terms.
/// The goal index walks the map so window clamping and plan reuse behave as
/// they do in a real run; warmup iterations are excluded from the stats.
inline BenchReport bench_vision(const TopometricMap& map,
                                const std::vector<const EventFrame*>& frames,
                                const BenchParams& params, int iterations) {
    if (iterations < 100)
        throw std::invalid_argument("bench_vision: iterations must be >= 100");
    if (map.size() < 3)
        throw std::invalid_argument("bench_vision: map too small");
    if (frames.empty())
        throw std::invalid_argument("bench_vision: no frames to time");
    params.gains.validate();

    std::vector<CompressedFrame> cache;
    cache.reserve(map.size());
    for (const MapNode& n : map.nodes()) cache.push_back(compress(n.frame, params.compression));

    CorrelationEngine engine;
    BenchReport rep;
    rep.iterations = iterations;
    rep.warmup = std::min(iterations / 10, 50);
    rep.samples_us.reserve(static_cast<std::size_t>(iterations));

    const int K = static_cast<int>(map.size());
    double theta_prev = 0.0;
    for (int i = 0; i < rep.warmup + iterations; ++i) {
        const int k = 1 + i % (K - 2);
        const EventFrame& live = *frames[static_cast<std::size_t>(i) % frames.size()];

        const auto t0 = std::chrono::steady_clock::now();
        const CompressedFrame comp = compress(live, params.compression);
        const int lo = std::max(0, k - params.s);
        const int hi_excl = std::min(K, k + params.s + 1);
        SearchSpace<CompressedFrame> space;
        space.k = k;
        space.first_index = lo;
        space.s = params.s;
        space.candidates.reserve(static_cast<std::size_t>(hi_excl - lo));
        for (int j = lo; j < hi_excl; ++j)
            space.candidates.push_back(&cache[static_cast<std::size_t>(j)]);
        const std::vector<CorrelationResult> results =
            params.per_frame ? engine.correlate_per_frame(space, comp)
                             : engine.correlate_search_space(space, comp);
        const std::size_t goal_i = static_cast<std::size_t>(k - lo);
        const double theta_curr = -deg_to_rad(
            pixel_offset_to_angle(results[goal_i].delta, comp.cols, map.fov_deg()));
        const double u = 0.5;
        const double dtheta = (1.0 - u) * theta_prev + u * theta_curr;
        std::vector<double> rhos;
        rhos.reserve(results.size());
        for (const CorrelationResult& r : results) rhos.push_back(r.peak);
        const double rho_bar = rho_bar_threshold(params.gains, rhos);
        const double drho = along_path_offset(rhos, lo - k, u, rho_bar);
        const auto t1 = std::chrono::steady_clock::now();

        theta_prev = theta_curr;
        rep.checksum += dtheta + drho;
        if (i >= rep.warmup)
            rep.samples_us.push_back(std::chrono::duration<double, std::micro>(t1 - t0).count());
    }

    std::vector<double> sorted = rep.samples_us;
    std::sort(sorted.begin(), sorted.end());
    double sum = 0.0;
    for (double v : sorted) sum += v;
    rep.mean_us = sum / static_cast<double>(sorted.size());
    rep.median_us = sorted[(sorted.size() - 1) / 2];
    const std::size_t p99_i =
        static_cast<std::size_t>(std::ceil(0.99 * static_cast<double>(sorted.size()))) - 1;
    rep.p99_us = sorted[std::min(p99_i, sorted.size() - 1)];
    rep.max_us = sorted.back();
    rep.rate_hz = rep.mean_us > 0.0 ? 1e6 / rep.mean_us : 0.0;
    const double hop_hz = 1e6 / static_cast<double>(map.tau_us());
    rep.effective_rate_hz = std::min(rep.rate_hz, hop_hz);
    return rep;
}

} // namespace evtr
