#pragma once

#include <fftw3.h>

#include <cmath>
#include <cstring>
#include <map>
#include <stdexcept>
#include <tuple>
#include <utility>
#include <vector>

#include "evtr/event_frame.hpp"

namespace evtr {

inline int frame_width(const EventFrame& f) { return f.width(); }
inline int frame_height(const EventFrame& f) { return f.height(); }
inline int frame_width(const CompressedFrame& f) { return f.cols; }
inline int frame_height(const CompressedFrame& f) { return f.height; }

/// Correlation scores over horizontal shifts. scores[i] is the correlation at
/// shift delta = i - floor(w/2); positive delta means the repeat view content
/// sits left of where the teach view had it.
struct CorrelationResult {
    std::vector<double> scores;
    int delta = 0;
    double peak = 0.0;
};

/// Window of candidate map frames around goal index k. candidates[i] refers to
/// map node first_index + i; indices were clamped to [0, map size).
template <class FrameT>
struct SearchSpace {
    std::vector<const FrameT*> candidates;
    int k = 0;
    int first_index = 0;
    int s = 0;
};

/// Converts a horizontal pixel shift to a yaw angle in degrees under the
/// small-angle pinhole model: angle = fov_deg * delta / width.
inline double pixel_offset_to_angle(double delta_px, int width, double fov_deg) {
    if (width <= 0) throw std::invalid_argument("pixel_offset_to_angle: width must be positive");
    if (fov_deg <= 0.0) throw std::invalid_argument("pixel_offset_to_angle: fov must be positive");
    return fov_deg * delta_px / static_cast<double>(width);
}

/// FFT cross-correlation of event frames restricted to horizontal shifts.
///
/// Rows are zero-padded to twice their width, so the circular correlation the
/// DFT computes equals the linear one for every stored shift. Per-row spectra
/// are multiplied (teach times conjugated repeat) and accumulated across rows,
/// so a single inverse transform yields the row-summed score vector.
///
/// For a search space the candidates are laid out in one concatenated signal
/// of n segments of length 2w each; with that padding no shift in
/// [-w/2, w/2) can reach a neighbouring segment's content, so one transform
/// pair scores every candidate at once.
///
/// Plans and their zero-initialized buffers are cached per (candidates,
/// width, rows) layout; only the content columns are rewritten between calls,
/// the padding stays zero.
class CorrelationEngine {
public:
    CorrelationEngine() = default;
    ~CorrelationEngine() {
        for (auto& [key, p] : plans_) destroy(p);
    }
    CorrelationEngine(const CorrelationEngine&) = delete;
    CorrelationEngine& operator=(const CorrelationEngine&) = delete;

    template <class FrameT>
    CorrelationResult correlate_horizontal(const FrameT& teach, const FrameT& repeat) {
        const int w = frame_width(teach);
        const int h = frame_height(teach);
        if (frame_width(repeat) != w || frame_height(repeat) != h)
            throw std::invalid_argument("correlate_horizontal: frame geometry mismatch");
        if (w <= 0 || h <= 0)
            throw std::invalid_argument("correlate_horizontal: empty frames");
        Plans& p = plans(1, w, h);
        for (int r = 0; r < h; ++r) {
            teach.copy_row_real(r, p.in_a + static_cast<std::size_t>(r) * p.length);
            repeat.copy_row_real(r, p.in_b + static_cast<std::size_t>(r) * p.length);
        }
        return run(p, 1)[0];
    }

    /// Scores every candidate against the repeat frame. results[i] matches
    /// space.candidates[i].
    template <class FrameT>
    std::vector<CorrelationResult> correlate_search_space(const SearchSpace<FrameT>& space,
                                                          const FrameT& repeat) {
        const int n = static_cast<int>(space.candidates.size());
        if (n == 0) throw std::invalid_argument("correlate_search_space: empty search space");
        const int w = frame_width(repeat);
        const int h = frame_height(repeat);
        if (w <= 0 || h <= 0)
            throw std::invalid_argument("correlate_search_space: empty frames");
        for (const FrameT* c : space.candidates)
            if (frame_width(*c) != w || frame_height(*c) != h)
                throw std::invalid_argument("correlate_search_space: frame geometry mismatch");
        Plans& p = plans(n, w, h);
        const int seg = 2 * w;
        for (int r = 0; r < h; ++r) {
            double* row_a = p.in_a + static_cast<std::size_t>(r) * p.length;
            for (int j = 0; j < n; ++j)
                space.candidates[static_cast<std::size_t>(j)]->copy_row_real(
                    r, row_a + static_cast<std::size_t>(j) * seg);
            repeat.copy_row_real(r, p.in_b + static_cast<std::size_t>(r) * p.length);
        }
        return run(p, n);
    }

    /// Reference path: scores each candidate with an independent transform
    /// pair. Same results as the concatenated layout, linear in candidates.
    template <class FrameT>
    std::vector<CorrelationResult> correlate_per_frame(const SearchSpace<FrameT>& space,
                                                       const FrameT& repeat) {
        std::vector<CorrelationResult> out;
        out.reserve(space.candidates.size());
        for (const FrameT* c : space.candidates) out.push_back(correlate_horizontal(*c, repeat));
        return out;
    }

private:
    struct Plans {
        int n = 0;
        int width = 0;
        int rows = 0;
        int length = 0;
        int spec_len = 0;
        double* in_a = nullptr;
        double* in_b = nullptr;
        fftw_complex* spec_a = nullptr;
        fftw_complex* spec_b = nullptr;
        fftw_complex* prod = nullptr;
        double* corr = nullptr;
        fftw_plan fwd = nullptr;
        fftw_plan inv = nullptr;
    };

    Plans& plans(int n, int width, int rows) {
        const auto key = std::tuple<int, int, int>(n, width, rows);
        auto it = plans_.find(key);
        if (it != plans_.end()) return it->second;
        Plans p;
        p.n = n;
        p.width = width;
        p.rows = rows;
        p.length = 2 * width * n;
        p.spec_len = p.length / 2 + 1;
        const std::size_t in_sz = static_cast<std::size_t>(p.length) * rows;
        const std::size_t spec_sz = static_cast<std::size_t>(p.spec_len) * rows;
        p.in_a = fftw_alloc_real(in_sz);
        p.in_b = fftw_alloc_real(in_sz);
        p.spec_a = fftw_alloc_complex(spec_sz);
        p.spec_b = fftw_alloc_complex(spec_sz);
        p.prod = fftw_alloc_complex(static_cast<std::size_t>(p.spec_len));
        p.corr = fftw_alloc_real(static_cast<std::size_t>(p.length));
        if (!p.in_a || !p.in_b || !p.spec_a || !p.spec_b || !p.prod || !p.corr) {
            destroy(p);
            throw std::bad_alloc();
        }
        std::memset(p.in_a, 0, sizeof(double) * in_sz);
        std::memset(p.in_b, 0, sizeof(double) * in_sz);
        int len[] = {p.length};
        p.fwd = fftw_plan_many_dft_r2c(1, len, rows, p.in_a, nullptr, 1, p.length,
                                       p.spec_a, nullptr, 1, p.spec_len, FFTW_ESTIMATE);
        p.inv = fftw_plan_dft_c2r_1d(p.length, p.prod, p.corr, FFTW_ESTIMATE);
        if (!p.fwd || !p.inv) {
            destroy(p);
            throw std::runtime_error("CorrelationEngine: fftw planning failed");
        }
        return plans_.emplace(key, p).first->second;
    }

    static void destroy(Plans& p) {
        if (p.fwd) fftw_destroy_plan(p.fwd);
        if (p.inv) fftw_destroy_plan(p.inv);
        fftw_free(p.in_a);
        fftw_free(p.in_b);
        fftw_free(p.spec_a);
        fftw_free(p.spec_b);
        fftw_free(p.prod);
        fftw_free(p.corr);
    }

    /// Transforms both buffers, accumulates the conjugate spectral product
    /// over rows, inverts once, and slices out per-candidate score vectors.
    std::vector<CorrelationResult> run(Plans& p, int n) {
        fftw_execute_dft_r2c(p.fwd, p.in_a, p.spec_a);
        fftw_execute_dft_r2c(p.fwd, p.in_b, p.spec_b);
        std::memset(p.prod, 0, sizeof(fftw_complex) * static_cast<std::size_t>(p.spec_len));
        for (int r = 0; r < p.rows; ++r) {
            const fftw_complex* a = p.spec_a + static_cast<std::size_t>(r) * p.spec_len;
            const fftw_complex* b = p.spec_b + static_cast<std::size_t>(r) * p.spec_len;
            for (int k = 0; k < p.spec_len; ++k) {
                p.prod[k][0] += a[k][0] * b[k][0] + a[k][1] * b[k][1];
                p.prod[k][1] += a[k][1] * b[k][0] - a[k][0] * b[k][1];
            }
        }
        fftw_execute(p.inv);
        std::vector<CorrelationResult> out;
        out.reserve(static_cast<std::size_t>(n));
        for (int j = 0; j < n; ++j) out.push_back(extract(p, j * 2 * p.width));
        return out;
    }

    /// Reads one segment's scores out of the circular correlation and finds
    /// the peak. Frame content is integral (event counts), so the true score
    /// at every shift is an integer; rounding before the comparison strips
    /// the transform round-off and makes ties exact. Ties resolve to the
    /// smallest |delta| (negative before positive) so ambiguous content
    /// yields no spurious correction.
    CorrelationResult extract(const Plans& p, int base) const {
        const int w = p.width;
        CorrelationResult res;
        res.scores.resize(static_cast<std::size_t>(w));
        const double scale = 1.0 / static_cast<double>(p.length);
        const int half = w / 2;
        for (int i = 0; i < w; ++i) {
            int idx = base + (i - half);
            if (idx < 0) idx += p.length;
            res.scores[static_cast<std::size_t>(i)] = p.corr[idx] * scale;
        }
        bool first = true;
        const int m_max = half > w - 1 - half ? half : w - 1 - half;
        for (int m = 0; m <= m_max; ++m) {
            for (int sign = -1; sign <= 1; sign += 2) {
                if (m == 0 && sign == 1) continue;
                const int d = sign * m;
                if (d < -half || d >= w - half) continue;
                const double v = std::nearbyint(res.scores[static_cast<std::size_t>(d + half)]);
                if (first || v > res.peak) {
                    res.peak = v;
                    res.delta = d;
                    first = false;
                }
            }
        }
        return res;
    }

    std::map<std::tuple<int, int, int>, Plans> plans_;
};

} // namespace evtr
