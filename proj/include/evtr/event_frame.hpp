#pragma once

#include <bit>
#include <cstdint>
#include <cstdio>
#include <istream>
#include <ostream>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

namespace evtr {

/// Single camera event. Polarity is +1 (brightness increase) or -1.
struct Event {
    std::int64_t t_us = 0;
    int u = 0;
    int v = 0;
    int p = 1;
};

/// Binary event frame: one bit per pixel, set when at least one event fell on
/// that pixel inside the frame's time window [t_start, t_start + tau).
/// Polarity is deliberately ignored; presence is what the matcher consumes.
class EventFrame {
public:
    EventFrame(int width, int height, std::int64_t t_start_us, std::int64_t tau_us)
        : width_(width), height_(height), t_start_us_(t_start_us), tau_us_(tau_us) {
        if (width <= 0 || height <= 0)
            throw std::invalid_argument("EventFrame: width and height must be positive");
        if (tau_us <= 0)
            throw std::invalid_argument("EventFrame: tau must be positive");
        words_per_row_ = (static_cast<std::size_t>(width) + 63) / 64;
        bits_.assign(words_per_row_ * static_cast<std::size_t>(height), 0);
    }

    int width() const { return width_; }
    int height() const { return height_; }
    std::int64_t t_start_us() const { return t_start_us_; }
    std::int64_t tau_us() const { return tau_us_; }

    bool test(int u, int v) const {
        check_coords(u, v);
        return (word(u, v) >> (static_cast<unsigned>(u) & 63u)) & 1u;
    }

    void set(int u, int v) {
        check_coords(u, v);
        word(u, v) |= std::uint64_t{1} << (static_cast<unsigned>(u) & 63u);
    }

    /// Number of set pixels.
    std::size_t count() const {
        std::size_t n = 0;
        for (std::uint64_t w : bits_) n += static_cast<std::size_t>(std::popcount(w));
        return n;
    }

    /// Set pixels in row v, columns [begin, end).
    int count_in_row(int v, int begin, int end) const {
        if (begin < 0 || end > width_ || begin > end)
            throw std::out_of_range("EventFrame::count_in_row: bad column range");
        const std::uint64_t* row = row_words(v);
        int n = 0;
        for (int w0 = begin / 64, w1 = (end + 63) / 64, wi = w0; wi < w1; ++wi) {
            std::uint64_t m = ~std::uint64_t{0};
            if (wi == w0) m &= ~std::uint64_t{0} << (static_cast<unsigned>(begin) & 63u);
            const int bit_end = end - wi * 64;
            if (bit_end < 64) m &= (std::uint64_t{1} << static_cast<unsigned>(bit_end)) - 1;
            n += std::popcount(row[wi] & m);
        }
        return n;
    }

    /// Writes row v as 0.0/1.0 into dst[0..width).
    void copy_row_real(int v, double* dst) const {
        const std::uint64_t* row = row_words(v);
        for (int u = 0; u < width_; ++u)
            dst[u] = (row[u / 64] >> (static_cast<unsigned>(u) & 63u)) & 1u ? 1.0 : 0.0;
    }

    const std::uint64_t* row_words(int v) const {
        if (v < 0 || v >= height_) throw std::out_of_range("EventFrame: row out of range");
        return bits_.data() + static_cast<std::size_t>(v) * words_per_row_;
    }

    std::size_t words_per_row() const { return words_per_row_; }

    bool operator==(const EventFrame& o) const {
        return width_ == o.width_ && height_ == o.height_ &&
               t_start_us_ == o.t_start_us_ && tau_us_ == o.tau_us_ && bits_ == o.bits_;
    }

private:
    void check_coords(int u, int v) const {
        if (u < 0 || u >= width_ || v < 0 || v >= height_)
            throw std::out_of_range("EventFrame: pixel out of range");
    }
    std::uint64_t& word(int u, int v) {
        return bits_[static_cast<std::size_t>(v) * words_per_row_ + static_cast<std::size_t>(u) / 64];
    }
    const std::uint64_t& word(int u, int v) const {
        return bits_[static_cast<std::size_t>(v) * words_per_row_ + static_cast<std::size_t>(u) / 64];
    }

    int width_;
    int height_;
    std::int64_t t_start_us_;
    std::int64_t tau_us_;
    std::size_t words_per_row_;
    std::vector<std::uint64_t> bits_;
};

/// Horizontally binned frame: each value counts set pixels of the source row
/// over a bin of `factor` columns (the last bin may be narrower). Values lie
/// in [0, factor].
struct CompressedFrame {
    int cols = 0;
    int height = 0;
    int factor = 1;
    std::vector<std::uint16_t> values;

    std::uint16_t at(int c, int r) const {
        return values[static_cast<std::size_t>(r) * static_cast<std::size_t>(cols) +
                      static_cast<std::size_t>(c)];
    }

    void copy_row_real(int r, double* dst) const {
        const std::uint16_t* row = values.data() +
            static_cast<std::size_t>(r) * static_cast<std::size_t>(cols);
        for (int c = 0; c < cols; ++c) dst[c] = static_cast<double>(row[c]);
    }

    bool operator==(const CompressedFrame&) const = default;
};

/// Builds a binary frame from the events falling in [t_start, t_start + tau).
/// Events outside the window are skipped; events outside the frame geometry
/// are rejected wherever they sit, since they signal a stream/camera mismatch.
inline EventFrame accumulate(std::span<const Event> events, std::int64_t t_start_us,
                             std::int64_t tau_us, int width, int height) {
    EventFrame frame(width, height, t_start_us, tau_us);
    for (const Event& e : events) {
        if (e.u < 0 || e.u >= width || e.v < 0 || e.v >= height)
            throw std::invalid_argument(
                "accumulate: event at (" + std::to_string(e.u) + "," + std::to_string(e.v) +
                ") outside " + std::to_string(width) + "x" + std::to_string(height) + " geometry");
        if (e.t_us >= t_start_us && e.t_us < t_start_us + tau_us)
            frame.set(e.u, e.v);
    }
    return frame;
}

/// Nearest-neighbour subsampling to target_w x target_h. Pixel (u', v') of the
/// result takes the value of source pixel (floor(u'*w/tw), floor(v'*h/th)).
inline EventFrame downsample(const EventFrame& f, int target_w, int target_h) {
    if (target_w <= 0 || target_h <= 0 || target_w > f.width() || target_h > f.height())
        throw std::invalid_argument("downsample: target must be positive and not exceed source");
    EventFrame out(target_w, target_h, f.t_start_us(), f.tau_us());
    const auto w = static_cast<std::int64_t>(f.width());
    const auto h = static_cast<std::int64_t>(f.height());
    for (int v = 0; v < target_h; ++v) {
        const int sv = static_cast<int>(static_cast<std::int64_t>(v) * h / target_h);
        for (int u = 0; u < target_w; ++u) {
            const int su = static_cast<int>(static_cast<std::int64_t>(u) * w / target_w);
            if (f.test(su, sv)) out.set(u, v);
        }
    }
    return out;
}

/// Column compression: sums each row over bins of `factor` columns.
inline CompressedFrame compress(const EventFrame& f, int factor) {
    if (factor < 1) throw std::invalid_argument("compress: factor must be >= 1");
    if (factor > f.width()) throw std::invalid_argument("compress: factor exceeds frame width");
    CompressedFrame out;
    out.factor = factor;
    out.height = f.height();
    out.cols = (f.width() + factor - 1) / factor;
    out.values.resize(static_cast<std::size_t>(out.cols) * static_cast<std::size_t>(out.height));
    for (int r = 0; r < out.height; ++r) {
        for (int c = 0; c < out.cols; ++c) {
            const int begin = c * factor;
            const int end = begin + factor < f.width() ? begin + factor : f.width();
            out.values[static_cast<std::size_t>(r) * out.cols + c] =
                static_cast<std::uint16_t>(f.count_in_row(r, begin, end));
        }
    }
    return out;
}

/// Events plus the camera geometry they were recorded with.
struct EventStream {
    int width = 0;
    int height = 0;
    std::vector<Event> events;
};

/// Reads the plain-text event stream format:
///   # evtr-events v1 width=<w> height=<h>
///   t_us,u,v,p
/// Comment lines start with '#', timestamps must be non-decreasing.
inline EventStream read_event_stream(std::istream& in) {
    std::string line;
    if (!std::getline(in, line))
        throw std::runtime_error("event stream: empty input");
    EventStream s;
    if (std::sscanf(line.c_str(), "# evtr-events v1 width=%d height=%d", &s.width, &s.height) != 2)
        throw std::runtime_error("event stream: bad header: " + line);
    if (s.width <= 0 || s.height <= 0)
        throw std::runtime_error("event stream: non-positive geometry in header");
    std::int64_t prev_t = -1;
    std::size_t line_no = 1;
    while (std::getline(in, line)) {
        ++line_no;
        if (line.empty() || line[0] == '#') continue;
        Event e;
        long long t = 0;
        if (std::sscanf(line.c_str(), "%lld,%d,%d,%d", &t, &e.u, &e.v, &e.p) != 4)
            throw std::runtime_error("event stream: bad record at line " + std::to_string(line_no));
        e.t_us = t;
        if (e.t_us < 0)
            throw std::runtime_error("event stream: negative timestamp at line " + std::to_string(line_no));
        if (e.t_us < prev_t)
            throw std::runtime_error("event stream: timestamps not sorted at line " + std::to_string(line_no));
        if (e.u < 0 || e.u >= s.width || e.v < 0 || e.v >= s.height)
            throw std::runtime_error("event stream: coordinates outside geometry at line " + std::to_string(line_no));
        if (e.p != 1 && e.p != -1)
            throw std::runtime_error("event stream: polarity must be 1 or -1 at line " + std::to_string(line_no));
        prev_t = e.t_us;
        s.events.push_back(e);
    }
    return s;
}

inline void write_event_stream(std::ostream& out, const EventStream& s) {
    out << "# evtr-events v1 width=" << s.width << " height=" << s.height << "\n";
    for (const Event& e : s.events)
        out << e.t_us << ',' << e.u << ',' << e.v << ',' << e.p << "\n";
}

} // namespace evtr
