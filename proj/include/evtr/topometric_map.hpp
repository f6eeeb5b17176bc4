#pragma once

#include <cmath>
#include <cstdint>
#include <cstring>
#include <fstream>
#include <iterator>
#include <stdexcept>
#include <string>
#include <vector>

#include "evtr/event_frame.hpp"
#include "evtr/fft_correlation.hpp"
#include "evtr/geometry.hpp"

namespace evtr {

struct MapFormatError : std::runtime_error {
    using std::runtime_error::runtime_error;
};
struct MapTruncationError : std::runtime_error {
    using std::runtime_error::runtime_error;
};
struct MapChecksumError : std::runtime_error {
    using std::runtime_error::runtime_error;
};

/// CRC-32 (reflected, polynomial 0xEDB88320) over a byte range.
inline std::uint32_t crc32(const std::uint8_t* data, std::size_t len) {
    static const auto table = [] {
        std::vector<std::uint32_t> t(256);
        for (std::uint32_t i = 0; i < 256; ++i) {
            std::uint32_t c = i;
            for (int k = 0; k < 8; ++k) c = (c & 1) ? 0xEDB88320u ^ (c >> 1) : c >> 1;
            t[i] = c;
        }
        return t;
    }();
    std::uint32_t crc = 0xFFFFFFFFu;
    for (std::size_t i = 0; i < len; ++i)
        crc = table[(crc ^ data[i]) & 0xFFu] ^ (crc >> 8);
    return crc ^ 0xFFFFFFFFu;
}

/// True when the robot has moved far enough from the last recorded pose to
/// deserve a new map node: translation >= delta_d or |heading change| >=
/// delta_alpha.
inline bool should_record(const Pose2D& last, const Pose2D& current, double delta_d,
                          double delta_alpha) {
    const double dx = current.x - last.x, dy = current.y - last.y;
    if (std::sqrt(dx * dx + dy * dy) >= delta_d) return true;
    return std::abs(wrap_angle(current.theta - last.theta)) >= delta_alpha;
}

struct MapNode {
    EventFrame frame;
    Pose2D pose;
    int index = 0;
};

/// Ordered list of (event frame, odometry pose) nodes recorded along the
/// taught path, plus the camera/recording geometry needed to repeat it.
///
/// The recording intervals and field of view are quantized to the file
/// format's units (mm, millirad, millideg) at construction, which keeps
/// save/load exact.
class TopometricMap {
public:
    TopometricMap(int width, int height, std::int64_t tau_us, double delta_d_m,
                  double delta_alpha_rad, double fov_deg) {
        if (width <= 0 || width > 65535 || height <= 0 || height > 65535)
            throw std::invalid_argument("TopometricMap: width/height out of range");
        if (tau_us <= 0 || tau_us > 0xFFFFFFFFll)
            throw std::invalid_argument("TopometricMap: tau out of range");
        if (delta_d_m <= 0.0 || delta_alpha_rad <= 0.0 || fov_deg <= 0.0)
            throw std::invalid_argument("TopometricMap: recording intervals and fov must be positive");
        width_ = width;
        height_ = height;
        tau_us_ = static_cast<std::uint32_t>(tau_us);
        delta_d_mm_ = static_cast<std::uint32_t>(std::llround(delta_d_m * 1e3));
        delta_alpha_mrad_ = static_cast<std::uint32_t>(std::llround(delta_alpha_rad * 1e3));
        fov_mdeg_ = static_cast<std::uint32_t>(std::llround(fov_deg * 1e3));
        if (delta_d_mm_ == 0 || delta_alpha_mrad_ == 0 || fov_mdeg_ == 0)
            throw std::invalid_argument("TopometricMap: interval quantizes to zero");
    }

    int width() const { return width_; }
    int height() const { return height_; }
    std::int64_t tau_us() const { return tau_us_; }
    double delta_d() const { return delta_d_mm_ / 1e3; }
    double delta_alpha() const { return delta_alpha_mrad_ / 1e3; }
    double fov_deg() const { return fov_mdeg_ / 1e3; }

    std::size_t size() const { return nodes_.size(); }
    bool empty() const { return nodes_.empty(); }
    const MapNode& node(std::size_t i) const { return nodes_.at(i); }
    const std::vector<MapNode>& nodes() const { return nodes_; }

    void record(const EventFrame& frame, const Pose2D& pose) {
        if (frame.width() != width_ || frame.height() != height_ ||
            frame.tau_us() != tau_us_)
            throw std::invalid_argument("TopometricMap::record: frame geometry mismatch");
        nodes_.push_back({frame, pose, static_cast<int>(nodes_.size())});
    }

    /// Candidate window [k-s, k+s] clamped to the map bounds.
    SearchSpace<EventFrame> search_space(int k, int s) const {
        if (nodes_.empty()) throw std::logic_error("search_space: empty map");
        if (k < 0 || k >= static_cast<int>(nodes_.size()))
            throw std::out_of_range("search_space: goal index out of range");
        if (s < 0) throw std::invalid_argument("search_space: negative half-width");
        const int lo = k - s > 0 ? k - s : 0;
        const int hi_excl = k + s + 1 < static_cast<int>(nodes_.size())
                                ? k + s + 1
                                : static_cast<int>(nodes_.size());
        SearchSpace<EventFrame> sp;
        sp.k = k;
        sp.first_index = lo;
        sp.s = s;
        sp.candidates.reserve(static_cast<std::size_t>(hi_excl - lo));
        for (int i = lo; i < hi_excl; ++i) sp.candidates.push_back(&nodes_[static_cast<std::size_t>(i)].frame);
        return sp;
    }

    /// Content equality: geometry, poses, and frame bitmaps. Frame capture
    /// times are not persisted by the container and do not participate.
    bool operator==(const TopometricMap& o) const {
        if (width_ != o.width_ || height_ != o.height_ || tau_us_ != o.tau_us_ ||
            delta_d_mm_ != o.delta_d_mm_ || delta_alpha_mrad_ != o.delta_alpha_mrad_ ||
            fov_mdeg_ != o.fov_mdeg_ || nodes_.size() != o.nodes_.size())
            return false;
        for (std::size_t i = 0; i < nodes_.size(); ++i) {
            const MapNode& a = nodes_[i];
            const MapNode& b = o.nodes_[i];
            if (a.pose.x != b.pose.x || a.pose.y != b.pose.y || a.pose.theta != b.pose.theta)
                return false;
            for (int r = 0; r < height_; ++r) {
                const std::size_t wpr = a.frame.words_per_row();
                if (std::memcmp(a.frame.row_words(r), b.frame.row_words(r),
                                wpr * sizeof(std::uint64_t)) != 0)
                    return false;
            }
        }
        return true;
    }

    std::uint32_t delta_d_mm() const { return delta_d_mm_; }
    std::uint32_t delta_alpha_mrad() const { return delta_alpha_mrad_; }
    std::uint32_t fov_mdeg() const { return fov_mdeg_; }

private:
    int width_ = 0;
    int height_ = 0;
    std::uint32_t tau_us_ = 0;
    std::uint32_t delta_d_mm_ = 0;
    std::uint32_t delta_alpha_mrad_ = 0;
    std::uint32_t fov_mdeg_ = 0;
    std::vector<MapNode> nodes_;
};

namespace detail {

inline void put_u16(std::vector<std::uint8_t>& b, std::uint16_t v) {
    b.push_back(static_cast<std::uint8_t>(v & 0xFF));
    b.push_back(static_cast<std::uint8_t>(v >> 8));
}
inline void put_u32(std::vector<std::uint8_t>& b, std::uint32_t v) {
    for (int i = 0; i < 4; ++i) b.push_back(static_cast<std::uint8_t>((v >> (8 * i)) & 0xFF));
}
inline void put_f64(std::vector<std::uint8_t>& b, double v) {
    std::uint64_t u;
    std::memcpy(&u, &v, 8);
    for (int i = 0; i < 8; ++i) b.push_back(static_cast<std::uint8_t>((u >> (8 * i)) & 0xFF));
}
inline std::uint16_t get_u16(const std::uint8_t* p) {
    return static_cast<std::uint16_t>(p[0] | (p[1] << 8));
}
inline std::uint32_t get_u32(const std::uint8_t* p) {
    return static_cast<std::uint32_t>(p[0]) | (static_cast<std::uint32_t>(p[1]) << 8) |
           (static_cast<std::uint32_t>(p[2]) << 16) | (static_cast<std::uint32_t>(p[3]) << 24);
}
inline double get_f64(const std::uint8_t* p) {
    std::uint64_t u = 0;
    for (int i = 0; i < 8; ++i) u |= static_cast<std::uint64_t>(p[i]) << (8 * i);
    double v;
    std::memcpy(&v, &u, 8);
    return v;
}

} // namespace detail

inline constexpr char kMapMagic[4] = {'E', 'V', 'T', 'R'};
inline constexpr std::uint16_t kMapVersion = 1;
inline constexpr std::size_t kMapHeaderBytes = 4 + 2 + 4 + 2 + 2 + 4 + 4 + 4 + 4;

/// Serializes the map: magic, version, header, K node records (pose as three
/// little-endian f64, frame rows bit-packed LSB-first and padded to a byte
/// boundary), then a CRC32 of everything before it.
inline std::vector<std::uint8_t> serialize_map(const TopometricMap& m) {
    std::vector<std::uint8_t> buf;
    const int w = m.width(), h = m.height();
    const std::size_t row_bytes = (static_cast<std::size_t>(w) + 7) / 8;
    buf.reserve(kMapHeaderBytes + m.size() * (24 + row_bytes * static_cast<std::size_t>(h)) + 4);
    buf.insert(buf.end(), kMapMagic, kMapMagic + 4);
    detail::put_u16(buf, kMapVersion);
    detail::put_u32(buf, static_cast<std::uint32_t>(m.size()));
    detail::put_u16(buf, static_cast<std::uint16_t>(w));
    detail::put_u16(buf, static_cast<std::uint16_t>(h));
    detail::put_u32(buf, static_cast<std::uint32_t>(m.tau_us()));
    detail::put_u32(buf, m.delta_d_mm());
    detail::put_u32(buf, m.delta_alpha_mrad());
    detail::put_u32(buf, m.fov_mdeg());
    for (const MapNode& n : m.nodes()) {
        detail::put_f64(buf, n.pose.x);
        detail::put_f64(buf, n.pose.y);
        detail::put_f64(buf, n.pose.theta);
        for (int r = 0; r < h; ++r) {
            std::uint8_t byte = 0;
            int bit = 0;
            for (int u = 0; u < w; ++u) {
                if (n.frame.test(u, r)) byte |= static_cast<std::uint8_t>(1u << bit);
                if (++bit == 8) {
                    buf.push_back(byte);
                    byte = 0;
                    bit = 0;
                }
            }
            if (bit != 0) buf.push_back(byte);
        }
    }
    detail::put_u32(buf, crc32(buf.data(), buf.size()));
    return buf;
}

inline TopometricMap deserialize_map(const std::uint8_t* data, std::size_t size) {
    if (size < kMapHeaderBytes)
        throw MapFormatError("map file: shorter than header");
    if (std::memcmp(data, kMapMagic, 4) != 0)
        throw MapFormatError("map file: bad magic bytes");
    const std::uint16_t version = detail::get_u16(data + 4);
    if (version != kMapVersion)
        throw MapFormatError("map file: unsupported version " + std::to_string(version));
    const std::uint32_t count = detail::get_u32(data + 6);
    const int w = detail::get_u16(data + 10);
    const int h = detail::get_u16(data + 12);
    const std::uint32_t tau = detail::get_u32(data + 14);
    const std::uint32_t dd_mm = detail::get_u32(data + 18);
    const std::uint32_t da_mrad = detail::get_u32(data + 22);
    const std::uint32_t fov_mdeg = detail::get_u32(data + 26);
    if (w == 0 || h == 0 || tau == 0 || dd_mm == 0 || da_mrad == 0 || fov_mdeg == 0)
        throw MapFormatError("map file: zero field in header");
    const std::size_t row_bytes = (static_cast<std::size_t>(w) + 7) / 8;
    const std::size_t node_bytes = 24 + row_bytes * static_cast<std::size_t>(h);
    const std::size_t expected = kMapHeaderBytes + node_bytes * count + 4;
    if (size < expected) {
        const std::size_t body = size > kMapHeaderBytes ? size - kMapHeaderBytes : 0;
        const std::size_t complete = body / node_bytes;
        throw MapTruncationError("map file: truncated in node " + std::to_string(complete) +
                                 " of " + std::to_string(count));
    }
    if (size > expected)
        throw MapFormatError("map file: trailing bytes after checksum");
    const std::uint32_t stored_crc = detail::get_u32(data + size - 4);
    if (crc32(data, size - 4) != stored_crc)
        throw MapChecksumError("map file: checksum mismatch");

    TopometricMap m(w, h, tau, dd_mm / 1e3, da_mrad / 1e3, fov_mdeg / 1e3);
    const std::uint8_t* p = data + kMapHeaderBytes;
    for (std::uint32_t i = 0; i < count; ++i) {
        Pose2D pose{detail::get_f64(p), detail::get_f64(p + 8), detail::get_f64(p + 16)};
        p += 24;
        EventFrame frame(w, h, 0, tau);
        for (int r = 0; r < h; ++r) {
            for (int u = 0; u < w; ++u)
                if ((p[static_cast<std::size_t>(u) / 8] >> (static_cast<unsigned>(u) & 7u)) & 1u)
                    frame.set(u, r);
            p += row_bytes;
        }
        m.record(frame, pose);
    }
    return m;
}

inline void save_map(const TopometricMap& m, const std::string& path) {
    const std::vector<std::uint8_t> buf = serialize_map(m);
    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    if (!out) throw std::runtime_error("save_map: cannot open " + path);
    out.write(reinterpret_cast<const char*>(buf.data()), static_cast<std::streamsize>(buf.size()));
    if (!out) throw std::runtime_error("save_map: write failed for " + path);
}

inline TopometricMap load_map(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw std::runtime_error("load_map: cannot open " + path);
    std::vector<std::uint8_t> buf((std::istreambuf_iterator<char>(in)),
                                  std::istreambuf_iterator<char>());
    return deserialize_map(buf.data(), buf.size());
}

} // namespace evtr
