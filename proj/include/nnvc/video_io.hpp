#pragma once

#include <fstream>
#include <sstream>
#include <string>
#include <vector>

#include "nnvc/tensor.hpp"

namespace nnvc {

enum class PixelFormat { RGB24, YUV420 };

// Raw 8-bit video. RGB24 frames are interleaved; YUV420 frames are planar
// with chroma planes of ceil(w/2) x ceil(h/2).
struct VideoSequence {
    int width = 0;
    int height = 0;
    PixelFormat format = PixelFormat::RGB24;
    std::vector<std::vector<uint8_t>> frames;

    int frame_count() const { return int(frames.size()); }

    size_t frame_bytes() const {
        if (format == PixelFormat::RGB24) return size_t(width) * height * 3;
        size_t cw = size_t((width + 1) / 2), ch = size_t((height + 1) / 2);
        return size_t(width) * height + 2 * cw * ch;
    }
};

// ----------------------------------------------------------- color conversion
// BT.601 full-range. The conversion is lossy (rounding, chroma subsampling).

namespace detail {
inline uint8_t clamp_u8(double v) {
    return uint8_t(std::min(std::max(std::lround(v), 0l), 255l));
}
} // namespace detail

inline std::vector<uint8_t> yuv420_to_rgb24(const std::vector<uint8_t>& yuv, int w, int h) {
    int cw = (w + 1) / 2, ch = (h + 1) / 2;
    check(int(yuv.size()) == w * h + 2 * cw * ch, "yuv frame size mismatch");
    const uint8_t* Y = yuv.data();
    const uint8_t* U = Y + w * h;
    const uint8_t* V = U + cw * ch;
    std::vector<uint8_t> rgb(size_t(w) * h * 3);
    for (int y = 0; y < h; ++y)
        for (int x = 0; x < w; ++x) {
            double fy = Y[y * w + x];
            double cb = U[(y / 2) * cw + x / 2] - 128.0;
            double cr = V[(y / 2) * cw + x / 2] - 128.0;
            size_t o = (size_t(y) * w + x) * 3;
            rgb[o + 0] = detail::clamp_u8(fy + 1.402 * cr);
            rgb[o + 1] = detail::clamp_u8(fy - 0.344136 * cb - 0.714136 * cr);
            rgb[o + 2] = detail::clamp_u8(fy + 1.772 * cb);
        }
    return rgb;
}

inline std::vector<uint8_t> rgb24_to_yuv420(const std::vector<uint8_t>& rgb, int w, int h) {
    check(int(rgb.size()) == w * h * 3, "rgb frame size mismatch");
    int cw = (w + 1) / 2, ch = (h + 1) / 2;
    std::vector<uint8_t> yuv(size_t(w) * h + 2 * size_t(cw) * ch);
    uint8_t* Y = yuv.data();
    uint8_t* U = Y + w * h;
    uint8_t* V = U + cw * ch;
    // full-resolution chroma accumulated per 2x2 block
    for (int by = 0; by < ch; ++by)
        for (int bx = 0; bx < cw; ++bx) {
            double su = 0, sv = 0;
            int cnt = 0;
            for (int dy = 0; dy < 2; ++dy)
                for (int dx = 0; dx < 2; ++dx) {
                    int y = 2 * by + dy, x = 2 * bx + dx;
                    if (y >= h || x >= w) continue;
                    size_t o = (size_t(y) * w + x) * 3;
                    double r = rgb[o], g = rgb[o + 1], b = rgb[o + 2];
                    su += -0.168736 * r - 0.331264 * g + 0.5 * b;
                    sv += 0.5 * r - 0.418688 * g - 0.081312 * b;
                    ++cnt;
                }
            U[by * cw + bx] = detail::clamp_u8(su / cnt + 128.0);
            V[by * cw + bx] = detail::clamp_u8(sv / cnt + 128.0);
        }
    for (int y = 0; y < h; ++y)
        for (int x = 0; x < w; ++x) {
            size_t o = (size_t(y) * w + x) * 3;
            Y[y * w + x] =
                detail::clamp_u8(0.299 * rgb[o] + 0.587 * rgb[o + 1] + 0.114 * rgb[o + 2]);
        }
    return yuv;
}

// ------------------------------------------------------------------ file io
// Raw files carry no header; a one-line text sidecar "<path>.meta" holds
// "width height frame_count". Format comes from the extension (.rgb / .yuv).

inline PixelFormat format_from_path(const std::string& path) {
    auto dot = path.rfind('.');
    std::string ext = dot == std::string::npos ? "" : path.substr(dot + 1);
    if (ext == "rgb") return PixelFormat::RGB24;
    if (ext == "yuv") return PixelFormat::YUV420;
    throw IoError("cannot infer raw video format from extension: " + path);
}

inline VideoSequence read_video(const std::string& path) {
    PixelFormat fmt = format_from_path(path);
    std::ifstream meta(path + ".meta");
    check(bool(meta), "missing sidecar: " + path + ".meta");
    VideoSequence seq;
    seq.format = fmt;
    int frame_count = 0;
    meta >> seq.width >> seq.height >> frame_count;
    check(bool(meta) && seq.width >= 1 && seq.height >= 1 && frame_count >= 1,
          "bad sidecar contents: " + path + ".meta");

    std::ifstream f(path, std::ios::binary);
    check(bool(f), "cannot open: " + path);
    size_t fb = seq.frame_bytes();
    for (int i = 0; i < frame_count; ++i) {
        std::vector<uint8_t> frame(fb);
        f.read(reinterpret_cast<char*>(frame.data()), std::streamsize(fb));
        check(f.gcount() == std::streamsize(fb), "truncated video file: " + path);
        seq.frames.push_back(std::move(frame));
    }
    return seq;
}

inline void write_video(const VideoSequence& seq, const std::string& path) {
    PixelFormat fmt = format_from_path(path);
    std::ofstream f(path, std::ios::binary);
    check(bool(f), "cannot open for write: " + path);
    for (const auto& frame : seq.frames) {
        std::vector<uint8_t> out;
        const std::vector<uint8_t>* p = &frame;
        if (fmt != seq.format) {
            out = fmt == PixelFormat::RGB24 ? yuv420_to_rgb24(frame, seq.width, seq.height)
                                            : rgb24_to_yuv420(frame, seq.width, seq.height);
            p = &out;
        }
        f.write(reinterpret_cast<const char*>(p->data()), std::streamsize(p->size()));
    }
    check(bool(f), "write failed: " + path);
    std::ofstream meta(path + ".meta");
    check(bool(meta), "cannot write sidecar: " + path + ".meta");
    meta << seq.width << " " << seq.height << " " << seq.frame_count() << "\n";
}

// Binary PPM (P6), used for frame-image datasets.
inline void write_ppm(const std::vector<uint8_t>& rgb, int w, int h, const std::string& path) {
    check(int(rgb.size()) == w * h * 3, "write_ppm: size mismatch");
    std::ofstream f(path, std::ios::binary);
    check(bool(f), "cannot open for write: " + path);
    f << "P6\n" << w << " " << h << "\n255\n";
    f.write(reinterpret_cast<const char*>(rgb.data()), std::streamsize(rgb.size()));
    check(bool(f), "write failed: " + path);
}

inline std::vector<uint8_t> read_ppm(const std::string& path, int& w, int& h) {
    std::ifstream f(path, std::ios::binary);
    check(bool(f), "cannot open: " + path);
    std::string magic;
    int maxval = 0;
    f >> magic >> w >> h >> maxval;
    check_parse(magic == "P6" && w >= 1 && h >= 1 && maxval == 255, "unsupported ppm: " + path);
    f.get(); // single whitespace after header
    std::vector<uint8_t> rgb(size_t(w) * h * 3);
    f.read(reinterpret_cast<char*>(rgb.data()), std::streamsize(rgb.size()));
    check(f.gcount() == std::streamsize(rgb.size()), "truncated ppm: " + path);
    return rgb;
}

// ------------------------------------------------- frame <-> tensor bridges

// RGB24 bytes -> (3,H,W) floats in [0,1]
template <typename S>
Tensor<S> frame_to_tensor(const std::vector<uint8_t>& rgb, int w, int h) {
    check(int(rgb.size()) == w * h * 3, "frame_to_tensor: size mismatch");
    Tensor<S> t({3, h, w});
    for (int y = 0; y < h; ++y)
        for (int x = 0; x < w; ++x)
            for (int c = 0; c < 3; ++c)
                t.at(c, y, x) = S(rgb[(size_t(y) * w + x) * 3 + c]) / S(255);
    return t;
}

template <typename S>
std::vector<uint8_t> tensor_to_frame(const Tensor<S>& t) {
    check(t.rank() == 3 && t.dim(0) == 3, "tensor_to_frame: expected (3,H,W)");
    int h = t.dim(1), w = t.dim(2);
    std::vector<uint8_t> rgb(size_t(w) * h * 3);
    for (int y = 0; y < h; ++y)
        for (int x = 0; x < w; ++x)
            for (int c = 0; c < 3; ++c)
                rgb[(size_t(y) * w + x) * 3 + c] = detail::clamp_u8(double(t.at(c, y, x)) * 255.0);
    return rgb;
}

// Frame of any supported format -> RGB float tensor.
template <typename S>
Tensor<S> frame_to_rgb_tensor(const VideoSequence& seq, int index) {
    const auto& fr = seq.frames.at(size_t(index));
    if (seq.format == PixelFormat::RGB24) return frame_to_tensor<S>(fr, seq.width, seq.height);
    return frame_to_tensor<S>(yuv420_to_rgb24(fr, seq.width, seq.height), seq.width, seq.height);
}

} // namespace nnvc
