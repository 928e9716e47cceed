#pragma once

#include <iomanip>
#include <sstream>

#include "nnvc/bitstream.hpp"
#include "nnvc/video_io.hpp"

namespace nnvc {

// PSNR on 8-bit samples, MAX = 255; identical inputs report the 99 dB cap.
inline double psnr_u8(const std::vector<uint8_t>& a, const std::vector<uint8_t>& b) {
    check(a.size() == b.size() && !a.empty(), "psnr_u8: size mismatch");
    double mse = 0;
    for (size_t i = 0; i < a.size(); ++i) {
        double d = double(a[i]) - double(b[i]);
        mse += d * d;
    }
    mse /= double(a.size());
    if (mse <= 0) return 99.0;
    return std::min(10.0 * std::log10(255.0 * 255.0 / mse), 99.0);
}

// Score = -(loss) = ms_ssim - lambda * bpp
inline double score(double ms_ssim, double bpp_value, double lambda) {
    return ms_ssim - lambda * bpp_value;
}

struct FrameMetrics {
    int index = 0;
    char type = 'I'; // 'I' intra, 'P' inter
    double ms_ssim = 0;
    double psnr = 0;
    size_t payload_bytes = 0;
};

struct MetricsReport {
    std::string name;
    double lambda = 0;
    double bpp = 0; // from total file size
    double ms_ssim = 0;
    double psnr = 0;
    double score_value = 0;
    double combined_size_mb_value = 0;
    size_t stream_bytes = 0;
    std::vector<FrameMetrics> frames;

    void finalize(size_t total_bytes, int width, int height, int frame_count,
                  size_t decoder_bytes) {
        stream_bytes = total_bytes;
        bpp = nnvc::bpp(double(total_bytes), width, height, frame_count);
        double ms = 0, ps = 0;
        for (const auto& f : frames) {
            ms += f.ms_ssim;
            ps += f.psnr;
        }
        if (!frames.empty()) {
            ms_ssim = ms / double(frames.size());
            psnr = ps / double(frames.size());
        }
        score_value = score(ms_ssim, bpp, lambda);
        combined_size_mb_value = combined_size_mb(double(decoder_bytes), double(total_bytes));
    }

    // structured line records, one per frame plus one aggregate
    std::string to_text() const {
        std::ostringstream os;
        os << std::setprecision(6) << std::fixed;
        for (const auto& f : frames)
            os << "frame index=" << f.index << " type=" << f.type << " msssim=" << f.ms_ssim
               << " psnr=" << f.psnr << " payload_bytes=" << f.payload_bytes << "\n";
        os << "video name=" << (name.empty() ? "-" : name) << " lambda=" << lambda
           << " bpp=" << bpp << " msssim=" << ms_ssim << " psnr=" << psnr
           << " score=" << score_value << " combined_mb=" << combined_size_mb_value
           << " stream_bytes=" << stream_bytes << "\n";
        return os.str();
    }
};

} // namespace nnvc
