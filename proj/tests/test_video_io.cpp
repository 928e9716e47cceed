#include <catch2/catch_amalgamated.hpp>

#include <cstdio>
#include <filesystem>
#include <random>

#include "nnvc/video_io.hpp"

using namespace nnvc;

namespace {

std::string tmp_path(const std::string& name) {
    return (std::filesystem::temp_directory_path() / name).string();
}

VideoSequence random_rgb_video(int w, int h, int n, std::mt19937& rng) {
    VideoSequence seq;
    seq.width = w;
    seq.height = h;
    seq.format = PixelFormat::RGB24;
    for (int i = 0; i < n; ++i) {
        std::vector<uint8_t> f(size_t(w) * h * 3);
        for (auto& b : f) b = uint8_t(rng());
        seq.frames.push_back(std::move(f));
    }
    return seq;
}

double psnr_bytes(const std::vector<uint8_t>& a, const std::vector<uint8_t>& b) {
    REQUIRE(a.size() == b.size());
    double mse = 0;
    for (size_t i = 0; i < a.size(); ++i) {
        double d = double(a[i]) - double(b[i]);
        mse += d * d;
    }
    mse /= double(a.size());
    if (mse == 0) return 99.0;
    return 10.0 * std::log10(255.0 * 255.0 / mse);
}

} // namespace

TEST_CASE("raw yuv round-trips byte-identically") {
    std::mt19937 rng(11);
    VideoSequence rgb = random_rgb_video(16, 16, 2, rng);
    VideoSequence yuv;
    yuv.width = 16;
    yuv.height = 16;
    yuv.format = PixelFormat::YUV420;
    for (const auto& f : rgb.frames) yuv.frames.push_back(rgb24_to_yuv420(f, 16, 16));

    std::string path = tmp_path("nnvc_io_test.yuv");
    write_video(yuv, path);
    VideoSequence back = read_video(path);
    CHECK(back.width == 16);
    CHECK(back.height == 16);
    CHECK(back.frame_count() == 2);
    CHECK(back.format == PixelFormat::YUV420);
    for (int i = 0; i < 2; ++i) CHECK(back.frames[size_t(i)] == yuv.frames[size_t(i)]);
    std::remove(path.c_str());
    std::remove((path + ".meta").c_str());
}

TEST_CASE("rgb raw file reads with correct dims and count") {
    std::mt19937 rng(12);
    VideoSequence rgb = random_rgb_video(16, 16, 2, rng);
    std::string path = tmp_path("nnvc_io_test.rgb");
    write_video(rgb, path);
    VideoSequence back = read_video(path);
    CHECK(back.width == 16);
    CHECK(back.height == 16);
    CHECK(back.frame_count() == 2);
    for (int i = 0; i < 2; ++i) CHECK(back.frames[size_t(i)] == rgb.frames[size_t(i)]);
    std::remove(path.c_str());
    std::remove((path + ".meta").c_str());
}

TEST_CASE("yuv->rgb->yuv conversion keeps more than 49 dB on camera-like frames") {
    std::mt19937 rng(13);
    // natural-video stand-in: random color per 2x2 block (pixel-rate noise is
    // not in this conversion class; chroma subsampling would dominate)
    for (int iter = 0; iter < 3; ++iter) {
        VideoSequence small = random_rgb_video(32, 32, 1, rng);
        std::vector<uint8_t> f(size_t(64) * 64 * 3);
        for (int y = 0; y < 64; ++y)
            for (int x = 0; x < 64; ++x)
                for (int c = 0; c < 3; ++c)
                    f[(size_t(y) * 64 + x) * 3 + c] =
                        small.frames[0][(size_t(y / 2) * 32 + x / 2) * 3 + c];
        auto yuv = rgb24_to_yuv420(f, 64, 64);
        auto rgb2 = yuv420_to_rgb24(yuv, 64, 64);
        auto yuv2 = rgb24_to_yuv420(rgb2, 64, 64);
        CHECK(psnr_bytes(yuv, yuv2) > 49.0);
    }
}

TEST_CASE("truncated video file is reported") {
    std::mt19937 rng(14);
    VideoSequence rgb = random_rgb_video(8, 8, 2, rng);
    std::string path = tmp_path("nnvc_io_trunc.rgb");
    write_video(rgb, path);
    // claim 3 frames in the sidecar
    std::ofstream meta(path + ".meta");
    meta << "8 8 3\n";
    meta.close();
    CHECK_THROWS_AS(read_video(path), Error);
    std::remove(path.c_str());
    std::remove((path + ".meta").c_str());
}

TEST_CASE("tensor bridge round-trips 8-bit values") {
    std::mt19937 rng(15);
    VideoSequence rgb = random_rgb_video(9, 7, 1, rng);
    auto t = frame_to_tensor<float>(rgb.frames[0], 9, 7);
    CHECK(t.dims == std::vector<int>({3, 7, 9}));
    auto back = tensor_to_frame(t);
    CHECK(back == rgb.frames[0]);
}

TEST_CASE("unknown extension is rejected") {
    CHECK_THROWS_AS(read_video("/nonexistent/foo.mp4"), IoError);
}
