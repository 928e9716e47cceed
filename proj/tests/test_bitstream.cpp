#include <catch2/catch_amalgamated.hpp>

#include <random>

#include "nnvc/bitstream.hpp"

using namespace nnvc;

namespace {

Bitstream sample_stream() {
    Bitstream bs;
    bs.header.width = 64;
    bs.header.height = 48;
    bs.header.frame_count = 3;
    bs.header.intra_period = 8;
    bs.header.model_hash = 0xDEADBEEF;

    OmpChunk omp;
    omp.quant_step = 0.01f;
    omp.offset = 0.9f;
    omp.codes = {0, 17, 255, 3};
    bs.omp = omp;

    FrameChunk f0;
    f0.frame_index = 0;
    f0.type = kFrameIntra;
    f0.payload = std::string("\x01\x02\x03", 3);
    bs.frames.push_back(f0);

    FrameChunk f1;
    f1.frame_index = 2;
    f1.type = kFrameInter;
    f1.scalars = {scalar_to_q16(1.0f), scalar_to_q16(0.0f), scalar_to_q16(-0.5f),
                  scalar_to_q16(0.25f)};
    f1.payload = std::string(100, '\x7f');
    bs.frames.push_back(f1);

    FrameChunk f2;
    f2.frame_index = 1;
    f2.type = kFrameIntraWithOmp;
    OmpChunk fomp;
    fomp.quant_step = 0.5f;
    fomp.offset = -1.0f;
    fomp.codes = {9};
    f2.omp = fomp;
    f2.payload = "";
    bs.frames.push_back(f2);
    return bs;
}

void check_equal(const Bitstream& a, const Bitstream& b) {
    CHECK(a.header.width == b.header.width);
    CHECK(a.header.height == b.header.height);
    CHECK(a.header.frame_count == b.header.frame_count);
    CHECK(a.header.intra_period == b.header.intra_period);
    CHECK(a.header.model_hash == b.header.model_hash);
    REQUIRE(a.omp.has_value() == b.omp.has_value());
    if (a.omp) {
        CHECK(a.omp->quant_step == b.omp->quant_step);
        CHECK(a.omp->offset == b.omp->offset);
        CHECK(a.omp->codes == b.omp->codes);
    }
    REQUIRE(a.frames.size() == b.frames.size());
    for (size_t i = 0; i < a.frames.size(); ++i) {
        CHECK(a.frames[i].frame_index == b.frames[i].frame_index);
        CHECK(a.frames[i].type == b.frames[i].type);
        CHECK(a.frames[i].scalars == b.frames[i].scalars);
        CHECK(a.frames[i].payload == b.frames[i].payload);
        REQUIRE(a.frames[i].omp.has_value() == b.frames[i].omp.has_value());
        if (a.frames[i].omp) CHECK(a.frames[i].omp->codes == b.frames[i].omp->codes);
    }
}

} // namespace

TEST_CASE("container round-trips exactly") {
    Bitstream bs = sample_stream();
    std::string bytes = serialize(bs);
    Bitstream back = parse(bytes);
    check_equal(bs, back);
    CHECK(serialize(back) == bytes);
}

TEST_CASE("header-only stream round-trips") {
    Bitstream bs;
    bs.header.width = 16;
    bs.header.height = 16;
    bs.header.frame_count = 0;
    std::string bytes = serialize(bs);
    Bitstream back = parse(bytes);
    CHECK(back.frames.empty());
    CHECK_FALSE(back.omp.has_value());
    CHECK((back.header.flags & 1) == 0);
}

TEST_CASE("bit accounting: serialized size equals header plus chunks") {
    Bitstream bs = sample_stream();
    std::string bytes = serialize(bs);
    size_t header_size = 4 + 1 + 2 + 2 + 4 + 1 + 1 + 4;
    size_t expect = header_size + bs.omp->byte_size();
    for (const auto& fc : bs.frames) {
        expect += 4 + 1 + 4;                       // index, type, payload_len
        if (fc.type == kFrameInter) expect += 8;   // scalars
        if (fc.type == kFrameIntraWithOmp) expect += fc.omp->byte_size();
        expect += fc.payload.size() + 4;           // payload + crc
    }
    CHECK(bytes.size() == expect);
}

TEST_CASE("fuzzed buffers never crash the parser") {
    std::mt19937 rng(555);
    std::string valid = serialize(sample_stream());
    int parsed_ok = 0, rejected = 0;
    for (int iter = 0; iter < 1000; ++iter) {
        std::string buf;
        int mode = iter % 3;
        if (mode == 0) {
            buf = valid;
            int flips = std::uniform_int_distribution<int>(1, 8)(rng);
            for (int k = 0; k < flips; ++k) {
                size_t pos = std::uniform_int_distribution<size_t>(0, buf.size() - 1)(rng);
                buf[pos] = char(rng());
            }
        } else if (mode == 1) {
            size_t len = std::uniform_int_distribution<size_t>(0, valid.size())(rng);
            buf = valid.substr(0, len);
        } else {
            size_t len = std::uniform_int_distribution<size_t>(0, 200)(rng);
            buf.resize(len);
            for (auto& c : buf) c = char(rng());
        }
        try {
            parse(buf);
            ++parsed_ok;
        } catch (const ParseError&) {
            ++rejected;
        }
    }
    CHECK(parsed_ok + rejected == 1000);
    CHECK(rejected > 900); // nearly all mutations must be caught
}

TEST_CASE("payload corruption is caught by the checksum") {
    Bitstream bs = sample_stream();
    std::string bytes = serialize(bs);
    // flip a byte inside frame 1's payload (100 x 0x7f bytes are easy to find)
    size_t pos = bytes.find(std::string(50, '\x7f'));
    REQUIRE(pos != std::string::npos);
    bytes[pos + 10] ^= 0x40;
    CHECK_THROWS_AS(parse(bytes), ParseError);
}

TEST_CASE("flags bit0 clear means no omp chunk") {
    Bitstream bs = sample_stream();
    bs.omp.reset();
    Bitstream back = parse(serialize(bs));
    CHECK_FALSE(back.omp.has_value());
    CHECK((back.header.flags & 1) == 0);
}

TEST_CASE("scalar fixed point is within half a step") {
    std::mt19937 rng(919);
    std::uniform_real_distribution<float> d(-3.9f, 3.9f);
    const float step = 8.0f / 65536.0f;
    for (int i = 0; i < 1000; ++i) {
        float s = d(rng);
        float back = scalar_from_q16(scalar_to_q16(s));
        CHECK(std::abs(back - s) <= step / 2 + 1e-7f);
    }
    CHECK(scalar_from_q16(scalar_to_q16(0.0f)) == Catch::Approx(0.0f).margin(step));
}

TEST_CASE("combined size formula") {
    CHECK(combined_size_mb(0, 0) == 0.0);
    CHECK(combined_size_mb(50e6, 1e6) == Catch::Approx(102.63).margin(0.01));
}

TEST_CASE("bpp formula") {
    CHECK(bpp(0, 100, 10, 8) == 0.0);
    CHECK(bpp(1000, 100, 10, 8) == Catch::Approx(1.0));
    CHECK_THROWS_AS(bpp(10, 0, 1, 1), Error);
}
