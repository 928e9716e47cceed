#pragma once

#include <array>
#include <cstring>
#include <optional>
#include <string>
#include <vector>

#include "nnvc/common.hpp"

namespace nnvc {

// Wire format (all multi-byte integers little-endian):
//   header:  magic "NNVC", version u8, width u16, height u16, frame_count u32,
//            intra_period u8, flags u8 (bit0: OMP chunk present), model_hash u32
//   omp chunk (iff flags bit0): count u16, quant_step f32, offset f32, codes u8[count]
//   frame chunks in coding order:
//            frame_index u32, type u8 (0 intra / 1 inter / 2 intra+omp),
//            payload_len u32,
//            type 1: scalars 4 x u16 (fixed point [-4,4), step 8/65536)
//            type 2: count u16, quant_step f32, offset f32, codes u8[count]
//            payload bytes, payload_crc u32 (FNV-1a)
// payload_crc is derived at serialization time and verified on parse.

constexpr uint8_t kBitstreamVersion = 1;
constexpr uint8_t kFrameIntra = 0;
constexpr uint8_t kFrameInter = 1;
constexpr uint8_t kFrameIntraWithOmp = 2;

struct OmpChunk {
    float quant_step = 0.f;
    float offset = 0.f;
    std::vector<uint8_t> codes;

    size_t byte_size() const { return 2 + 4 + 4 + codes.size(); }
};

struct FrameChunk {
    uint32_t frame_index = 0;
    uint8_t type = kFrameIntra;
    std::array<uint16_t, 4> scalars{}; // inter only
    std::optional<OmpChunk> omp;       // type 2 only
    std::string payload;
};

struct BitstreamHeader {
    uint8_t version = kBitstreamVersion;
    uint16_t width = 0;
    uint16_t height = 0;
    uint32_t frame_count = 0;
    uint8_t intra_period = 8;
    uint8_t flags = 0;
    uint32_t model_hash = 0;
};

struct Bitstream {
    BitstreamHeader header;
    std::optional<OmpChunk> omp; // present iff header.flags bit0
    std::vector<FrameChunk> frames;
};

// Combiner scalars on the wire: unsigned 16-bit fixed point over [-4, 4).
inline uint16_t scalar_to_q16(float s) {
    double q = std::round((double(s) + 4.0) * 65536.0 / 8.0);
    q = std::min(std::max(q, 0.0), 65535.0);
    return uint16_t(q);
}
inline float scalar_from_q16(uint16_t q) {
    return float(double(q) * 8.0 / 65536.0 - 4.0);
}

namespace wire {

inline void put_u8(std::string& s, uint8_t v) { s.push_back(char(v)); }
inline void put_u16(std::string& s, uint16_t v) {
    s.push_back(char(v & 0xff));
    s.push_back(char((v >> 8) & 0xff));
}
inline void put_u32(std::string& s, uint32_t v) {
    for (int i = 0; i < 4; ++i) s.push_back(char((v >> (8 * i)) & 0xff));
}
inline void put_f32(std::string& s, float f) {
    uint32_t bits;
    std::memcpy(&bits, &f, 4);
    put_u32(s, bits);
}

struct Reader {
    const std::string* s;
    size_t off = 0;

    uint8_t u8() {
        check_parse(off + 1 <= s->size(), "bitstream truncated");
        return uint8_t((*s)[off++]);
    }
    uint16_t u16() {
        check_parse(off + 2 <= s->size(), "bitstream truncated");
        uint16_t v = uint16_t(uint8_t((*s)[off])) | uint16_t(uint8_t((*s)[off + 1])) << 8;
        off += 2;
        return v;
    }
    uint32_t u32() {
        check_parse(off + 4 <= s->size(), "bitstream truncated");
        uint32_t v = 0;
        for (int i = 0; i < 4; ++i) v |= uint32_t(uint8_t((*s)[off + i])) << (8 * i);
        off += 4;
        return v;
    }
    float f32() {
        uint32_t bits = u32();
        float f;
        std::memcpy(&f, &bits, 4);
        return f;
    }
    std::string bytes(size_t n) {
        check_parse(off + n <= s->size(), "bitstream truncated");
        std::string out = s->substr(off, n);
        off += n;
        return out;
    }
};

inline void put_omp(std::string& out, const OmpChunk& omp) {
    check(omp.codes.size() <= 0xFFFF, "omp chunk too large");
    put_u16(out, uint16_t(omp.codes.size()));
    put_f32(out, omp.quant_step);
    put_f32(out, omp.offset);
    for (uint8_t c : omp.codes) put_u8(out, c);
}

inline OmpChunk get_omp(Reader& r) {
    OmpChunk omp;
    uint16_t count = r.u16();
    omp.quant_step = r.f32();
    omp.offset = r.f32();
    omp.codes.reserve(count);
    for (int i = 0; i < count; ++i) omp.codes.push_back(r.u8());
    return omp;
}

} // namespace wire

inline std::string serialize(const Bitstream& bs) {
    std::string out = "NNVC";
    wire::put_u8(out, bs.header.version);
    wire::put_u16(out, bs.header.width);
    wire::put_u16(out, bs.header.height);
    wire::put_u32(out, bs.header.frame_count);
    wire::put_u8(out, bs.header.intra_period);
    uint8_t flags = uint8_t((bs.header.flags & ~1u) | (bs.omp ? 1u : 0u));
    wire::put_u8(out, flags);
    wire::put_u32(out, bs.header.model_hash);
    if (bs.omp) wire::put_omp(out, *bs.omp);
    for (const FrameChunk& fc : bs.frames) {
        wire::put_u32(out, fc.frame_index);
        wire::put_u8(out, fc.type);
        check(fc.payload.size() <= 0xFFFFFFFFull, "payload too large");
        wire::put_u32(out, uint32_t(fc.payload.size()));
        if (fc.type == kFrameInter)
            for (uint16_t q : fc.scalars) wire::put_u16(out, q);
        if (fc.type == kFrameIntraWithOmp) {
            check(bool(fc.omp), "frame chunk type 2 requires omp data");
            wire::put_omp(out, *fc.omp);
        }
        out += fc.payload;
        wire::put_u32(out, fnv1a(reinterpret_cast<const uint8_t*>(fc.payload.data()),
                                 fc.payload.size()));
    }
    return out;
}

inline Bitstream parse(const std::string& bytes) {
    wire::Reader r{&bytes};
    check_parse(bytes.size() >= 4 && bytes.compare(0, 4, "NNVC") == 0, "bad magic");
    r.off = 4;
    Bitstream bs;
    bs.header.version = r.u8();
    check_parse(bs.header.version == kBitstreamVersion, "unknown bitstream version");
    bs.header.width = r.u16();
    bs.header.height = r.u16();
    bs.header.frame_count = r.u32();
    bs.header.intra_period = r.u8();
    bs.header.flags = r.u8();
    bs.header.model_hash = r.u32();
    if (bs.header.flags & 1) bs.omp = wire::get_omp(r);
    for (uint32_t i = 0; i < bs.header.frame_count; ++i) {
        FrameChunk fc;
        fc.frame_index = r.u32();
        fc.type = r.u8();
        check_parse(fc.type <= kFrameIntraWithOmp, "unknown frame chunk type");
        uint32_t len = r.u32();
        if (fc.type == kFrameInter)
            for (auto& q : fc.scalars) q = r.u16();
        if (fc.type == kFrameIntraWithOmp) fc.omp = wire::get_omp(r);
        fc.payload = r.bytes(len);
        uint32_t crc = r.u32();
        check_parse(crc == fnv1a(reinterpret_cast<const uint8_t*>(fc.payload.data()),
                                 fc.payload.size()),
                    "frame payload checksum mismatch");
        check_parse(fc.frame_index < bs.header.frame_count, "frame index out of range");
        bs.frames.push_back(std::move(fc));
    }
    check_parse(r.off == bytes.size(), "trailing bytes after last chunk");
    return bs;
}

// CLIC-style combined size: decoder megabytes plus bitstream megabytes
// weighted by 1/0.019. Inputs in bytes, 1 MB = 1e6 bytes.
inline double combined_size_mb(double decoder_bytes, double bitstream_bytes) {
    check(decoder_bytes >= 0 && bitstream_bytes >= 0, "combined_size: negative size");
    return decoder_bytes / 1e6 + (bitstream_bytes / 1e6) / 0.019;
}

inline double bpp(double bitstream_bytes, int width, int height, int frame_count) {
    check(width > 0 && height > 0 && frame_count > 0, "bpp: bad dimensions");
    return 8.0 * bitstream_bytes / (double(width) * height * frame_count);
}

} // namespace nnvc
