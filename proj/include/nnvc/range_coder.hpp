#pragma once

#include <cstdint>
#include <functional>
#include <string>
#include <vector>

#include "nnvc/common.hpp"

namespace nnvc {

// 16-bit fixed-point CDF: cum[0] = 0, strictly increasing, cum[A] = 65536.
struct CdfTable {
    std::vector<uint32_t> cum;

    int alphabet() const { return int(cum.size()) - 1; }
    uint32_t freq(int s) const { return cum[size_t(s) + 1] - cum[size_t(s)]; }

    void validate() const {
        check_parse(cum.size() >= 2, "cdf: empty alphabet");
        check_parse(cum.front() == 0, "cdf: must start at 0");
        check_parse(cum.back() == 65536, "cdf: must end at 65536");
        for (size_t i = 1; i < cum.size(); ++i)
            check_parse(cum[i] > cum[i - 1], "cdf: zero-width symbol interval");
    }
};

// Quantize a PMF (nonnegative, ~sums to 1) to a total of 2^16, every symbol
// keeping at least one count. Deterministic, integer adjustments only.
inline CdfTable pmf_to_cdf(const std::vector<double>& pmf) {
    check(!pmf.empty(), "pmf_to_cdf: empty pmf");
    const int A = int(pmf.size());
    std::vector<int64_t> freq(static_cast<size_t>(A), 0);
    int64_t total = 0;
    for (int i = 0; i < A; ++i) {
        int64_t f = std::max<int64_t>(1, int64_t(pmf[size_t(i)] * 65536.0 + 0.5));
        freq[size_t(i)] = f;
        total += f;
    }
    // settle the sum to exactly 65536 by adjusting the largest entries
    while (total != 65536) {
        int arg = 0;
        for (int i = 1; i < A; ++i)
            if (freq[size_t(i)] > freq[size_t(arg)]) arg = i;
        if (total < 65536) {
            freq[size_t(arg)] += 65536 - total;
            total = 65536;
        } else {
            int64_t cut = std::min(total - 65536, freq[size_t(arg)] - 1);
            check(cut > 0, "pmf_to_cdf: alphabet larger than 2^16");
            freq[size_t(arg)] -= cut;
            total -= cut;
        }
    }
    CdfTable cdf;
    cdf.cum.resize(size_t(A) + 1);
    cdf.cum[0] = 0;
    for (int i = 0; i < A; ++i) cdf.cum[size_t(i) + 1] = cdf.cum[size_t(i)] + uint32_t(freq[size_t(i)]);
    return cdf;
}

// Carry-aware 32-bit range encoder with 16-bit probability precision and
// byte-wise renormalization. Integer arithmetic only.
class RangeEncoder {
public:
    void encode(const CdfTable& cdf, int symbol) {
        check(symbol >= 0 && symbol < cdf.alphabet(), "range encoder: symbol out of alphabet");
        uint32_t r = range_ >> 16;
        low_ += uint64_t(r) * cdf.cum[size_t(symbol)];
        range_ = r * cdf.freq(symbol);
        while (range_ < (1u << 24)) {
            shift_low();
            range_ <<= 8;
        }
    }

    // Picks the sparsest value in the final interval so the tail of the
    // stream is mostly zero bytes, then drops those: the decoder treats
    // reads past the end as zeros.
    std::string finish() {
        low_ = (low_ + 0xFFFF) & ~uint64_t(0xFFFF); // multiple of 2^16 inside [low, low+range)
        for (int i = 0; i < 5; ++i) shift_low();
        while (!out_.empty() && out_.back() == '\0') out_.pop_back();
        return std::move(out_);
    }

private:
    void shift_low() {
        if (uint32_t(low_) < 0xFF000000u || (low_ >> 32) != 0) {
            uint8_t carry = uint8_t(low_ >> 32);
            do {
                out_.push_back(char(uint8_t(cache_ + carry)));
                cache_ = 0xFF;
            } while (--pending_ != 0);
            cache_ = uint8_t(low_ >> 24);
        }
        ++pending_;
        low_ = (low_ << 8) & 0xFFFFFFFFull;
    }

    uint64_t low_ = 0;
    uint32_t range_ = 0xFFFFFFFFu;
    uint8_t cache_ = 0;
    uint64_t pending_ = 1;
    std::string out_;
};

class RangeDecoder {
public:
    explicit RangeDecoder(const std::string& bytes) : bytes_(&bytes) {
        for (int i = 0; i < 5; ++i) code_ = (code_ << 8) | next_byte();
    }

    int decode(const CdfTable& cdf) {
        uint32_t r = range_ >> 16;
        uint32_t dv = code_ / r;
        if (dv > 65535) dv = 65535;
        // binary search: largest s with cum[s] <= dv
        int lo = 0, hi = cdf.alphabet();
        while (hi - lo > 1) {
            int mid = (lo + hi) / 2;
            if (cdf.cum[size_t(mid)] <= dv)
                lo = mid;
            else
                hi = mid;
        }
        code_ -= r * cdf.cum[size_t(lo)];
        range_ = r * cdf.freq(lo);
        while (range_ < (1u << 24)) {
            code_ = (code_ << 8) | next_byte();
            range_ <<= 8;
        }
        return lo;
    }

private:
    uint32_t next_byte() {
        if (pos_ < bytes_->size()) return uint8_t((*bytes_)[pos_++]);
        ++pos_;
        return 0;
    }

    const std::string* bytes_;
    size_t pos_ = 0;
    uint32_t code_ = 0;
    uint32_t range_ = 0xFFFFFFFFu;
};

// ------------------------------------------------------- stream-level ops

struct CodedStream {
    std::string bytes;
    uint64_t symbol_count = 0;
};

// The provider yields the CDF for symbol i given the causal prefix; it must
// behave identically at encode and decode time.
using CdfProvider = std::function<CdfTable(size_t index, const std::vector<int>& prefix)>;

inline CodedStream encode_symbols(const std::vector<int>& symbols, const CdfProvider& provider) {
    RangeEncoder enc;
    std::vector<int> prefix;
    prefix.reserve(symbols.size());
    for (size_t i = 0; i < symbols.size(); ++i) {
        CdfTable cdf = provider(i, prefix);
        cdf.validate();
        enc.encode(cdf, symbols[i]);
        prefix.push_back(symbols[i]);
    }
    return {enc.finish(), symbols.size()};
}

inline std::vector<int> decode_symbols(const CodedStream& stream, const CdfProvider& provider) {
    RangeDecoder dec(stream.bytes);
    std::vector<int> out;
    out.reserve(size_t(stream.symbol_count));
    for (size_t i = 0; i < stream.symbol_count; ++i) {
        CdfTable cdf = provider(i, out);
        cdf.validate();
        out.push_back(dec.decode(cdf));
    }
    return out;
}

} // namespace nnvc
