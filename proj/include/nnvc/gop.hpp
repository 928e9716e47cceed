#pragma once

#include <algorithm>
#include <vector>

#include "nnvc/common.hpp"

namespace nnvc {

// One inter-coded frame: target t predicted from reconstructions at t-d and
// t+d, with the nearest enclosing intra frames available to the Combiner.
struct GopStep {
    int target = 0;
    int ref_prev = 0;
    int ref_next = 0;
    int d = 0;
    int intra_prev = 0;
    int intra_next = 0;
};

struct GopSchedule {
    int num_frames = 0;
    int intra_period = 8;
    std::vector<int> intra_indices; // ascending coding order
    std::vector<GopStep> steps;     // coding order
};

namespace detail {

// Hierarchical bidirectional order inside [a, b] (b - a a power of two):
// midpoints by descending distance, left to right within each distance.
inline void schedule_interval(int a, int b, int intra_prev, int intra_next,
                              std::vector<GopStep>& out) {
    for (int d = (b - a) / 2; d >= 1; d /= 2)
        for (int t = a + d; t < b; t += 2 * d)
            out.push_back({t, t - d, t + d, d, intra_prev, intra_next});
}

inline bool is_pow2(int x) {
    return x > 0 && (x & (x - 1)) == 0;
}

} // namespace detail

// Coding order for a sequence: intra frames every `intra_period` frames,
// hierarchical bidirectional interpolation in between. A ragged tail is
// closed by coding the final frame as intra and splitting the remaining gap
// into power-of-two sub-periods (largest first), each bounded by intras.
inline GopSchedule build_gop_schedule(int num_frames, int intra_period = 8) {
    check_config(num_frames >= 1, "build_gop_schedule: need at least one frame");
    check_config(intra_period >= 2 && detail::is_pow2(intra_period),
                 "build_gop_schedule: intra_period must be a power of two >= 2");

    GopSchedule sched;
    sched.num_frames = num_frames;
    sched.intra_period = intra_period;

    int last = num_frames - 1;
    int start = 0;
    sched.intra_indices.push_back(0);
    while (start + intra_period <= last) {
        int end = start + intra_period;
        sched.intra_indices.push_back(end);
        detail::schedule_interval(start, end, start, end, sched.steps);
        start = end;
    }
    if (start < last) {
        // ragged tail: final frame becomes intra, gap split into powers of two
        sched.intra_indices.push_back(last);
        int gap = last - start;
        int a = start;
        while (gap > 0) {
            int p = 1;
            while (2 * p <= gap) p *= 2;
            int b = a + p;
            if (b != last) {
                // internal boundary needs to be decodable before its interval
                sched.intra_indices.push_back(b);
            }
            gap -= p;
            a = b;
        }
        // order intras before scheduling the inter steps of the tail
        std::sort(sched.intra_indices.begin(), sched.intra_indices.end());
        a = start;
        gap = last - start;
        while (gap > 0) {
            int p = 1;
            while (2 * p <= gap) p *= 2;
            detail::schedule_interval(a, a + p, a, a + p, sched.steps);
            gap -= p;
            a += p;
        }
    }
    return sched;
}

} // namespace nnvc
