#pragma once

#include <array>
#include <cstdint>
#include <vector>

#include "gridhack/env/types.hpp"

namespace gridhack::data {

// Per-frame features in the exact form policies consume. Both the
// dataset loader (decoding recordings) and the live environment path
// produce these through the same functions, so offline training and
// online acting see identical representations.
struct FrameFeatures {
    std::array<std::uint8_t, env::kCropDim * env::kCropDim> crop{};
    std::array<std::uint8_t, 80> message{};  // row 0 bytes, blank-padded
    env::BlStats blstats;
};

inline FrameFeatures features_from_tty(const env::TtyFrame& tty) {
    FrameFeatures f;
    f.crop = env::crop_from_tty(tty);
    for (int c = 0; c < 80; ++c) f.message[c] = tty.char_at(env::kMsgRow, c);
    f.blstats = env::parse_statline(tty);
    return f;
}

inline FrameFeatures features_from_observation(const env::Observation& obs) {
    FrameFeatures f;
    f.crop = obs.crop;
    f.message.fill(' ');
    for (std::size_t c = 0; c < obs.message.size() && c < 80; ++c) {
        f.message[c] = static_cast<std::uint8_t>(obs.message[c]);
    }
    f.blstats = obs.blstats;
    return f;
}

// Packed contiguous unroll windows. All per-step arrays are flattened
// time-major: element (t, b) lives at index t * batch + b, which keeps
// each time step's rows contiguous for recurrent cores.
struct UnrollBatch {
    int batch = 0;
    int steps = 0;
    std::vector<int> crop;               // [T*B * 324] glyph ids
    std::vector<int> message;            // [T*B * 80] byte values
    std::vector<std::int32_t> blstats;   // [T*B * 16]
    std::vector<int> actions;            // [T*B]
    std::vector<int> strategies;         // [T*B]; the 255 sentinel maps to S-1
    std::vector<int> prev_actions;       // [T*B]; action_count marks episode starts
    std::vector<std::uint8_t> done;      // [T*B] episode-final frame markers
    std::vector<std::uint8_t> valid;     // [T*B] zero on padding
    std::vector<std::uint8_t> carry;     // [B] slot continues its episode

    std::int64_t at(int t, int b) const { return static_cast<std::int64_t>(t) * batch + b; }

    std::uint64_t sample_count() const {
        std::uint64_t n = 0;
        for (const auto v : valid) n += v;
        return n;
    }

    void resize(int b, int t) {
        batch = b;
        steps = t;
        const std::size_t n = static_cast<std::size_t>(b) * t;
        crop.assign(n * env::kCropDim * env::kCropDim, 0);
        message.assign(n * 80, ' ');
        blstats.assign(n * env::BlStats::kFieldCount, 0);
        actions.assign(n, 0);
        strategies.assign(n, 0);
        prev_actions.assign(n, 0);
        done.assign(n, 0);
        valid.assign(n, 0);
        carry.assign(b, 0);
    }

    void put_frame(int t, int b, const FrameFeatures& f, int action, int strategy,
                   int prev_action, bool is_done) {
        const std::int64_t i = at(t, b);
        for (int k = 0; k < env::kCropDim * env::kCropDim; ++k) {
            crop[i * env::kCropDim * env::kCropDim + k] = f.crop[k];
        }
        for (int k = 0; k < 80; ++k) message[i * 80 + k] = f.message[k];
        for (int k = 0; k < env::BlStats::kFieldCount; ++k) {
            blstats[i * env::BlStats::kFieldCount + k] = f.blstats[k];
        }
        actions[i] = action;
        strategies[i] = strategy;
        prev_actions[i] = prev_action;
        done[i] = is_done ? 1 : 0;
        valid[i] = 1;
    }
};

}  // namespace gridhack::data
