#pragma once

#include <cstdint>
#include <ostream>

#include "gridhack/env/env.hpp"
#include "gridhack/htr/format.hpp"

namespace gridhack::data {

// Streams environment steps straight into an .htr episode. Frames are
// written as they happen, so an interrupted stream is a valid prefix.
// Frames recorded without a strategy label (terminal frames, or policies
// that have no notion of strategies) get the missing-label sentinel.
class HtrEpisodeRecorder : public env::StepRecorder {
public:
    HtrEpisodeRecorder(std::ostream& out, std::uint64_t env_seed, std::uint8_t role,
                       std::uint8_t label_space_size)
        : out_(out) {
        header_.env_seed = env_seed;
        header_.role = role;
        header_.label_space_size = label_space_size;
    }

    void record(const env::TtyFrame& tty, env::Action action,
                std::optional<std::uint8_t> strategy, bool terminal) override {
        if (!header_written_) {
            const auto bytes = htr::encode_header(header_);
            out_.write(reinterpret_cast<const char*>(bytes.data()),
                       static_cast<std::streamsize>(bytes.size()));
            header_written_ = true;
        }
        htr::HtrFrame frame;
        // Synthetic clock: one millisecond per step, so recordings are
        // byte-reproducible.
        frame.timestamp_us = frame_count_ * 1000;
        frame.action = static_cast<std::uint16_t>(action);
        frame.strategy = strategy.value_or(htr::kMissingStrategy);
        frame.flags = terminal ? htr::kFinalFrameFlag : 0;
        frame.tty = tty;
        const auto bytes = htr::encode_frame(frame, header_.label_space_size);
        out_.write(reinterpret_cast<const char*>(bytes.data()),
                   static_cast<std::streamsize>(bytes.size()));
        frame_count_ += 1;
    }

    std::uint64_t frame_count() const { return frame_count_; }

private:
    std::ostream& out_;
    htr::HtrHeader header_;
    bool header_written_ = false;
    std::uint64_t frame_count_ = 0;
};

}  // namespace gridhack::data
