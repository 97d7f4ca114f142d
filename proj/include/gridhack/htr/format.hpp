#pragma once

#include <cstdint>
#include <iosfwd>
#include <optional>
#include <stdexcept>
#include <string>
#include <variant>
#include <vector>

#include "gridhack/env/types.hpp"

namespace gridhack::htr {

// Binary layout (all integers little-endian). This section is normative;
// golden fixtures under fixtures/ pin the exact bytes.
//
//   header (24 bytes):
//     0..3   magic "HTR1"
//     4..5   version u16        (= 1)
//     6      role u8
//     7      label_space_size u8
//     8..15  env_seed u64
//     16..17 flags u16          (reserved, 0)
//     18..23 reserved, all zero
//
//   frame (16-byte frame header + payload):
//     0..7   timestamp_us u64   (microseconds since episode start)
//     8..9   action u16
//     10     strategy u8        (255 = label missing / write error)
//     11     flags u8           (bit 0 = episode-final frame)
//     12..15 payload_len u32
//
//   payload: 24 rows of run-length triples (run u8 in 1..80, char u8,
//   color u8); each row's runs sum to exactly 80. After the last row a
//   4-byte cursor record: row u8, col u8, two zero bytes.

inline constexpr char kMagic[4] = {'H', 'T', 'R', '1'};
inline constexpr std::uint16_t kVersion = 1;
inline constexpr std::size_t kHeaderSize = 24;
inline constexpr std::size_t kFrameHeaderSize = 16;
inline constexpr std::uint8_t kFinalFrameFlag = 0x01;
// On-disk sentinel for frames recorded without a label, independent of
// the label space size.
inline constexpr std::uint8_t kMissingStrategy = 255;
// Sanity cap: a full 24x80 frame cannot RLE-encode past this.
inline constexpr std::uint32_t kMaxPayload = 24 * 80 * 3 + 4;

struct HtrHeader {
    std::uint16_t version = kVersion;
    std::uint8_t role = 0;
    std::uint8_t label_space_size = 0;
    std::uint64_t env_seed = 0;
    std::uint16_t flags = 0;

    bool operator==(const HtrHeader&) const = default;
};

struct HtrFrame {
    std::uint64_t timestamp_us = 0;
    std::uint16_t action = 0;
    std::uint8_t strategy = kMissingStrategy;
    std::uint8_t flags = 0;
    env::TtyFrame tty;

    bool final_frame() const { return flags & kFinalFrameFlag; }
    bool operator==(const HtrFrame&) const = default;
};

struct TruncationNotice {
    std::uint64_t byte_offset = 0;  // start of the structure that was cut
    std::string what;

    bool operator==(const TruncationNotice&) const = default;
};

class HtrError : public std::runtime_error {
public:
    HtrError(std::uint64_t offset, const std::string& message)
        : std::runtime_error("htr: byte " + std::to_string(offset) + ": " + message),
          offset(offset) {}
    std::uint64_t offset;
};

std::vector<std::uint8_t> encode_header(const HtrHeader& header);
std::vector<std::uint8_t> encode_frame(const HtrFrame& frame, std::uint8_t label_space_size);

// Serializes one full episode: header then frames. The last frame must
// carry the final flag. Returns bytes written.
std::uint64_t write_episode(std::ostream& out, const HtrHeader& header,
                            const std::vector<HtrFrame>& frames);

using HtrItem = std::variant<HtrHeader, HtrFrame, TruncationNotice>;

// Pull parser. next() yields decoded items in stream order and nullopt at
// a clean end (a boundary between items). A stream cut mid-structure
// yields a TruncationNotice and then ends; malformed content throws
// HtrError with the offending byte offset.
class HtrReader {
public:
    explicit HtrReader(std::istream& in);

    std::optional<HtrItem> next();
    std::uint64_t offset() const { return offset_; }

private:
    std::optional<HtrItem> read_header();
    std::optional<HtrItem> read_frame();

    std::istream& in_;
    std::uint64_t offset_ = 0;
    bool expect_header_ = true;
    bool finished_ = false;
    std::uint8_t label_space_size_ = 0;
};

// Decodes the frame stored at a known byte offset (as recorded by
// build_index); the strategy byte is validated against label_space_size.
HtrFrame read_frame_at(std::istream& in, std::uint64_t offset, std::uint8_t label_space_size);

struct EpisodeRecord {
    std::uint64_t header_offset = 0;
    std::uint32_t first_frame = 0;  // index into FrameIndex::frame_offsets
    std::uint32_t frame_count = 0;
    std::uint8_t role = 0;
    std::uint64_t env_seed = 0;
    std::int32_t final_score = 0;
    std::int32_t final_turn = 0;
    std::int32_t final_depth = 0;
    bool truncated = false;  // file ended before the final-flagged frame
};

struct FrameIndex {
    std::vector<std::uint64_t> frame_offsets;
    std::vector<EpisodeRecord> episodes;
    std::uint8_t label_space_size = 0;
};

// Sequential scan building a random-access index. Tolerates a truncated
// tail (the complete frames are indexed); throws on corrupt content and
// on files with no parseable episode.
FrameIndex build_index(const std::string& path);

struct CorpusStats {
    std::uint64_t total_episodes = 0;
    std::uint64_t total_transitions = 0;
    double mean_score = 0.0;
    std::int64_t median_score = 0;
    std::uint64_t median_episode_transitions = 0;
    std::int64_t median_episode_turns = 0;
    std::vector<std::uint64_t> label_counts;  // indexed by strategy label
    std::uint64_t write_error_count = 0;      // frames stored with the 255 sentinel
};

// Aggregates every .htr file under dir (sorted by filename). Medians use
// the lower-median convention for even counts.
CorpusStats compute_stats(const std::string& dir);
CorpusStats compute_stats_files(const std::vector<std::string>& files);

// Published large-scale reference row rendered alongside generated-corpus
// statistics for comparison.
struct ReferenceStatsRow {
    const char* name;
    std::uint64_t episodes;
    std::uint64_t transitions;
    std::int64_t mean_score;
    std::int64_t median_score;
    std::uint64_t median_episode_transitions;
    std::int64_t median_episode_turns;
};
inline constexpr ReferenceStatsRow kReferenceStats = {
    "reference-full-scale", 109907, 3244729367ULL, 8166, 5147, 27496, 19991,
};

std::string format_stats_table(const CorpusStats& stats, bool include_reference_row = true);

}  // namespace gridhack::htr
