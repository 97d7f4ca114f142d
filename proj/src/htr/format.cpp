#include "gridhack/htr/format.hpp"

#include <algorithm>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <istream>
#include <numeric>
#include <ostream>
#include <sstream>

#include "gridhack/common/serde.hpp"

namespace gridhack::htr {

using env::kTtyCols;
using env::kTtyRows;

namespace {

void check_strategy(std::uint8_t strategy, std::uint8_t label_space_size, std::uint64_t offset) {
    if (strategy != kMissingStrategy && strategy >= label_space_size) {
        throw HtrError(offset, "strategy byte " + std::to_string(strategy) +
                                   " outside label space of size " +
                                   std::to_string(label_space_size));
    }
}

void encode_payload(const env::TtyFrame& tty, std::vector<std::uint8_t>& out) {
    for (int r = 0; r < kTtyRows; ++r) {
        int c = 0;
        while (c < kTtyCols) {
            const std::uint8_t ch = tty.chars[r * kTtyCols + c];
            const std::uint8_t color = tty.colors[r * kTtyCols + c];
            int run = 1;
            while (c + run < kTtyCols && tty.chars[r * kTtyCols + c + run] == ch &&
                   tty.colors[r * kTtyCols + c + run] == color) {
                ++run;
            }
            out.push_back(static_cast<std::uint8_t>(run));
            out.push_back(ch);
            out.push_back(color);
            c += run;
        }
    }
    out.push_back(tty.cursor_row);
    out.push_back(tty.cursor_col);
    out.push_back(0);
    out.push_back(0);
}

// Decodes a payload buffer into a TtyFrame; offsets in errors are
// absolute (payload_start + local position).
env::TtyFrame decode_payload(const std::uint8_t* data, std::size_t len, std::uint64_t start) {
    env::TtyFrame tty;
    std::size_t pos = 0;
    for (int r = 0; r < kTtyRows; ++r) {
        int c = 0;
        while (c < kTtyCols) {
            if (pos + 3 > len) throw HtrError(start + pos, "payload ends inside a run triple");
            const int run = data[pos];
            const std::uint8_t ch = data[pos + 1];
            const std::uint8_t color = data[pos + 2];
            pos += 3;
            if (run < 1 || c + run > kTtyCols) {
                throw HtrError(start + pos - 3, "run of " + std::to_string(run) +
                                                    " overflows row " + std::to_string(r));
            }
            for (int k = 0; k < run; ++k) {
                tty.chars[r * kTtyCols + c + k] = ch;
                tty.colors[r * kTtyCols + c + k] = color;
            }
            c += run;
        }
    }
    if (pos + 4 != len) throw HtrError(start + pos, "payload length does not match cursor record");
    tty.cursor_row = data[pos];
    tty.cursor_col = data[pos + 1];
    if (data[pos + 2] != 0 || data[pos + 3] != 0) {
        throw HtrError(start + pos + 2, "cursor record padding not zero");
    }
    if (tty.cursor_row >= kTtyRows || tty.cursor_col >= kTtyCols) {
        throw HtrError(start + pos, "cursor out of bounds");
    }
    return tty;
}

}  // namespace

std::vector<std::uint8_t> encode_header(const HtrHeader& header) {
    std::vector<std::uint8_t> out;
    out.reserve(kHeaderSize);
    for (char m : kMagic) out.push_back(static_cast<std::uint8_t>(m));
    put_u16(out, header.version);
    out.push_back(header.role);
    out.push_back(header.label_space_size);
    put_u64(out, header.env_seed);
    put_u16(out, header.flags);
    for (int i = 0; i < 6; ++i) out.push_back(0);
    return out;
}

std::vector<std::uint8_t> encode_frame(const HtrFrame& frame, std::uint8_t label_space_size) {
    check_strategy(frame.strategy, label_space_size, 0);
    std::vector<std::uint8_t> payload;
    payload.reserve(512);
    encode_payload(frame.tty, payload);
    if (payload.size() > kMaxPayload) throw HtrError(0, "payload exceeds size cap");
    std::vector<std::uint8_t> out;
    out.reserve(kFrameHeaderSize + payload.size());
    put_u64(out, frame.timestamp_us);
    put_u16(out, frame.action);
    out.push_back(frame.strategy);
    out.push_back(frame.flags);
    put_u32(out, static_cast<std::uint32_t>(payload.size()));
    out.insert(out.end(), payload.begin(), payload.end());
    return out;
}

std::uint64_t write_episode(std::ostream& out, const HtrHeader& header,
                            const std::vector<HtrFrame>& frames) {
    if (frames.empty()) throw std::invalid_argument("write_episode: no frames");
    if (!frames.back().final_frame()) {
        throw std::invalid_argument("write_episode: last frame must carry the final flag");
    }
    std::uint64_t written = 0;
    const auto head = encode_header(header);
    out.write(reinterpret_cast<const char*>(head.data()), static_cast<std::streamsize>(head.size()));
    written += head.size();
    for (const auto& frame : frames) {
        const auto bytes = encode_frame(frame, header.label_space_size);
        out.write(reinterpret_cast<const char*>(bytes.data()),
                  static_cast<std::streamsize>(bytes.size()));
        written += bytes.size();
    }
    if (!out) throw std::runtime_error("write_episode: sink write failed");
    return written;
}

HtrReader::HtrReader(std::istream& in) : in_(in) {}

std::optional<HtrItem> HtrReader::next() {
    if (finished_) return std::nullopt;
    return expect_header_ ? read_header() : read_frame();
}

std::optional<HtrItem> HtrReader::read_header() {
    std::uint8_t buf[kHeaderSize];
    in_.read(reinterpret_cast<char*>(buf), kHeaderSize);
    const std::streamsize got = in_.gcount();
    if (got == 0) {
        finished_ = true;
        return std::nullopt;  // clean end at an episode boundary
    }
    if (got < static_cast<std::streamsize>(kHeaderSize)) {
        finished_ = true;
        return TruncationNotice{offset_, "stream ends inside a header"};
    }
    if (std::memcmp(buf, kMagic, 4) != 0) {
        throw HtrError(offset_, "bad magic");
    }
    HtrHeader header;
    header.version = get_u16(buf + 4);
    if (header.version != kVersion) {
        throw HtrError(offset_ + 4, "unsupported version " + std::to_string(header.version));
    }
    header.role = buf[6];
    header.label_space_size = buf[7];
    header.env_seed = get_u64(buf + 8);
    header.flags = get_u16(buf + 16);
    for (int i = 18; i < 24; ++i) {
        if (buf[i] != 0) throw HtrError(offset_ + i, "reserved header bytes not zero");
    }
    label_space_size_ = header.label_space_size;
    offset_ += kHeaderSize;
    expect_header_ = false;
    return HtrItem{header};
}

std::optional<HtrItem> HtrReader::read_frame() {
    std::uint8_t head[kFrameHeaderSize];
    in_.read(reinterpret_cast<char*>(head), kFrameHeaderSize);
    const std::streamsize got = in_.gcount();
    if (got == 0) {
        // Episode missing its final frame, but the cut is on a frame
        // boundary: a valid prefix.
        finished_ = true;
        return std::nullopt;
    }
    if (got < static_cast<std::streamsize>(kFrameHeaderSize)) {
        finished_ = true;
        return TruncationNotice{offset_, "stream ends inside a frame header"};
    }
    HtrFrame frame;
    frame.timestamp_us = get_u64(head);
    frame.action = get_u16(head + 8);
    frame.strategy = head[10];
    frame.flags = head[11];
    const std::uint32_t payload_len = get_u32(head + 12);
    if (payload_len > kMaxPayload) {
        throw HtrError(offset_ + 12, "payload length " + std::to_string(payload_len) +
                                         " exceeds the format cap");
    }
    check_strategy(frame.strategy, label_space_size_, offset_ + 10);
    std::vector<std::uint8_t> payload(payload_len);
    in_.read(reinterpret_cast<char*>(payload.data()), payload_len);
    if (in_.gcount() < static_cast<std::streamsize>(payload_len)) {
        finished_ = true;
        return TruncationNotice{offset_, "stream ends inside a frame payload"};
    }
    frame.tty = decode_payload(payload.data(), payload.size(), offset_ + kFrameHeaderSize);
    offset_ += kFrameHeaderSize + payload_len;
    if (frame.final_frame()) expect_header_ = true;
    return HtrItem{frame};
}

HtrFrame read_frame_at(std::istream& in, std::uint64_t offset, std::uint8_t label_space_size) {
    in.clear();
    in.seekg(static_cast<std::streamoff>(offset));
    std::uint8_t head[kFrameHeaderSize];
    in.read(reinterpret_cast<char*>(head), kFrameHeaderSize);
    if (in.gcount() < static_cast<std::streamsize>(kFrameHeaderSize)) {
        throw HtrError(offset, "cannot read frame header at offset");
    }
    HtrFrame frame;
    frame.timestamp_us = get_u64(head);
    frame.action = get_u16(head + 8);
    frame.strategy = head[10];
    frame.flags = head[11];
    check_strategy(frame.strategy, label_space_size, offset + 10);
    const std::uint32_t payload_len = get_u32(head + 12);
    if (payload_len > kMaxPayload) throw HtrError(offset + 12, "payload length exceeds cap");
    std::vector<std::uint8_t> payload(payload_len);
    in.read(reinterpret_cast<char*>(payload.data()), payload_len);
    if (in.gcount() < static_cast<std::streamsize>(payload_len)) {
        throw HtrError(offset, "cannot read frame payload at offset");
    }
    frame.tty = decode_payload(payload.data(), payload.size(), offset + kFrameHeaderSize);
    return frame;
}

FrameIndex build_index(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw std::runtime_error("build_index: cannot open " + path);
    FrameIndex index;
    HtrReader reader(in);
    EpisodeRecord episode;
    bool in_episode = false;
    std::uint64_t next_offset = 0;
    while (auto item = reader.next()) {
        if (std::holds_alternative<HtrHeader>(*item)) {
            const auto& header = std::get<HtrHeader>(*item);
            episode = EpisodeRecord{};
            episode.header_offset = next_offset;
            episode.first_frame = static_cast<std::uint32_t>(index.frame_offsets.size());
            episode.role = header.role;
            episode.env_seed = header.env_seed;
            index.label_space_size = std::max(index.label_space_size, header.label_space_size);
            in_episode = true;
        } else if (std::holds_alternative<HtrFrame>(*item)) {
            const auto& frame = std::get<HtrFrame>(*item);
            index.frame_offsets.push_back(next_offset);
            episode.frame_count += 1;
            const env::BlStats bl = env::parse_statline(frame.tty);
            episode.final_score = bl.score;
            episode.final_turn = bl.turn;
            episode.final_depth = bl.depth;
            if (frame.final_frame()) {
                index.episodes.push_back(episode);
                in_episode = false;
            }
        } else {
            episode.truncated = true;
            break;
        }
        next_offset = reader.offset();
    }
    if (in_episode && episode.frame_count > 0) {
        episode.truncated = true;
        index.episodes.push_back(episode);
    }
    if (index.episodes.empty()) {
        throw std::runtime_error("build_index: no parseable episode in " + path);
    }
    return index;
}

CorpusStats compute_stats_files(const std::vector<std::string>& files) {
    if (files.empty()) throw std::runtime_error("compute_stats: no .htr files");
    CorpusStats stats;
    std::vector<std::int64_t> scores;
    std::vector<std::uint64_t> lengths;
    std::vector<std::int64_t> turns;
    double score_sum = 0.0;
    for (const auto& file : files) {
        std::ifstream in(file, std::ios::binary);
        if (!in) throw std::runtime_error("compute_stats: cannot open " + file);
        HtrReader reader(in);
        std::uint64_t episode_frames = 0;
        env::TtyFrame last_tty;
        auto finish_episode = [&] {
            if (episode_frames == 0) return;
            const env::BlStats bl = env::parse_statline(last_tty);
            stats.total_episodes += 1;
            scores.push_back(bl.score);
            lengths.push_back(episode_frames);
            turns.push_back(bl.turn);
            score_sum += static_cast<double>(bl.score);
            episode_frames = 0;
        };
        while (auto item = reader.next()) {
            if (std::holds_alternative<HtrHeader>(*item)) {
                const auto& header = std::get<HtrHeader>(*item);
                if (header.label_space_size >= stats.label_counts.size()) {
                    stats.label_counts.resize(header.label_space_size, 0);
                }
            } else if (std::holds_alternative<HtrFrame>(*item)) {
                const auto& frame = std::get<HtrFrame>(*item);
                if (frame.strategy == kMissingStrategy) {
                    stats.write_error_count += 1;
                } else {
                    stats.label_counts[frame.strategy] += 1;
                }
                stats.total_transitions += 1;
                episode_frames += 1;
                last_tty = frame.tty;
                if (frame.final_frame()) finish_episode();
            } else {
                break;  // truncated tail: complete frames still count
            }
        }
        finish_episode();
    }
    if (stats.total_episodes == 0) {
        throw std::runtime_error("compute_stats: no complete episode in corpus");
    }
    auto lower_median = [](auto& v) -> typename std::decay_t<decltype(v)>::value_type {
        if (v.empty()) return {};
        std::sort(v.begin(), v.end());
        return v[(v.size() - 1) / 2];
    };
    stats.mean_score = score_sum / static_cast<double>(stats.total_episodes);
    stats.median_score = lower_median(scores);
    stats.median_episode_transitions = lower_median(lengths);
    stats.median_episode_turns = lower_median(turns);
    return stats;
}

CorpusStats compute_stats(const std::string& dir) {
    std::vector<std::string> files;
    for (const auto& entry : std::filesystem::directory_iterator(dir)) {
        if (entry.is_regular_file() && entry.path().extension() == ".htr") {
            files.push_back(entry.path().string());
        }
    }
    std::sort(files.begin(), files.end());
    if (files.empty()) throw std::runtime_error("compute_stats: no .htr files under " + dir);
    return compute_stats_files(files);
}

namespace {

std::string with_commas(std::uint64_t v) {
    std::string raw = std::to_string(v);
    std::string out;
    int count = 0;
    for (auto it = raw.rbegin(); it != raw.rend(); ++it) {
        if (count && count % 3 == 0) out.push_back(',');
        out.push_back(*it);
        ++count;
    }
    std::reverse(out.begin(), out.end());
    return out;
}

}  // namespace

std::string format_stats_table(const CorpusStats& stats, bool include_reference_row) {
    std::ostringstream out;
    auto row = [&](const std::string& name, const std::string& ours, const std::string& ref) {
        out << name;
        for (std::size_t i = name.size(); i < 34; ++i) out << ' ';
        out << ours;
        if (include_reference_row) {
            for (std::size_t i = ours.size(); i < 18; ++i) out << ' ';
            out << ref;
        }
        out << '\n';
    };
    const auto& ref = kReferenceStats;
    row("", "corpus", include_reference_row ? ref.name : "");
    row("Total Episodes", with_commas(stats.total_episodes), with_commas(ref.episodes));
    row("Total Transitions", with_commas(stats.total_transitions), with_commas(ref.transitions));
    {
        std::ostringstream mean;
        mean.precision(1);
        mean << std::fixed << stats.mean_score;
        row("Mean Episode Score", mean.str(), with_commas(static_cast<std::uint64_t>(ref.mean_score)));
    }
    row("Median Episode Score", with_commas(static_cast<std::uint64_t>(stats.median_score)),
        with_commas(static_cast<std::uint64_t>(ref.median_score)));
    row("Median Episode Game Transitions", with_commas(stats.median_episode_transitions),
        with_commas(ref.median_episode_transitions));
    row("Median Episode Game Turns", with_commas(static_cast<std::uint64_t>(stats.median_episode_turns)),
        with_commas(static_cast<std::uint64_t>(ref.median_episode_turns)));
    out << "Per-label transition counts:\n";
    for (std::size_t label = 0; label < stats.label_counts.size(); ++label) {
        out << "  label " << label << ": " << with_commas(stats.label_counts[label]) << '\n';
    }
    out << "  write-error (255): " << with_commas(stats.write_error_count) << '\n';
    return out.str();
}

}  // namespace gridhack::htr
