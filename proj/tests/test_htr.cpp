#include <cstdio>
#include <filesystem>
#include <fstream>
#include <set>
#include <sstream>

#include "doctest.h"
#include "gridhack/common/rng.hpp"
#include "gridhack/htr/format.hpp"

using namespace gridhack;
using htr::HtrFrame;
using htr::HtrHeader;
using htr::HtrItem;
using htr::HtrReader;
using htr::TruncationNotice;

namespace {

env::TtyFrame random_tty(Rng& rng) {
    env::TtyFrame tty;
    for (std::size_t i = 0; i < tty.chars.size(); ++i) {
        // Runs of random length so the RLE paths get exercised.
        tty.chars[i] = static_cast<std::uint8_t>(32 + rng.bounded(95));
        tty.colors[i] = static_cast<std::uint8_t>(rng.bounded(16));
        if (rng.chance(0.7) && i > 0 && i % env::kTtyCols != 0) {
            tty.chars[i] = tty.chars[i - 1];
            tty.colors[i] = tty.colors[i - 1];
        }
    }
    tty.cursor_row = static_cast<std::uint8_t>(rng.bounded(env::kTtyRows));
    tty.cursor_col = static_cast<std::uint8_t>(rng.bounded(env::kTtyCols));
    return tty;
}

std::vector<HtrFrame> random_episode(Rng& rng, std::uint8_t label_space, int max_frames = 5) {
    const int n = 1 + static_cast<int>(rng.bounded(max_frames));
    std::vector<HtrFrame> frames(n);
    std::uint64_t ts = 0;
    for (int i = 0; i < n; ++i) {
        frames[i].timestamp_us = ts;
        ts += 1000;
        frames[i].action = static_cast<std::uint16_t>(rng.bounded(16));
        frames[i].strategy = rng.chance(0.05) ? htr::kMissingStrategy
                                              : static_cast<std::uint8_t>(rng.bounded(label_space));
        frames[i].flags = (i == n - 1) ? htr::kFinalFrameFlag : 0;
        frames[i].tty = random_tty(rng);
    }
    return frames;
}

HtrHeader make_header(std::uint64_t seed, std::uint8_t role = 0, std::uint8_t label_space = 8) {
    HtrHeader h;
    h.env_seed = seed;
    h.role = role;
    h.label_space_size = label_space;
    return h;
}

struct ParsedStream {
    std::vector<HtrItem> items;
    std::optional<TruncationNotice> notice;
};

ParsedStream parse_all(const std::string& bytes) {
    std::istringstream in(bytes, std::ios::binary);
    HtrReader reader(in);
    ParsedStream out;
    while (auto item = reader.next()) {
        if (std::holds_alternative<TruncationNotice>(*item)) {
            out.notice = std::get<TruncationNotice>(*item);
            break;
        }
        out.items.push_back(*item);
    }
    return out;
}

}  // namespace

TEST_CASE("header serializes to the exact 24-byte layout") {
    HtrHeader h = make_header(0x0123456789abcdefULL, 2, 8);
    const auto bytes = htr::encode_header(h);
    REQUIRE(bytes.size() == htr::kHeaderSize);
    const std::uint8_t expected[24] = {
        'H', 'T', 'R', '1',            // magic
        0x01, 0x00,                    // version 1, little-endian
        0x02,                          // role
        0x08,                          // label space size
        0xef, 0xcd, 0xab, 0x89, 0x67, 0x45, 0x23, 0x01,  // seed LE
        0x00, 0x00,                    // flags
        0, 0, 0, 0, 0, 0,              // reserved
    };
    for (int i = 0; i < 24; ++i) CHECK(bytes[i] == expected[i]);
}

TEST_CASE("a blank frame has the forced 16 + 76 byte layout") {
    HtrFrame frame;
    frame.timestamp_us = 1000;
    frame.action = 15;
    frame.strategy = 6;
    frame.flags = htr::kFinalFrameFlag;
    frame.tty.chars.fill(' ');
    frame.tty.colors.fill(0);
    const auto bytes = htr::encode_frame(frame, 8);
    REQUIRE(bytes.size() == htr::kFrameHeaderSize + 24 * 3 + 4);
    // Frame header.
    const std::uint8_t head[16] = {0xe8, 0x03, 0, 0, 0, 0, 0, 0,  // timestamp 1000 LE
                                   0x0f, 0x00,                    // action 15
                                   0x06,                          // strategy
                                   0x01,                          // final flag
                                   0x4c, 0x00, 0x00, 0x00};       // payload length 76
    for (int i = 0; i < 16; ++i) CHECK(bytes[i] == head[i]);
    // Each row is one run of 80 blanks.
    for (int r = 0; r < 24; ++r) {
        CHECK(bytes[16 + r * 3 + 0] == 80);
        CHECK(bytes[16 + r * 3 + 1] == ' ');
        CHECK(bytes[16 + r * 3 + 2] == 0);
    }
    CHECK(bytes[16 + 72] == 0);  // cursor row
    CHECK(bytes[16 + 73] == 0);  // cursor col
    CHECK(bytes[16 + 74] == 0);
    CHECK(bytes[16 + 75] == 0);

    // A one-frame episode is exactly header + frame.
    std::ostringstream out(std::ios::binary);
    const auto written = htr::write_episode(out, make_header(7), {frame});
    CHECK(written == 24 + 92);
    CHECK(out.str().size() == written);
}

TEST_CASE("golden fixture file matches the writer byte for byte") {
    const std::string path = std::string(GRIDHACK_SOURCE_DIR) + "/fixtures/golden_minimal.htr";
    std::ifstream in(path, std::ios::binary);
    REQUIRE_MESSAGE(in.good(), "missing fixture " << path);
    std::stringstream content;
    content << in.rdbuf();
    const std::string disk = content.str();

    HtrFrame frame;
    frame.timestamp_us = 1000;
    frame.action = 15;
    frame.strategy = 6;
    frame.flags = htr::kFinalFrameFlag;
    frame.tty.chars.fill(' ');
    frame.tty.colors.fill(0);
    std::ostringstream out(std::ios::binary);
    htr::write_episode(out, make_header(0x0123456789abcdefULL, 2, 8), {frame});
    CHECK(disk == out.str());

    // And parses back to the same episode.
    auto parsed = parse_all(disk);
    REQUIRE(parsed.items.size() == 2);
    CHECK(std::get<HtrHeader>(parsed.items[0]) == make_header(0x0123456789abcdefULL, 2, 8));
    CHECK(std::get<HtrFrame>(parsed.items[1]) == frame);
    CHECK_FALSE(parsed.notice.has_value());
}

TEST_CASE("round trip: 1000 random episodes decode frame for frame") {
    Rng rng(2718);
    for (int ep = 0; ep < 1000; ++ep) {
        const auto header = make_header(rng.next_u64(), static_cast<std::uint8_t>(rng.bounded(4)));
        const auto frames = random_episode(rng, header.label_space_size);
        std::ostringstream out(std::ios::binary);
        htr::write_episode(out, header, frames);
        const auto parsed = parse_all(out.str());
        REQUIRE(parsed.items.size() == frames.size() + 1);
        CHECK(std::get<HtrHeader>(parsed.items[0]) == header);
        for (std::size_t i = 0; i < frames.size(); ++i) {
            CHECK(std::get<HtrFrame>(parsed.items[i + 1]) == frames[i]);
        }
        CHECK_FALSE(parsed.notice.has_value());
    }
}

TEST_CASE("write_episode validates its inputs") {
    std::ostringstream out(std::ios::binary);
    CHECK_THROWS_AS(htr::write_episode(out, make_header(1), {}), std::invalid_argument);

    Rng rng(3);
    auto frames = random_episode(rng, 8);
    frames.back().flags = 0;  // strip the final flag
    CHECK_THROWS_AS(htr::write_episode(out, make_header(1), frames), std::invalid_argument);

    auto frames2 = random_episode(rng, 8);
    frames2.back().strategy = 9;  // outside label space of 8, not the sentinel
    CHECK_THROWS_AS(htr::write_episode(out, make_header(1), frames2), htr::HtrError);
}

TEST_CASE("bad magic is an error naming offset zero") {
    std::string bytes = "XXXXrest-of-stream-does-not-matter";
    std::istringstream in(bytes, std::ios::binary);
    HtrReader reader(in);
    try {
        reader.next();
        FAIL("expected HtrError");
    } catch (const htr::HtrError& e) {
        CHECK(e.offset == 0);
    }
}

TEST_CASE("truncation fuzz: every cut yields the complete prefix plus a notice") {
    Rng rng(414);
    for (int stream = 0; stream < 8; ++stream) {
        std::ostringstream out(std::ios::binary);
        const int episodes = 1 + static_cast<int>(rng.bounded(3));
        for (int e = 0; e < episodes; ++e) {
            const auto header = make_header(rng.next_u64());
            htr::write_episode(out, header, random_episode(rng, 8, 3));
        }
        const std::string full = out.str();
        // Item boundaries from an instrumented full parse.
        std::set<std::size_t> boundaries{0};
        {
            std::istringstream in(full, std::ios::binary);
            HtrReader reader(in);
            while (reader.next()) boundaries.insert(static_cast<std::size_t>(reader.offset()));
        }
        const auto whole = parse_all(full);
        for (std::size_t k = 0; k <= full.size(); k += 7) {  // stride keeps the unit test quick
            const auto parsed = parse_all(full.substr(0, k));
            // Complete items strictly before the cut are all yielded.
            std::size_t expect_items = 0;
            {
                std::istringstream in(full, std::ios::binary);
                HtrReader reader(in);
                std::uint64_t prev = 0;
                while (auto item = reader.next()) {
                    if (reader.offset() <= k) {
                        ++expect_items;
                        prev = reader.offset();
                    } else {
                        break;
                    }
                }
                (void)prev;
            }
            REQUIRE(parsed.items.size() == expect_items);
            for (std::size_t i = 0; i < expect_items; ++i) {
                CHECK((parsed.items[i] == whole.items[i]));
            }
            // A cut on an item boundary is a valid prefix; anywhere else
            // must produce a truncation notice.
            CHECK(parsed.notice.has_value() == (boundaries.count(k) == 0));
        }
    }
}

TEST_CASE("index: episode records, monotone offsets, random access") {
    const std::string path = "test_index_tmp.htr";
    Rng rng(55);
    std::vector<std::vector<HtrFrame>> episodes;
    {
        std::ofstream out(path, std::ios::binary);
        for (int e = 0; e < 3; ++e) {
            auto frames = random_episode(rng, 8, 4);
            // Give every frame a parseable statline so the index can pull
            // terminal stats.
            for (std::size_t i = 0; i < frames.size(); ++i) {
                env::BlStats bl;
                bl.role_id = e % env::kRoleCount;
                bl.score = 100 * e + static_cast<int>(i);
                bl.turn = 10 * e + static_cast<int>(i);
                bl.depth = e + 1;
                bl.hp = bl.hp_max = 10;
                env::format_statline(bl, frames[i].tty);
            }
            htr::write_episode(out, make_header(1000 + e, e % 4), frames);
            episodes.push_back(std::move(frames));
        }
    }
    const auto index = htr::build_index(path);
    REQUIRE(index.episodes.size() == 3);
    CHECK(index.frame_offsets.size() ==
          episodes[0].size() + episodes[1].size() + episodes[2].size());
    for (std::size_t i = 1; i < index.frame_offsets.size(); ++i) {
        CHECK(index.frame_offsets[i] > index.frame_offsets[i - 1]);
    }
    std::uint64_t frame_sum = 0;
    for (int e = 0; e < 3; ++e) {
        CHECK(index.episodes[e].frame_count == episodes[e].size());
        CHECK(index.episodes[e].env_seed == 1000 + e);
        CHECK(index.episodes[e].final_score ==
              100 * e + static_cast<int>(episodes[e].size()) - 1);
        CHECK_FALSE(index.episodes[e].truncated);
        frame_sum += index.episodes[e].frame_count;
    }
    CHECK(frame_sum == index.frame_offsets.size());

    // Random access equals sequential decoding.
    std::ifstream in(path, std::ios::binary);
    std::size_t flat = 0;
    for (int e = 0; e < 3; ++e) {
        for (std::size_t i = 0; i < episodes[e].size(); ++i, ++flat) {
            const auto frame =
                htr::read_frame_at(in, index.frame_offsets[flat], index.label_space_size);
            CHECK(frame == episodes[e][i]);
        }
    }
    std::remove(path.c_str());
}

TEST_CASE("empty file is an indexing error, not an empty index") {
    const std::string path = "test_empty_tmp.htr";
    { std::ofstream out(path, std::ios::binary); }
    CHECK_THROWS(htr::build_index(path));
    std::remove(path.c_str());
}

TEST_CASE("stats on a forced corpus: scores {1,2,3} give mean 2, median 2") {
    namespace fs = std::filesystem;
    const std::string dir = "test_stats_tmp";
    fs::create_directories(dir);
    for (int e = 0; e < 3; ++e) {
        std::ofstream out(dir + "/ep" + std::to_string(e) + ".htr", std::ios::binary);
        HtrFrame frame;
        frame.strategy = static_cast<std::uint8_t>(e % 3);
        frame.flags = htr::kFinalFrameFlag;
        frame.tty.chars.fill(' ');
        env::BlStats bl;
        bl.score = e + 1;
        bl.turn = 5 * (e + 1);
        bl.hp = bl.hp_max = 10;
        env::format_statline(bl, frame.tty);
        htr::write_episode(out, make_header(e), {frame});
    }
    const auto stats = htr::compute_stats(dir);
    CHECK(stats.total_episodes == 3);
    CHECK(stats.total_transitions == 3);
    CHECK(stats.mean_score == doctest::Approx(2.0));
    CHECK(stats.median_score == 2);
    CHECK(stats.median_episode_transitions == 1);
    CHECK(stats.median_episode_turns == 10);
    std::uint64_t label_sum = stats.write_error_count;
    for (const auto v : stats.label_counts) label_sum += v;
    CHECK(label_sum == stats.total_transitions);
    fs::remove_all(dir);
}

TEST_CASE("reference stats row renders verbatim in the table") {
    htr::CorpusStats stats;
    stats.total_episodes = 10;
    stats.total_transitions = 1000;
    stats.mean_score = 123.4;
    stats.median_score = 119;
    stats.median_episode_transitions = 100;
    stats.median_episode_turns = 90;
    stats.label_counts.assign(8, 0);
    const std::string table = htr::format_stats_table(stats);
    CHECK(table.find("109,907") != std::string::npos);
    CHECK(table.find("3,244,729,367") != std::string::npos);
    CHECK(table.find("8,166") != std::string::npos);
    CHECK(table.find("5,147") != std::string::npos);
    CHECK(table.find("27,496") != std::string::npos);
    CHECK(table.find("19,991") != std::string::npos);
}
