#pragma once

#include <array>
#include <cstdint>
#include <string>

namespace gridhack::env {

// Terminal geometry. Row 0 is the message line, rows 1..21 hold the map,
// rows 22-23 hold the status lines.
inline constexpr int kTtyRows = 24;
inline constexpr int kTtyCols = 80;
inline constexpr int kMapRow0 = 1;
inline constexpr int kMapMaxRows = 21;
inline constexpr int kMapMaxCols = 80;
inline constexpr int kMsgRow = 0;
inline constexpr int kStatRow0 = 22;
inline constexpr int kStatRow1 = 23;

inline constexpr int kCropDim = 18;
inline constexpr std::uint8_t kBlankChar = ' ';
// Glyph id for crop cells that fall outside the map region. All real
// glyphs are printable ASCII, so 0 never collides.
inline constexpr std::uint8_t kOutOfBoundsGlyph = 0;

enum class Action : std::uint8_t {
    MoveN = 0,
    MoveNE = 1,
    MoveE = 2,
    MoveSE = 3,
    MoveS = 4,
    MoveSW = 5,
    MoveW = 6,
    MoveNW = 7,
    Descend = 8,
    Eat = 9,
    Pickup = 10,
    Search = 11,
    Wait = 12,
    AttackNearest = 13,
    Drop = 14,
    Noop = 15,
};
inline constexpr int kActionCount = 16;

// Row/col deltas for the 8 compass moves, indexed by Action code.
inline constexpr int kMoveDr[8] = {-1, -1, 0, 1, 1, 1, 0, -1};
inline constexpr int kMoveDc[8] = {0, 1, 1, 1, 0, -1, -1, -1};

struct TtyFrame {
    std::array<std::uint8_t, kTtyRows * kTtyCols> chars{};
    std::array<std::uint8_t, kTtyRows * kTtyCols> colors{};
    std::uint8_t cursor_row = 0;
    std::uint8_t cursor_col = 0;

    std::uint8_t char_at(int r, int c) const { return chars[r * kTtyCols + c]; }
    std::uint8_t color_at(int r, int c) const { return colors[r * kTtyCols + c]; }

    bool operator==(const TtyFrame&) const = default;
};

// Fixed 16-entry bottom-line statistics vector.
struct BlStats {
    std::int32_t x = 0;                // agent map column
    std::int32_t y = 0;                // agent map row
    std::int32_t hp = 0;
    std::int32_t hp_max = 0;
    std::int32_t gold = 0;
    std::int32_t depth = 1;
    std::int32_t turn = 0;
    std::int32_t hunger = 0;
    std::int32_t score = 0;
    std::int32_t role_id = 0;
    std::int32_t level_xp = 0;
    std::int32_t strength = 0;
    std::int32_t armor = 0;
    std::int32_t monsters_killed = 0;
    std::int32_t items_held = 0;
    std::int32_t reserved = 0;

    static constexpr int kFieldCount = 16;
    std::int32_t operator[](int i) const { return (&x)[i]; }
    std::int32_t& operator[](int i) { return (&x)[i]; }

    bool operator==(const BlStats&) const = default;
};

struct Observation {
    TtyFrame tty;
    std::string message;  // <= 80 bytes, printable ASCII
    BlStats blstats;
    std::array<std::uint8_t, kCropDim * kCropDim> crop{};  // glyph ids centered on the agent

    bool operator==(const Observation&) const = default;
};

inline constexpr int kRoleCount = 4;

struct RoleSpec {
    const char* name;
    int hp;
    int strength;
    int armor;
    int food;  // starting food rations
};

inline constexpr RoleSpec kRoles[kRoleCount] = {
    {"Knight", 22, 18, 6, 1},
    {"Ranger", 16, 14, 4, 2},
    {"Monk", 18, 16, 5, 0},
    {"Rogue", 14, 15, 3, 3},
};

// The crop window places the agent at cell (9, 9): rows span
// [cursor_row - 9, cursor_row + 8] and likewise for columns.
inline constexpr int kCropOffset = 9;

// Extracts the glyph crop from a rendered frame. Used both by the
// environment when composing observations and by the dataset loader when
// decoding recordings, so the two views agree by construction.
std::array<std::uint8_t, kCropDim * kCropDim> crop_from_tty(const TtyFrame& tty);

// Status-line round trip. format_statline writes rows 22/23 of the tty;
// parse_statline recovers the full 16-entry vector from those rows.
void format_statline(const BlStats& bl, TtyFrame& tty);
BlStats parse_statline(const TtyFrame& tty);

const char* action_name(Action a);
const char* role_name(int role_id);

}  // namespace gridhack::env
