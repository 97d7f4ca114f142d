#include "gridhack/env/types.hpp"

#include <cstdio>
#include <cstring>
#include <stdexcept>
#include <string>

namespace gridhack::env {

std::array<std::uint8_t, kCropDim * kCropDim> crop_from_tty(const TtyFrame& tty) {
    std::array<std::uint8_t, kCropDim * kCropDim> crop{};
    const int cr = tty.cursor_row;
    const int cc = tty.cursor_col;
    for (int i = 0; i < kCropDim; ++i) {
        const int r = cr - kCropOffset + i;
        for (int j = 0; j < kCropDim; ++j) {
            const int c = cc - kCropOffset + j;
            std::uint8_t glyph = kOutOfBoundsGlyph;
            if (r >= kMapRow0 && r < kMapRow0 + kMapMaxRows && c >= 0 && c < kTtyCols) {
                glyph = tty.chars[r * kTtyCols + c];
            }
            crop[i * kCropDim + j] = glyph;
        }
    }
    return crop;
}

namespace {

void write_row(TtyFrame& tty, int row, const std::string& text) {
    for (int c = 0; c < kTtyCols; ++c) {
        tty.chars[row * kTtyCols + c] = c < static_cast<int>(text.size())
                                            ? static_cast<std::uint8_t>(text[c])
                                            : kBlankChar;
        tty.colors[row * kTtyCols + c] = 7;
    }
}

std::string row_text(const TtyFrame& tty, int row) {
    std::string s(reinterpret_cast<const char*>(&tty.chars[row * kTtyCols]), kTtyCols);
    while (!s.empty() && s.back() == ' ') s.pop_back();
    return s;
}

long field(const std::string& line, const char* key) {
    const std::string needle = std::string(key) + ":";
    const auto pos = line.find(needle);
    if (pos == std::string::npos) {
        throw std::runtime_error("statline missing field '" + std::string(key) + "': " + line);
    }
    return std::strtol(line.c_str() + pos + needle.size(), nullptr, 10);
}

}  // namespace

void format_statline(const BlStats& bl, TtyFrame& tty) {
    char row0[kTtyCols + 1];
    char row1[kTtyCols + 1];
    std::snprintf(row0, sizeof(row0), "%s Pos:%d,%d St:%d AC:%d Xp:%d Kill:%d Inv:%d",
                  role_name(bl.role_id), bl.x, bl.y, bl.strength, bl.armor, bl.level_xp,
                  bl.monsters_killed, bl.items_held);
    std::snprintf(row1, sizeof(row1), "Dlvl:%d Au:%d HP:%d(%d) Hu:%d Sc:%d T:%d",
                  bl.depth, bl.gold, bl.hp, bl.hp_max, bl.hunger, bl.score, bl.turn);
    write_row(tty, kStatRow0, row0);
    write_row(tty, kStatRow1, row1);
}

BlStats parse_statline(const TtyFrame& tty) {
    const std::string r0 = row_text(tty, kStatRow0);
    const std::string r1 = row_text(tty, kStatRow1);
    BlStats bl;
    bl.role_id = -1;
    for (int i = 0; i < kRoleCount; ++i) {
        const std::string name = kRoles[i].name;
        if (r0.rfind(name + " ", 0) == 0) {
            bl.role_id = i;
            break;
        }
    }
    if (bl.role_id < 0) throw std::runtime_error("statline has unknown role: " + r0);
    bl.x = static_cast<std::int32_t>(field(r0, "Pos"));
    {
        // Pos:<x>,<y>
        const auto pos = r0.find("Pos:");
        const auto comma = r0.find(',', pos);
        bl.y = static_cast<std::int32_t>(std::strtol(r0.c_str() + comma + 1, nullptr, 10));
    }
    bl.strength = static_cast<std::int32_t>(field(r0, "St"));
    bl.armor = static_cast<std::int32_t>(field(r0, "AC"));
    bl.level_xp = static_cast<std::int32_t>(field(r0, "Xp"));
    bl.monsters_killed = static_cast<std::int32_t>(field(r0, "Kill"));
    bl.items_held = static_cast<std::int32_t>(field(r0, "Inv"));
    bl.depth = static_cast<std::int32_t>(field(r1, "Dlvl"));
    bl.gold = static_cast<std::int32_t>(field(r1, "Au"));
    bl.hp = static_cast<std::int32_t>(field(r1, "HP"));
    {
        // HP:<hp>(<max>)
        const auto pos = r1.find("HP:");
        const auto paren = r1.find('(', pos);
        bl.hp_max = static_cast<std::int32_t>(std::strtol(r1.c_str() + paren + 1, nullptr, 10));
    }
    bl.hunger = static_cast<std::int32_t>(field(r1, "Hu"));
    bl.score = static_cast<std::int32_t>(field(r1, "Sc"));
    bl.turn = static_cast<std::int32_t>(field(r1, "T"));
    bl.reserved = 0;
    return bl;
}

const char* action_name(Action a) {
    switch (a) {
        case Action::MoveN: return "north";
        case Action::MoveNE: return "northeast";
        case Action::MoveE: return "east";
        case Action::MoveSE: return "southeast";
        case Action::MoveS: return "south";
        case Action::MoveSW: return "southwest";
        case Action::MoveW: return "west";
        case Action::MoveNW: return "northwest";
        case Action::Descend: return "descend";
        case Action::Eat: return "eat";
        case Action::Pickup: return "pickup";
        case Action::Search: return "search";
        case Action::Wait: return "wait";
        case Action::AttackNearest: return "attack";
        case Action::Drop: return "drop";
        case Action::Noop: return "noop";
    }
    return "?";
}

const char* role_name(int role_id) {
    if (role_id < 0 || role_id >= kRoleCount) throw std::runtime_error("bad role id");
    return kRoles[role_id].name;
}

}  // namespace gridhack::env
