#include "gridhack/env/env.hpp"

#include <algorithm>
#include <cstdlib>

#include "gridhack/common/serde.hpp"

namespace gridhack::env {

namespace {

int chebyshev(int r0, int c0, int r1, int c1) {
    return std::max(std::abs(r0 - r1), std::abs(c0 - c1));
}

// Neighbor scan order: N, E, S, W, then NE, SE, SW, NW. Shared with the
// bot's pathfinding so tie-breaks agree everywhere.
constexpr int kScanDr[8] = {-1, 0, 1, 0, -1, 1, 1, -1};
constexpr int kScanDc[8] = {0, 1, 0, -1, 1, 1, -1, -1};

struct GlyphStyle {
    std::uint8_t ch;
    std::uint8_t color;
};

GlyphStyle tile_glyph(Tile t) {
    switch (t) {
        case Tile::Rock: return {kBlankChar, 0};
        case Tile::Hidden: return {kBlankChar, 0};
        case Tile::Floor: return {'.', 7};
        case Tile::Corridor: return {'#', 8};
        case Tile::WallH: return {'-', 7};
        case Tile::WallV: return {'|', 7};
        case Tile::StairsDown: return {'>', 13};
        case Tile::StairsUp: return {'<', 13};
    }
    return {kBlankChar, 0};
}

}  // namespace

GridHackEnv::GridHackEnv(EnvConfig config) : config_(config) {
    if (config_.map_rows < 8 || config_.map_rows > kMapMaxRows ||
        config_.map_cols < 16 || config_.map_cols > kMapMaxCols) {
        throw EnvError("map size must be within 8x16..21x80");
    }
    if (config_.timeout < 1) throw EnvError("timeout must be >= 1");
    if (config_.min_levels < 1 || config_.max_levels < config_.min_levels) {
        throw EnvError("bad level count range");
    }
}

bool GridHackEnv::in_map(int r, int c) const {
    return r >= 0 && r < config_.map_rows && c >= 0 && c < config_.map_cols;
}

bool GridHackEnv::walkable(const Level& level, int r, int c) const {
    if (!in_map(r, c)) return false;
    switch (level.tiles[r * config_.map_cols + c]) {
        case Tile::Floor:
        case Tile::Corridor:
        case Tile::StairsDown:
        case Tile::StairsUp:
            return true;
        default:
            return false;
    }
}

int GridHackEnv::monster_at(const Level& level, int r, int c) const {
    for (std::size_t i = 0; i < level.monsters.size(); ++i) {
        const auto& m = level.monsters[i];
        if (m.hp > 0 && m.r == r && m.c == c) return static_cast<int>(i);
    }
    return -1;
}

void GridHackEnv::generate_level(Level& level, int depth, Rng& rng) {
    const int rows = config_.map_rows;
    const int cols = config_.map_cols;
    level.tiles.assign(rows * cols, Tile::Rock);
    level.explored.assign(rows * cols, 0);
    level.search_count.assign(rows * cols, 0);

    auto tile = [&](int r, int c) -> Tile& { return level.tiles[r * cols + c]; };

    // Rooms: rejection-placed rectangles with a one-cell gap between hulls.
    const int room_target = rng.range(config_.rooms_min, config_.rooms_max);
    for (int i = 0; i < room_target; ++i) {
        for (int attempt = 0; attempt < 50; ++attempt) {
            const int h = rng.range(3, 6);
            const int w = rng.range(5, 12);
            if (rows - h - 2 < 1 || cols - w - 2 < 1) break;
            const int r0 = rng.range(1, rows - h - 1);
            const int c0 = rng.range(1, cols - w - 1);
            bool clear = true;
            for (const auto& room : level.rooms) {
                if (r0 - 2 < room.r0 + room.h && room.r0 - 2 < r0 + h &&
                    c0 - 2 < room.c0 + room.w && room.c0 - 2 < c0 + w) {
                    clear = false;
                    break;
                }
            }
            if (!clear) continue;
            level.rooms.push_back({static_cast<std::int16_t>(r0), static_cast<std::int16_t>(c0),
                                   static_cast<std::int16_t>(h), static_cast<std::int16_t>(w)});
            for (int r = r0; r < r0 + h; ++r)
                for (int c = c0; c < c0 + w; ++c) tile(r, c) = Tile::Floor;
            for (int c = c0 - 1; c <= c0 + w; ++c) {
                tile(r0 - 1, c) = Tile::WallH;
                tile(r0 + h, c) = Tile::WallH;
            }
            for (int r = r0; r < r0 + h; ++r) {
                tile(r, c0 - 1) = Tile::WallV;
                tile(r, c0 + w) = Tile::WallV;
            }
            break;
        }
    }
    if (level.rooms.size() < 2) {
        // Degenerate seed; carve a fallback pair so the level is playable.
        level.rooms.clear();
        level.rooms.push_back({1, 1, 4, 8});
        level.rooms.push_back({static_cast<std::int16_t>(rows - 5),
                               static_cast<std::int16_t>(cols - 10), 4, 8});
        for (const auto& room : level.rooms)
            for (int r = room.r0; r < room.r0 + room.h; ++r)
                for (int c = room.c0; c < room.c0 + room.w; ++c) tile(r, c) = Tile::Floor;
    }

    // L-shaped corridors along the room chain, plus one optional loop
    // corridor that may carry a hidden segment. Hidden cells only ever
    // appear on the loop so the spanning connection stays open.
    auto carve = [&](int r0, int c0, int r1, int c1, bool horizontal_first,
                     std::vector<int>* fresh) {
        int r = r0, c = c0;
        auto dig = [&](int rr, int cc) {
            Tile& t = tile(rr, cc);
            if (t == Tile::Rock) {
                t = Tile::Corridor;
                if (fresh) fresh->push_back(rr * cols + cc);
            } else if (t == Tile::WallH || t == Tile::WallV) {
                t = Tile::Corridor;
            }
        };
        if (horizontal_first) {
            for (; c != c1; c += (c1 > c) ? 1 : -1) dig(r, c);
            for (; r != r1; r += (r1 > r) ? 1 : -1) dig(r, c);
        } else {
            for (; r != r1; r += (r1 > r) ? 1 : -1) dig(r, c);
            for (; c != c1; c += (c1 > c) ? 1 : -1) dig(r, c);
        }
        dig(r1, c1);
    };

    auto center_r = [](const Room& room) { return room.r0 + room.h / 2; };
    auto center_c = [](const Room& room) { return room.c0 + room.w / 2; };

    for (std::size_t i = 0; i + 1 < level.rooms.size(); ++i) {
        carve(center_r(level.rooms[i]), center_c(level.rooms[i]), center_r(level.rooms[i + 1]),
              center_c(level.rooms[i + 1]), rng.chance(0.5), nullptr);
    }
    if (level.rooms.size() > 2) {
        std::vector<int> fresh;
        carve(center_r(level.rooms.back()), center_c(level.rooms.back()),
              center_r(level.rooms.front()), center_c(level.rooms.front()), rng.chance(0.5),
              &fresh);
        if (!fresh.empty() && rng.chance(config_.hidden_passage_chance)) {
            const int mid = static_cast<int>(fresh.size()) / 2;
            const int span = std::min<int>(3, static_cast<int>(fresh.size()));
            for (int k = 0; k < span; ++k) {
                const int idx = fresh[std::min<int>(mid + k, static_cast<int>(fresh.size()) - 1)];
                level.tiles[idx] = Tile::Hidden;
            }
        }
    }

    // Stairs: up in the first room (arrival point), down in the room whose
    // center lies farthest from it.
    const Room& first = level.rooms.front();
    level.stairs_up_r = static_cast<std::int16_t>(center_r(first));
    level.stairs_up_c = static_cast<std::int16_t>(center_c(first));
    std::size_t far_idx = level.rooms.size() - 1;
    long best = -1;
    for (std::size_t i = 1; i < level.rooms.size(); ++i) {
        const long dr = center_r(level.rooms[i]) - level.stairs_up_r;
        const long dc = center_c(level.rooms[i]) - level.stairs_up_c;
        const long d2 = dr * dr + dc * dc;
        if (d2 > best) {
            best = d2;
            far_idx = i;
        }
    }
    level.stairs_down_r = static_cast<std::int16_t>(center_r(level.rooms[far_idx]));
    level.stairs_down_c = static_cast<std::int16_t>(center_c(level.rooms[far_idx]));
    tile(level.stairs_up_r, level.stairs_up_c) = Tile::StairsUp;
    tile(level.stairs_down_r, level.stairs_down_c) = Tile::StairsDown;

    auto occupied = [&](int r, int c) {
        if (tile(r, c) != Tile::Floor) return true;
        for (const auto& g : level.gold)
            if (g.r == r && g.c == c) return true;
        for (const auto& it : level.items)
            if (it.r == r && it.c == c) return true;
        for (const auto& m : level.monsters)
            if (m.r == r && m.c == c) return true;
        return false;
    };
    auto pick_floor = [&](int min_dist_from_start) -> std::pair<int, int> {
        for (int attempt = 0; attempt < 200; ++attempt) {
            const auto& room = level.rooms[rng.bounded(level.rooms.size())];
            const int r = rng.range(room.r0, room.r0 + room.h - 1);
            const int c = rng.range(room.c0, room.c0 + room.w - 1);
            if (occupied(r, c)) continue;
            if (chebyshev(r, c, level.stairs_up_r, level.stairs_up_c) < min_dist_from_start)
                continue;
            return {r, c};
        }
        return {-1, -1};
    };

    const int piles = rng.range(config_.gold_piles_min, config_.gold_piles_max);
    for (int i = 0; i < piles; ++i) {
        auto [r, c] = pick_floor(0);
        if (r < 0) break;
        level.gold.push_back({static_cast<std::int16_t>(r), static_cast<std::int16_t>(c),
                              static_cast<std::int16_t>(
                                  rng.range(config_.gold_amount_min, config_.gold_amount_max))});
    }
    const int foods = rng.range(config_.food_min, config_.food_max);
    for (int i = 0; i < foods; ++i) {
        auto [r, c] = pick_floor(0);
        if (r < 0) break;
        level.items.push_back({static_cast<std::int16_t>(r), static_cast<std::int16_t>(c), 0, false});
    }
    const int trinkets = rng.range(config_.trinket_min, config_.trinket_max);
    for (int i = 0; i < trinkets; ++i) {
        auto [r, c] = pick_floor(0);
        if (r < 0) break;
        level.items.push_back({static_cast<std::int16_t>(r), static_cast<std::int16_t>(c), 1, false});
    }

    static constexpr int kPoolByDepth[5][3] = {
        {0, 1, 1},  // depth 1: rat, goblin, goblin
        {1, 2, 3},  // depth 2: goblin, orc, wolf
        {2, 3, 4},  // depth 3: orc, wolf, troll
        {3, 4, 5},  // depth 4: wolf, troll, ogre
        {4, 5, 5},  // depth 5+: troll, ogre, ogre
    };
    const int pool = std::min(depth, 5) - 1;
    const int monsters = config_.monsters_base + (depth * config_.monsters_per_depth);
    for (int i = 0; i < monsters; ++i) {
        auto [r, c] = pick_floor(6);
        if (r < 0) break;
        const int kind = kPoolByDepth[pool][rng.bounded(3)];
        level.monsters.push_back({static_cast<std::int16_t>(r), static_cast<std::int16_t>(c),
                                  static_cast<std::uint8_t>(kind),
                                  static_cast<std::int16_t>(kMonsters[kind].hp)});
    }
}

Observation GridHackEnv::reset(std::uint64_t seed, int role) {
    if (role < 0 || role >= kRoleCount) {
        throw EnvError("role id must be in [0, " + std::to_string(kRoleCount - 1) +
                       "], got " + std::to_string(role));
    }
    state_ = EnvState{};
    state_.config = config_;
    state_.seed = seed;
    state_.role = role;
    state_.rng = Rng::fork(seed, 0);
    state_.num_levels = config_.min_levels +
                        static_cast<int>(state_.rng.bounded(
                            static_cast<std::uint64_t>(config_.max_levels - config_.min_levels + 1)));
    state_.levels.resize(state_.num_levels);
    for (int d = 1; d <= state_.num_levels; ++d) {
        Rng level_rng = Rng::fork(seed, static_cast<std::uint64_t>(d));
        generate_level(state_.levels[d - 1], d, level_rng);
    }
    const RoleSpec& spec = kRoles[role];
    state_.hp = state_.hp_max = spec.hp;
    state_.strength = spec.strength;
    state_.armor = spec.armor;
    state_.food_held = spec.food;
    state_.items_held = spec.food;
    state_.hunger = config_.hunger_start;
    state_.depth = 1;
    state_.agent_r = state_.levels[0].stairs_up_r;
    state_.agent_c = state_.levels[0].stairs_up_c;
    state_.message = "Welcome to the dungeon!";
    update_explored();
    has_episode_ = true;
    return observe();
}

void GridHackEnv::update_explored() {
    Level& level = state_.levels[std::min(state_.depth, state_.num_levels) - 1];
    const int cols = config_.map_cols;
    for (const auto& room : level.rooms) {
        if (room.contains(state_.agent_r, state_.agent_c)) {
            for (int r = room.r0 - 1; r <= room.r0 + room.h; ++r)
                for (int c = room.c0 - 1; c <= room.c0 + room.w; ++c)
                    if (in_map(r, c)) level.explored[r * cols + c] = 1;
        }
    }
    for (int dr = -1; dr <= 1; ++dr) {
        for (int dc = -1; dc <= 1; ++dc) {
            const int r = state_.agent_r + dr;
            const int c = state_.agent_c + dc;
            if (in_map(r, c)) level.explored[r * cols + c] = 1;
        }
    }
}

bool GridHackEnv::monster_rendered(const Level& level, const Monster& m) const {
    if (m.hp <= 0) return false;
    if (!level.explored[m.r * config_.map_cols + m.c]) return false;
    for (const auto& room : level.rooms) {
        if (room.contains(state_.agent_r, state_.agent_c) && room.contains(m.r, m.c)) return true;
    }
    return chebyshev(m.r, m.c, state_.agent_r, state_.agent_c) <= 8;
}

TtyFrame GridHackEnv::render_tty(const EnvState& state) {
    TtyFrame tty;
    tty.chars.fill(kBlankChar);
    tty.colors.fill(0);

    const EnvConfig& cfg = state.config;
    // depth exceeds num_levels once the agent escapes; keep showing the
    // deepest level on the terminal frame.
    const Level& level = state.levels[std::min(state.depth, state.num_levels) - 1];
    const int cols = cfg.map_cols;

    for (int r = 0; r < cfg.map_rows; ++r) {
        for (int c = 0; c < cols; ++c) {
            if (!level.explored[r * cols + c]) continue;
            const GlyphStyle g = tile_glyph(level.tiles[r * cols + c]);
            tty.chars[(kMapRow0 + r) * kTtyCols + c] = g.ch;
            tty.colors[(kMapRow0 + r) * kTtyCols + c] = g.color;
        }
    }
    auto put = [&](int r, int c, std::uint8_t ch, std::uint8_t color) {
        tty.chars[(kMapRow0 + r) * kTtyCols + c] = ch;
        tty.colors[(kMapRow0 + r) * kTtyCols + c] = color;
    };
    for (const auto& g : level.gold) {
        if (level.explored[g.r * cols + g.c]) put(g.r, g.c, '$', 11);
    }
    for (const auto& it : level.items) {
        if (level.explored[it.r * cols + it.c]) put(it.r, it.c, it.kind == 0 ? '%' : '*',
                                                    it.kind == 0 ? 10 : 14);
    }
    // Monster visibility depends on agent position; mirror the member
    // helper here so the renderer stays a pure function of state.
    for (const auto& m : level.monsters) {
        if (m.hp <= 0) continue;
        if (!level.explored[m.r * cols + m.c]) continue;
        bool shown = chebyshev(m.r, m.c, state.agent_r, state.agent_c) <= 8;
        if (!shown) {
            for (const auto& room : level.rooms) {
                if (room.contains(state.agent_r, state.agent_c) && room.contains(m.r, m.c)) {
                    shown = true;
                    break;
                }
            }
        }
        if (shown) put(m.r, m.c, static_cast<std::uint8_t>(kMonsters[m.kind].glyph), 9);
    }
    put(state.agent_r, state.agent_c, '@', 15);

    // Message row.
    for (int c = 0; c < kTtyCols && c < static_cast<int>(state.message.size()); ++c) {
        tty.chars[kMsgRow * kTtyCols + c] = static_cast<std::uint8_t>(state.message[c]);
        tty.colors[kMsgRow * kTtyCols + c] = 15;
    }

    BlStats bl;
    bl.x = state.agent_c;
    bl.y = state.agent_r;
    bl.hp = state.hp;
    bl.hp_max = state.hp_max;
    bl.gold = state.gold;
    bl.depth = state.depth;
    bl.turn = state.turn;
    bl.hunger = state.hunger;
    bl.score = state.score;
    bl.role_id = state.role;
    bl.level_xp = state.level_xp;
    bl.strength = state.strength;
    bl.armor = state.armor;
    bl.monsters_killed = state.monsters_killed;
    bl.items_held = state.items_held;
    format_statline(bl, tty);

    tty.cursor_row = static_cast<std::uint8_t>(kMapRow0 + state.agent_r);
    tty.cursor_col = static_cast<std::uint8_t>(state.agent_c);
    return tty;
}

BlStats GridHackEnv::blstats() const {
    BlStats bl;
    bl.x = state_.agent_c;
    bl.y = state_.agent_r;
    bl.hp = state_.hp;
    bl.hp_max = state_.hp_max;
    bl.gold = state_.gold;
    bl.depth = state_.depth;
    bl.turn = state_.turn;
    bl.hunger = state_.hunger;
    bl.score = state_.score;
    bl.role_id = state_.role;
    bl.level_xp = state_.level_xp;
    bl.strength = state_.strength;
    bl.armor = state_.armor;
    bl.monsters_killed = state_.monsters_killed;
    bl.items_held = state_.items_held;
    return bl;
}

Observation GridHackEnv::observe() const {
    Observation obs;
    obs.tty = render_tty(state_);
    obs.message = state_.message;
    obs.blstats = blstats();
    obs.crop = crop_from_tty(obs.tty);
    return obs;
}

void GridHackEnv::attack_monster(Level& level, int idx) {
    Monster& m = level.monsters[idx];
    const MonsterSpec& spec = kMonsters[m.kind];
    const int damage = 1 + state_.strength / 5;
    m.hp = static_cast<std::int16_t>(m.hp - damage);
    if (m.hp <= 0) {
        state_.score += 10 * spec.level;
        state_.level_xp += spec.level;
        state_.monsters_killed += 1;
        state_.message = "You kill the " + std::string(spec.name) + "!";
    } else {
        state_.message = "You hit the " + std::string(spec.name) + ".";
    }
}

void GridHackEnv::monsters_act(Level& level) {
    for (auto& m : level.monsters) {
        if (m.hp <= 0) continue;
        const MonsterSpec& spec = kMonsters[m.kind];
        const int dist = chebyshev(m.r, m.c, state_.agent_r, state_.agent_c);
        if (dist == 1) {
            const int damage = std::max(1, spec.damage - state_.armor / 4);
            state_.hp -= damage;
            state_.message = "The " + std::string(spec.name) + " hits you!";
            continue;
        }
        if (dist > spec.chase_radius) continue;
        int best_r = m.r, best_c = m.c, best_d = dist;
        for (int k = 0; k < 8; ++k) {
            const int r = m.r + kScanDr[k];
            const int c = m.c + kScanDc[k];
            if (!walkable(level, r, c)) continue;
            if (r == state_.agent_r && c == state_.agent_c) continue;
            if (monster_at(level, r, c) >= 0) continue;
            const int d = chebyshev(r, c, state_.agent_r, state_.agent_c);
            if (d < best_d) {
                best_d = d;
                best_r = r;
                best_c = c;
            }
        }
        m.r = static_cast<std::int16_t>(best_r);
        m.c = static_cast<std::int16_t>(best_c);
    }
}

void GridHackEnv::descend() {
    state_.score += 50;
    state_.depth += 1;
    if (state_.depth > state_.num_levels) {
        state_.done = true;
        state_.message = "You escape the dungeon with your loot!";
        state_.depth = state_.num_levels + 1;
        return;
    }
    const Level& level = state_.levels[state_.depth - 1];
    state_.agent_r = level.stairs_up_r;
    state_.agent_c = level.stairs_up_c;
    state_.message = "You descend the stairs.";
    update_explored();
}

StepResult GridHackEnv::step(Action action, std::optional<std::uint8_t> strategy_label) {
    if (!has_episode_) throw EnvError("step before reset");
    if (state_.done) throw EnvError("step after episode is done");
    const int code = static_cast<int>(action);
    if (code < 0 || code >= kActionCount) {
        throw EnvError("unknown action code " + std::to_string(code));
    }

    if (recorder_) {
        recorder_->record(render_tty(state_), action, strategy_label, false);
    }

    const int score_before = state_.score;
    Level& level = state_.levels[state_.depth - 1];
    bool advanced = false;
    state_.message.clear();

    switch (action) {
        case Action::MoveN:
        case Action::MoveNE:
        case Action::MoveE:
        case Action::MoveSE:
        case Action::MoveS:
        case Action::MoveSW:
        case Action::MoveW:
        case Action::MoveNW: {
            const int r = state_.agent_r + kMoveDr[code];
            const int c = state_.agent_c + kMoveDc[code];
            const int midx = in_map(r, c) ? monster_at(level, r, c) : -1;
            if (midx >= 0) {
                attack_monster(level, midx);
                advanced = true;
            } else if (walkable(level, r, c)) {
                state_.agent_r = r;
                state_.agent_c = c;
                update_explored();
                for (const auto& g : level.gold)
                    if (g.r == r && g.c == c) state_.message = "You see gold pieces here.";
                for (const auto& it : level.items)
                    if (it.r == r && it.c == c)
                        state_.message = it.kind == 0 ? "You see a food ration here."
                                                      : "You see a shiny trinket here.";
                if (level.tiles[r * config_.map_cols + c] == Tile::StairsDown)
                    state_.message = "There is a staircase down here.";
                advanced = true;
            } else {
                state_.message = "You bump into a wall.";
            }
            break;
        }
        case Action::Descend: {
            if (level.tiles[state_.agent_r * config_.map_cols + state_.agent_c] ==
                Tile::StairsDown) {
                descend();
                advanced = true;
            } else {
                state_.message = "You can't go down here.";
            }
            break;
        }
        case Action::Eat: {
            if (state_.food_held > 0) {
                state_.food_held -= 1;
                state_.items_held -= 1;
                state_.hunger = std::min(config_.hunger_max, state_.hunger + 400);
                state_.message = "That food ration tasted delicious.";
                advanced = true;
            } else {
                state_.message = "You have nothing to eat.";
            }
            break;
        }
        case Action::Pickup: {
            bool picked = false;
            for (auto it = level.gold.begin(); it != level.gold.end(); ++it) {
                if (it->r == state_.agent_r && it->c == state_.agent_c) {
                    state_.gold += it->amount;
                    state_.score += it->amount;
                    state_.message = "You pick up " + std::to_string(it->amount) + " gold pieces.";
                    level.gold.erase(it);
                    picked = true;
                    break;
                }
            }
            if (!picked) {
                for (auto it = level.items.begin(); it != level.items.end(); ++it) {
                    if (it->r == state_.agent_r && it->c == state_.agent_c) {
                        if (it->kind == 0) {
                            state_.food_held += 1;
                            state_.message = "You pick up a food ration.";
                        } else {
                            state_.message = "You pick up a shiny trinket.";
                        }
                        state_.items_held += 1;
                        if (!it->scored) state_.score += 5;
                        level.items.erase(it);
                        picked = true;
                        break;
                    }
                }
            }
            if (picked) {
                advanced = true;
            } else {
                state_.message = "There is nothing here to pick up.";
            }
            break;
        }
        case Action::Search: {
            level.search_count[state_.agent_r * config_.map_cols + state_.agent_c] += 1;
            const int count =
                level.search_count[state_.agent_r * config_.map_cols + state_.agent_c];
            bool found = false;
            if (count >= 3) {
                for (int dr = -1; dr <= 1; ++dr) {
                    for (int dc = -1; dc <= 1; ++dc) {
                        const int r = state_.agent_r + dr;
                        const int c = state_.agent_c + dc;
                        if (in_map(r, c) &&
                            level.tiles[r * config_.map_cols + c] == Tile::Hidden) {
                            level.tiles[r * config_.map_cols + c] = Tile::Corridor;
                            level.explored[r * config_.map_cols + c] = 1;
                            found = true;
                        }
                    }
                }
            }
            state_.message = found ? "You find a hidden passage!" : "You search the floor.";
            advanced = true;
            break;
        }
        case Action::Wait: {
            state_.message = "You wait.";
            advanced = true;
            break;
        }
        case Action::AttackNearest: {
            int target = -1;
            for (int k = 0; k < 8 && target < 0; ++k) {
                const int r = state_.agent_r + kScanDr[k];
                const int c = state_.agent_c + kScanDc[k];
                if (in_map(r, c)) target = monster_at(level, r, c);
            }
            if (target >= 0) {
                attack_monster(level, target);
                advanced = true;
            } else {
                // Step toward the nearest rendered monster, if any.
                int best = -1, best_d = 1 << 20;
                for (std::size_t i = 0; i < level.monsters.size(); ++i) {
                    const auto& m = level.monsters[i];
                    if (!monster_rendered(level, m)) continue;
                    const int d = chebyshev(m.r, m.c, state_.agent_r, state_.agent_c);
                    if (d < best_d) {
                        best_d = d;
                        best = static_cast<int>(i);
                    }
                }
                bool moved = false;
                if (best >= 0) {
                    const auto& m = level.monsters[best];
                    for (int k = 0; k < 8; ++k) {
                        const int r = state_.agent_r + kScanDr[k];
                        const int c = state_.agent_c + kScanDc[k];
                        if (!walkable(level, r, c) || monster_at(level, r, c) >= 0) continue;
                        if (chebyshev(r, c, m.r, m.c) < best_d) {
                            state_.agent_r = r;
                            state_.agent_c = c;
                            update_explored();
                            moved = true;
                            break;
                        }
                    }
                }
                if (moved) {
                    advanced = true;
                } else {
                    state_.message = "You see no monster to attack.";
                }
            }
            break;
        }
        case Action::Drop: {
            bool dropped = false;
            if (state_.items_held > 0) {
                bool cell_free = true;
                for (const auto& g : level.gold)
                    if (g.r == state_.agent_r && g.c == state_.agent_c) cell_free = false;
                for (const auto& it : level.items)
                    if (it.r == state_.agent_r && it.c == state_.agent_c) cell_free = false;
                if (cell_free) {
                    // Trinkets drop first; food is kept as long as possible.
                    const int trinkets = state_.items_held - state_.food_held;
                    std::uint8_t kind = 1;
                    if (trinkets <= 0) {
                        kind = 0;
                        state_.food_held -= 1;
                    }
                    state_.items_held -= 1;
                    level.items.push_back({static_cast<std::int16_t>(state_.agent_r),
                                           static_cast<std::int16_t>(state_.agent_c), kind, true});
                    state_.message = kind == 0 ? "You drop a food ration." : "You drop a trinket.";
                    dropped = true;
                }
            }
            if (dropped) {
                advanced = true;
            } else {
                state_.message = "You have nothing to drop here.";
            }
            break;
        }
        case Action::Noop:
            break;
    }

    if (advanced) {
        state_.non_advance_counter = 0;
        if (!state_.done) {
            Level& lvl = state_.levels[std::min(state_.depth, state_.num_levels) - 1];
            monsters_act(lvl);
            state_.turn += 1;
            if (state_.hunger > 0) {
                state_.hunger -= 1;
                if (state_.hunger == 300) state_.message = "You are getting hungry.";
                if (state_.hunger == 0) state_.message = "You are starving!";
            } else {
                state_.hp -= 1;
            }
            if (state_.hp < state_.hp_max && state_.hunger > 0 &&
                state_.turn % config_.regen_interval == 0) {
                state_.hp += 1;
            }
            if (state_.hp <= 0) {
                state_.hp = 0;
                state_.done = true;
                state_.message = "You die...";
            }
        }
    } else {
        state_.non_advance_counter += 1;
        if (state_.non_advance_counter >= config_.timeout) {
            state_.done = true;
        }
    }

    StepResult result;
    result.reward = static_cast<double>(state_.score - score_before);
    result.done = state_.done;
    result.advanced = advanced;
    result.obs = observe();

    if (state_.done && recorder_) {
        // The terminal observation frame is owned by the strategy that
        // ended the episode; a timeout is an env-driven termination with
        // no strategy behind it, so its label is genuinely missing.
        const bool timeout_end = !advanced && state_.non_advance_counter >= config_.timeout;
        recorder_->record(result.obs.tty, Action::Noop,
                          timeout_end ? std::nullopt : strategy_label, true);
    }
    return result;
}

std::uint64_t GridHackEnv::state_hash() const {
    std::uint64_t h = 0xcbf29ce484222325ULL;
    auto mix_int = [&h](std::int64_t v) { h = fnv1a(&v, sizeof(v), h); };
    mix_int(state_.seed);
    mix_int(state_.role);
    mix_int(state_.num_levels);
    mix_int(state_.depth);
    mix_int(state_.agent_r);
    mix_int(state_.agent_c);
    mix_int(state_.hp);
    mix_int(state_.hp_max);
    mix_int(state_.gold);
    mix_int(state_.hunger);
    mix_int(state_.score);
    mix_int(state_.turn);
    mix_int(state_.level_xp);
    mix_int(state_.strength);
    mix_int(state_.armor);
    mix_int(state_.monsters_killed);
    mix_int(state_.items_held);
    mix_int(state_.food_held);
    mix_int(state_.non_advance_counter);
    mix_int(state_.done ? 1 : 0);
    h = fnv1a(state_.message, h);
    for (const auto& level : state_.levels) {
        h = fnv1a(level.tiles.data(), level.tiles.size() * sizeof(Tile), h);
        h = fnv1a(level.explored.data(), level.explored.size(), h);
        h = fnv1a(level.search_count.data(), level.search_count.size(), h);
        for (const auto& m : level.monsters) {
            mix_int(m.r);
            mix_int(m.c);
            mix_int(m.kind);
            mix_int(m.hp);
        }
        for (const auto& g : level.gold) {
            mix_int(g.r);
            mix_int(g.c);
            mix_int(g.amount);
        }
        for (const auto& it : level.items) {
            mix_int(it.r);
            mix_int(it.c);
            mix_int(it.kind);
            mix_int(it.scored ? 1 : 0);
        }
    }
    return h;
}

}  // namespace gridhack::env
