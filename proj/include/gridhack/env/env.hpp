#pragma once

#include <cstdint>
#include <optional>
#include <stdexcept>
#include <string>
#include <vector>

#include "gridhack/common/rng.hpp"
#include "gridhack/env/types.hpp"

namespace gridhack::env {

class EnvError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

struct EnvConfig {
    // Largest number of contiguous steps that fail to advance the game
    // clock before the episode is terminated.
    int timeout = 1000;
    int min_levels = 4;
    int max_levels = 8;
    // Playable area; capped by the tty map region (21 x 80).
    int map_rows = kMapMaxRows;
    int map_cols = kMapMaxCols;
    int rooms_min = 6;
    int rooms_max = 10;
    int monsters_base = 2;       // monsters per level = base + depth scaled
    int monsters_per_depth = 1;
    int gold_piles_min = 3;
    int gold_piles_max = 6;
    int gold_amount_min = 5;
    int gold_amount_max = 20;
    int food_min = 1;
    int food_max = 3;
    int trinket_min = 0;
    int trinket_max = 2;
    int hunger_start = 450;
    int hunger_max = 1000;
    int regen_interval = 12;     // hp +1 every this many game turns while fed
    double hidden_passage_chance = 0.5;
};

enum class Tile : std::uint8_t {
    Rock = 0,
    Floor,
    Corridor,
    WallH,
    WallV,
    StairsDown,
    StairsUp,
    Hidden,  // renders as rock until revealed by searching
};

struct MonsterSpec {
    char glyph;
    const char* name;
    int level;
    int hp;
    int damage;
    int chase_radius;
};

inline constexpr int kMonsterKinds = 6;
inline constexpr MonsterSpec kMonsters[kMonsterKinds] = {
    {'r', "rat", 1, 3, 1, 6},
    {'g', "goblin", 1, 4, 1, 7},
    {'o', "orc", 2, 6, 1, 7},
    {'w', "wolf", 2, 5, 2, 9},
    {'T', "troll", 3, 10, 2, 5},
    {'O', "ogre", 4, 12, 3, 4},
};

struct Monster {
    std::int16_t r = 0;
    std::int16_t c = 0;
    std::uint8_t kind = 0;
    std::int16_t hp = 0;
};

struct GoldPile {
    std::int16_t r = 0;
    std::int16_t c = 0;
    std::int16_t amount = 0;
};

struct Item {
    std::int16_t r = 0;
    std::int16_t c = 0;
    std::uint8_t kind = 0;  // 0 = food ration, 1 = trinket
    bool scored = false;    // picking the same item up twice scores once
};

struct Room {
    std::int16_t r0 = 0, c0 = 0, h = 0, w = 0;
    bool contains(int r, int c) const {
        return r >= r0 && r < r0 + h && c >= c0 && c < c0 + w;
    }
};

struct Level {
    std::vector<Tile> tiles;            // map_rows * map_cols
    std::vector<std::uint8_t> explored;
    std::vector<std::uint8_t> search_count;
    std::vector<Room> rooms;
    std::vector<Monster> monsters;
    std::vector<GoldPile> gold;
    std::vector<Item> items;
    std::int16_t stairs_up_r = 0, stairs_up_c = 0;
    std::int16_t stairs_down_r = 0, stairs_down_c = 0;
};

struct EnvState {
    EnvConfig config;
    std::uint64_t seed = 0;
    int role = 0;
    std::vector<Level> levels;
    int num_levels = 0;
    int depth = 1;  // 1-based
    int agent_r = 0, agent_c = 0;
    int hp = 0, hp_max = 0;
    int gold = 0;
    int hunger = 0;
    int score = 0;
    int turn = 0;
    int level_xp = 0;
    int strength = 0;
    int armor = 0;
    int monsters_killed = 0;
    int items_held = 0;
    int food_held = 0;
    int non_advance_counter = 0;
    bool done = false;
    std::string message;
    Rng rng;  // consumed during generation only; stepping is rng-free
};

// Write-only observer attached to an environment. record() fires once per
// step with the pre-step frame and once more with the terminal frame when
// the episode ends; the label is absent when the caller supplied none.
class StepRecorder {
public:
    virtual ~StepRecorder() = default;
    virtual void record(const TtyFrame& tty, Action action,
                        std::optional<std::uint8_t> strategy, bool terminal) = 0;
};

struct StepResult {
    Observation obs;
    double reward = 0.0;
    bool done = false;
    bool advanced = false;  // whether the game clock moved this step
};

// Deterministic, seed-driven dungeon crawler presented through a 24x80
// terminal frame. Instances are single-threaded and independent.
class GridHackEnv {
public:
    explicit GridHackEnv(EnvConfig config = {});

    Observation reset(std::uint64_t seed, int role);
    StepResult step(Action action, std::optional<std::uint8_t> strategy_label = std::nullopt);

    // Pure renderer; also used by reset/step to compose observations.
    static TtyFrame render_tty(const EnvState& state);

    const EnvState& state() const { return state_; }
    const EnvConfig& config() const { return config_; }
    bool done() const { return state_.done; }

    // FNV-1a over the complete mutable state; used by label-transparency
    // and determinism checks.
    std::uint64_t state_hash() const;

    void set_recorder(StepRecorder* recorder) { recorder_ = recorder; }

private:
    Observation observe() const;
    BlStats blstats() const;
    void generate_level(Level& level, int depth, Rng& rng);
    void update_explored();
    bool walkable(const Level& level, int r, int c) const;
    bool in_map(int r, int c) const;
    int monster_at(const Level& level, int r, int c) const;
    bool monster_rendered(const Level& level, const Monster& m) const;
    void attack_monster(Level& level, int idx);
    void monsters_act(Level& level);
    void descend();

    EnvConfig config_;
    EnvState state_;
    bool has_episode_ = false;
    StepRecorder* recorder_ = nullptr;
};

}  // namespace gridhack::env
