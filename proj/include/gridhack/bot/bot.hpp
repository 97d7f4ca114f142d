#pragma once

#include <cstdint>
#include <functional>
#include <optional>
#include <string>
#include <utility>
#include <vector>

#include "gridhack/env/env.hpp"
#include "gridhack/env/types.hpp"

namespace gridhack::bot {

// Strategy label space: K explicit strategies in priority order, then the
// scripted init routine (K), then the recorder's write-error class (K+1).
// The on-disk sentinel for missing labels is 255 (see htr).
inline constexpr int kExplicitStrategies = 6;
inline constexpr std::uint8_t kInitLabel = kExplicitStrategies;            // 6
inline constexpr std::uint8_t kWriteErrorLabel = kExplicitStrategies + 1;  // 7
inline constexpr std::uint8_t kLabelSpaceSize = kExplicitStrategies + 2;   // 8

enum class Strategy : std::uint8_t {
    Retreat = 0,   // hp below a quarter of max: flee or rest
    Fight = 1,     // monster adjacent
    EatFood = 2,   // hungry and holding food
    PickUp = 3,    // standing on loot
    Descend = 4,   // down staircase known
    Explore = 5,   // fallback: loot / frontier / dead-end search
};

const char* strategy_name(std::uint8_t label);

struct Pos {
    std::int16_t r = -1, c = -1;
    bool valid() const { return r >= 0; }
    bool operator==(const Pos&) const = default;
};

// Per-episode bot memory. The map view is re-read from the terminal frame
// every step (the environment remembers exploration for us); everything
// that cannot be read back off the screen is tracked here.
struct BotState {
    int map_rows = 0, map_cols = 0;
    std::vector<std::uint8_t> glyphs;       // current screen, map region only
    std::vector<std::uint8_t> known_blank;  // blank cells adjacent to visited ground
    std::vector<std::uint8_t> own_searches; // per-cell search count issued by the bot
    std::vector<Pos> path;                  // current plan, agent cell first
    Pos stairs_down;
    Pos last_pos;
    int last_depth = 0;
    int food_held = 0;
    bool loot_below = false;  // arrival message said there is loot on this cell
    std::uint64_t steps = 0;

    std::uint8_t glyph(int r, int c) const { return glyphs[r * map_cols + c]; }
};

struct StateView {
    const env::Observation& obs;
    const BotState& bot;
};

// Priority-ordered predicate table. The final entry's predicate is
// always-true; the controller selects the first entry whose predicate
// holds.
struct ControllerConfig {
    struct Entry {
        std::function<bool(const StateView&)> predicate;
        std::uint8_t strategy;
    };
    std::vector<Entry> entries;
    int init_steps = 3;
    int hunger_threshold = 300;
    int search_budget = 6;  // per-cell dead-end searches before giving up

    static ControllerConfig standard();
};

// First strategy whose predicate holds, scanning in priority order.
std::uint8_t select_strategy(const StateView& view, const ControllerConfig& controller);

// One low-level action from an explicit strategy, or nullopt to yield the
// decision back to the controller. Mutates only bot_state (path plan).
std::optional<env::Action> strategy_step(std::uint8_t id, const StateView& view,
                                         BotState& bot_state,
                                         const ControllerConfig& controller);

class OracleBot {
public:
    explicit OracleBot(ControllerConfig controller = ControllerConfig::standard());

    void begin_episode();
    // Consumes the latest observation; returns the action plus the strategy
    // label that emitted it.
    std::pair<env::Action, std::uint8_t> decide(const env::Observation& obs);

    const BotState& state() const { return state_; }
    const ControllerConfig& controller() const { return controller_; }

private:
    void ingest(const env::Observation& obs);

    ControllerConfig controller_;
    BotState state_;
};

struct TraceStep {
    std::uint64_t obs_hash = 0;
    env::Action action = env::Action::Noop;
    std::uint8_t strategy = 0;
    double reward = 0.0;
};

struct EpisodeTrace {
    std::vector<TraceStep> steps;
    int final_score = 0;
    int final_turn = 0;
    int max_depth = 1;
    int role = 0;
    std::uint64_t seed = 0;
};

std::uint64_t hash_observation(const env::Observation& obs);

// Plays one full episode in the given environment (any attached recorder
// sees every step). Deterministic given (seed, role).
EpisodeTrace run_episode(env::GridHackEnv& env, std::uint64_t seed, int role,
                         const ControllerConfig& controller = ControllerConfig::standard());

// Breadth-first shortest path over the bot's walkable view, 8-connected,
// neighbor order N, E, S, W, NE, SE, SW, NW. Returns an empty vector when
// unreachable; otherwise path[0] is the start cell.
std::vector<Pos> find_path(const BotState& bot, Pos start,
                           const std::function<bool(Pos)>& is_goal);

bool glyph_walkable(std::uint8_t g);

}  // namespace gridhack::bot
