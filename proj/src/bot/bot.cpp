#include "gridhack/bot/bot.hpp"

#include <algorithm>
#include <deque>
#include <stdexcept>

#include "gridhack/common/serde.hpp"

namespace gridhack::bot {

using env::Action;
using env::Observation;

namespace {

constexpr int kScanDr[8] = {-1, 0, 1, 0, -1, 1, 1, -1};
constexpr int kScanDc[8] = {0, 1, 0, -1, 1, 1, -1, -1};

// Maps a (dr, dc) step onto the corresponding compass action.
Action move_action(int dr, int dc) {
    static constexpr int kDr[8] = {-1, -1, 0, 1, 1, 1, 0, -1};
    static constexpr int kDc[8] = {0, 1, 1, 1, 0, -1, -1, -1};
    for (int a = 0; a < 8; ++a) {
        if (kDr[a] == dr && kDc[a] == dc) return static_cast<Action>(a);
    }
    throw std::logic_error("not a unit step");
}

bool is_monster_glyph(std::uint8_t g) {
    for (const auto& spec : env::kMonsters) {
        if (static_cast<std::uint8_t>(spec.glyph) == g) return true;
    }
    return false;
}

bool is_loot_glyph(std::uint8_t g) { return g == '$' || g == '%' || g == '*'; }

}  // namespace

bool glyph_walkable(std::uint8_t g) {
    return g == '.' || g == '#' || g == '>' || g == '<' || is_loot_glyph(g) || g == '@';
}

const char* strategy_name(std::uint8_t label) {
    switch (label) {
        case 0: return "retreat";
        case 1: return "fight";
        case 2: return "eat";
        case 3: return "pickup";
        case 4: return "descend";
        case 5: return "explore";
        case 6: return "init";
        case 7: return "write-error";
    }
    return "?";
}

std::vector<Pos> find_path(const BotState& bot, Pos start,
                           const std::function<bool(Pos)>& is_goal) {
    const int rows = bot.map_rows;
    const int cols = bot.map_cols;
    std::vector<std::int32_t> parent(static_cast<std::size_t>(rows) * cols, -2);
    std::deque<Pos> queue;
    queue.push_back(start);
    parent[start.r * cols + start.c] = -1;
    while (!queue.empty()) {
        const Pos cur = queue.front();
        queue.pop_front();
        if (is_goal(cur) && !(cur == start)) {
            std::vector<Pos> path;
            Pos p = cur;
            while (p.r >= 0) {
                path.push_back(p);
                const std::int32_t par = parent[p.r * cols + p.c];
                if (par < 0) break;
                p = Pos{static_cast<std::int16_t>(par / cols),
                        static_cast<std::int16_t>(par % cols)};
            }
            std::reverse(path.begin(), path.end());
            return path;
        }
        for (int k = 0; k < 8; ++k) {
            const int r = cur.r + kScanDr[k];
            const int c = cur.c + kScanDc[k];
            if (r < 0 || r >= rows || c < 0 || c >= cols) continue;
            if (parent[r * cols + c] != -2) continue;
            const std::uint8_t g = bot.glyph(r, c);
            if (!glyph_walkable(g) || is_monster_glyph(g)) continue;
            parent[r * cols + c] = cur.r * cols + cur.c;
            queue.push_back(Pos{static_cast<std::int16_t>(r), static_cast<std::int16_t>(c)});
        }
    }
    return {};
}

namespace {

Pos agent_pos(const Observation& obs) {
    return Pos{static_cast<std::int16_t>(obs.blstats.y), static_cast<std::int16_t>(obs.blstats.x)};
}

// Walks one step along a freshly planned path to a goal set; replans every
// call (the map is tiny) and stores the plan for inspection.
std::optional<Action> step_along(BotState& bot, const Observation& obs,
                                 const std::function<bool(Pos)>& is_goal) {
    const Pos start = agent_pos(obs);
    std::vector<Pos> path = find_path(bot, start, is_goal);
    bot.path = path;
    if (path.size() < 2) return std::nullopt;
    return move_action(path[1].r - path[0].r, path[1].c - path[0].c);
}

bool frontier_cell(const BotState& bot, int r, int c) {
    if (!glyph_walkable(bot.glyph(r, c))) return false;
    for (int k = 0; k < 8; ++k) {
        const int rr = r + kScanDr[k];
        const int cc = c + kScanDc[k];
        if (rr < 0 || rr >= bot.map_rows || cc < 0 || cc >= bot.map_cols) continue;
        if (bot.glyph(rr, cc) == ' ' && !bot.known_blank[rr * bot.map_cols + cc]) return true;
    }
    return false;
}

int walkable_neighbors(const BotState& bot, int r, int c) {
    int n = 0;
    for (int k = 0; k < 8; ++k) {
        const int rr = r + kScanDr[k];
        const int cc = c + kScanDc[k];
        if (rr < 0 || rr >= bot.map_rows || cc < 0 || cc >= bot.map_cols) continue;
        if (glyph_walkable(bot.glyph(rr, cc))) ++n;
    }
    return n;
}

std::optional<Action> retreat_step(const StateView& view, BotState& bot) {
    const Observation& obs = view.obs;
    const Pos me = agent_pos(obs);
    // Nearest visible monsters; flee to the neighbor maximizing the
    // distance to the closest one.
    std::vector<Pos> monsters;
    for (int r = 0; r < bot.map_rows; ++r)
        for (int c = 0; c < bot.map_cols; ++c)
            if (is_monster_glyph(bot.glyph(r, c)))
                monsters.push_back(Pos{static_cast<std::int16_t>(r), static_cast<std::int16_t>(c)});
    auto closest = [&](int r, int c) {
        int best = 1 << 20;
        for (const auto& m : monsters)
            best = std::min(best, std::max(std::abs(m.r - r), std::abs(m.c - c)));
        return best;
    };
    if (!monsters.empty()) {
        const int here = closest(me.r, me.c);
        int best_gain = 0;
        std::optional<Action> best;
        for (int k = 0; k < 8; ++k) {
            const int r = me.r + kScanDr[k];
            const int c = me.c + kScanDc[k];
            if (r < 0 || r >= bot.map_rows || c < 0 || c >= bot.map_cols) continue;
            const std::uint8_t g = bot.glyph(r, c);
            if (!glyph_walkable(g) || is_monster_glyph(g)) continue;
            const int gain = closest(r, c) - here;
            if (gain > best_gain) {
                best_gain = gain;
                best = move_action(r - me.r, c - me.c);
            }
        }
        if (best) return best;
        // Cornered: fight back if adjacent, otherwise hold.
        return std::nullopt;
    }
    // No monster in sight: rest to regenerate while food lasts.
    if (obs.blstats.hunger > 0) return Action::Wait;
    return std::nullopt;
}

std::optional<Action> fight_step(const StateView& view, BotState& bot) {
    const Pos me = agent_pos(view.obs);
    for (int k = 0; k < 8; ++k) {
        const int r = me.r + kScanDr[k];
        const int c = me.c + kScanDc[k];
        if (r < 0 || r >= bot.map_rows || c < 0 || c >= bot.map_cols) continue;
        if (is_monster_glyph(bot.glyph(r, c))) {
            return move_action(r - me.r, c - me.c);
        }
    }
    return std::nullopt;
}

std::optional<Action> explore_step(const StateView& view, BotState& bot,
                                   const ControllerConfig& controller) {
    const Observation& obs = view.obs;
    // Loot first (gathering valuables is part of exploring), then map
    // frontier, then dead-end searching for hidden passages.
    auto loot_or_frontier = [&](Pos p) {
        return is_loot_glyph(bot.glyph(p.r, p.c)) || frontier_cell(bot, p.r, p.c);
    };
    if (auto a = step_along(bot, obs, loot_or_frontier)) return a;

    const Pos me = agent_pos(obs);
    if (walkable_neighbors(bot, me.r, me.c) <= 1 &&
        bot.own_searches[me.r * bot.map_cols + me.c] < controller.search_budget) {
        return Action::Search;
    }
    auto searchable_dead_end = [&](Pos p) {
        return walkable_neighbors(bot, p.r, p.c) <= 1 &&
               bot.own_searches[p.r * bot.map_cols + p.c] < controller.search_budget;
    };
    if (auto a = step_along(bot, obs, searchable_dead_end)) return a;
    return std::nullopt;
}

}  // namespace

ControllerConfig ControllerConfig::standard() {
    ControllerConfig cfg;
    cfg.entries.push_back({[](const StateView& v) {
                               return v.obs.blstats.hp * 4 < v.obs.blstats.hp_max;
                           },
                           static_cast<std::uint8_t>(Strategy::Retreat)});
    cfg.entries.push_back({[](const StateView& v) {
                               const Pos me{static_cast<std::int16_t>(v.obs.blstats.y),
                                            static_cast<std::int16_t>(v.obs.blstats.x)};
                               for (int k = 0; k < 8; ++k) {
                                   const int r = me.r + kScanDr[k];
                                   const int c = me.c + kScanDc[k];
                                   if (r < 0 || r >= v.bot.map_rows || c < 0 ||
                                       c >= v.bot.map_cols)
                                       continue;
                                   if (is_monster_glyph(v.bot.glyph(r, c))) return true;
                               }
                               return false;
                           },
                           static_cast<std::uint8_t>(Strategy::Fight)});
    cfg.entries.push_back({[threshold = cfg.hunger_threshold](const StateView& v) {
                               return v.obs.blstats.hunger < threshold && v.bot.food_held > 0;
                           },
                           static_cast<std::uint8_t>(Strategy::EatFood)});
    cfg.entries.push_back({[](const StateView& v) { return v.bot.loot_below; },
                           static_cast<std::uint8_t>(Strategy::PickUp)});
    cfg.entries.push_back({[](const StateView& v) { return v.bot.stairs_down.valid(); },
                           static_cast<std::uint8_t>(Strategy::Descend)});
    cfg.entries.push_back({[](const StateView&) { return true; },
                           static_cast<std::uint8_t>(Strategy::Explore)});
    return cfg;
}

std::uint8_t select_strategy(const StateView& view, const ControllerConfig& controller) {
    for (const auto& entry : controller.entries) {
        if (entry.predicate(view)) return entry.strategy;
    }
    throw std::logic_error("controller has no always-true fallback entry");
}

std::optional<Action> strategy_step(std::uint8_t id, const StateView& view, BotState& bot_state,
                                    const ControllerConfig& controller) {
    if (id >= kExplicitStrategies) {
        throw std::invalid_argument("strategy_step: label " + std::to_string(id) +
                                    " is not an explicit strategy");
    }
    switch (static_cast<Strategy>(id)) {
        case Strategy::Retreat:
            return retreat_step(view, bot_state);
        case Strategy::Fight:
            return fight_step(view, bot_state);
        case Strategy::EatFood: {
            if (bot_state.food_held > 0) return Action::Eat;
            return std::nullopt;
        }
        case Strategy::PickUp: {
            if (bot_state.loot_below) return Action::Pickup;
            return std::nullopt;
        }
        case Strategy::Descend: {
            if (!bot_state.stairs_down.valid()) return std::nullopt;
            const Pos me = agent_pos(view.obs);
            if (me == bot_state.stairs_down) return Action::Descend;
            const Pos goal = bot_state.stairs_down;
            if (auto a = step_along(bot_state, view.obs, [&](Pos p) { return p == goal; }))
                return a;
            return std::nullopt;
        }
        case Strategy::Explore:
            return explore_step(view, bot_state, controller);
    }
    return std::nullopt;
}

OracleBot::OracleBot(ControllerConfig controller) : controller_(std::move(controller)) {}

void OracleBot::begin_episode() { state_ = BotState{}; }

void OracleBot::ingest(const Observation& obs) {
    const int rows = env::kMapMaxRows;
    const int cols = env::kTtyCols;
    if (state_.glyphs.empty()) {
        state_.map_rows = rows;
        state_.map_cols = cols;
        state_.glyphs.assign(static_cast<std::size_t>(rows) * cols, ' ');
        state_.known_blank.assign(static_cast<std::size_t>(rows) * cols, 0);
        state_.own_searches.assign(static_cast<std::size_t>(rows) * cols, 0);
        state_.food_held = env::kRoles[obs.blstats.role_id].food;
        state_.last_depth = obs.blstats.depth;
    }
    if (obs.blstats.depth != state_.last_depth) {
        // New level: screen knowledge is level-local.
        std::fill(state_.known_blank.begin(), state_.known_blank.end(), 0);
        std::fill(state_.own_searches.begin(), state_.own_searches.end(), 0);
        state_.stairs_down = Pos{};
        state_.path.clear();
        state_.last_depth = obs.blstats.depth;
        state_.loot_below = false;
        state_.last_pos = Pos{};
    }
    for (int r = 0; r < rows; ++r) {
        for (int c = 0; c < cols; ++c) {
            state_.glyphs[r * cols + c] = obs.tty.char_at(env::kMapRow0 + r, c);
        }
    }
    const Pos me = agent_pos(obs);
    for (int dr = -1; dr <= 1; ++dr) {
        for (int dc = -1; dc <= 1; ++dc) {
            const int r = me.r + dr;
            const int c = me.c + dc;
            if (r < 0 || r >= rows || c < 0 || c >= cols) continue;
            if (state_.glyphs[r * cols + c] == ' ') state_.known_blank[r * cols + c] = 1;
        }
    }
    for (int r = 0; r < rows && !state_.stairs_down.valid(); ++r) {
        for (int c = 0; c < cols; ++c) {
            if (state_.glyphs[r * cols + c] == '>') {
                state_.stairs_down = Pos{static_cast<std::int16_t>(r), static_cast<std::int16_t>(c)};
                break;
            }
        }
    }
    // Standing on the stairs hides the '>' under '@'.
    if (!state_.stairs_down.valid() &&
        obs.message == "There is a staircase down here.") {
        state_.stairs_down = me;
    }

    // Inventory and underfoot-loot bookkeeping from messages.
    if (obs.message == "You pick up a food ration.") state_.food_held += 1;
    if (obs.message == "That food ration tasted delicious.") state_.food_held -= 1;
    if (obs.message == "You drop a food ration.") state_.food_held -= 1;
    if (!(me == state_.last_pos)) state_.loot_below = false;
    if (obs.message == "You see gold pieces here." || obs.message == "You see a food ration here." ||
        obs.message == "You see a shiny trinket here.") {
        state_.loot_below = true;
    }
    if (obs.message.rfind("You pick up", 0) == 0) state_.loot_below = false;
    state_.last_pos = me;
}

std::pair<Action, std::uint8_t> OracleBot::decide(const Observation& obs) {
    ingest(obs);
    const std::uint64_t step = state_.steps++;
    if (step < static_cast<std::uint64_t>(controller_.init_steps)) {
        // Scripted opening: look around, probe the floor, then take the
        // first exploratory move.
        if (step == 0) return {Action::Noop, kInitLabel};
        if (step == 1) return {Action::Search, kInitLabel};
        StateView view{obs, state_};
        auto a = explore_step(view, state_, controller_);
        return {a.value_or(Action::Wait), kInitLabel};
    }
    StateView view{obs, state_};
    for (const auto& entry : controller_.entries) {
        if (!entry.predicate(view)) continue;
        if (auto action = strategy_step(entry.strategy, view, state_, controller_)) {
            return {*action, entry.strategy};
        }
    }
    // Every strategy yielded: probe for hidden passages where we stand.
    return {Action::Search, static_cast<std::uint8_t>(Strategy::Explore)};
}

std::uint64_t hash_observation(const Observation& obs) {
    std::uint64_t h = fnv1a(obs.tty.chars.data(), obs.tty.chars.size());
    h = fnv1a(obs.tty.colors.data(), obs.tty.colors.size(), h);
    h = fnv1a(&obs.tty.cursor_row, 1, h);
    h = fnv1a(&obs.tty.cursor_col, 1, h);
    h = fnv1a(obs.message, h);
    for (int i = 0; i < env::BlStats::kFieldCount; ++i) {
        const std::int32_t v = obs.blstats[i];
        h = fnv1a(&v, sizeof(v), h);
    }
    h = fnv1a(obs.crop.data(), obs.crop.size(), h);
    return h;
}

EpisodeTrace run_episode(env::GridHackEnv& env, std::uint64_t seed, int role,
                         const ControllerConfig& controller) {
    EpisodeTrace trace;
    trace.seed = seed;
    trace.role = role;
    OracleBot bot(controller);
    bot.begin_episode();
    Observation obs = env.reset(seed, role);
    while (!env.done()) {
        const auto [action, label] = bot.decide(obs);
        TraceStep step;
        step.obs_hash = hash_observation(obs);
        step.action = action;
        step.strategy = label;
        auto result = env.step(action, label);
        step.reward = result.reward;
        trace.steps.push_back(step);
        obs = std::move(result.obs);
    }
    trace.final_score = env.state().score;
    trace.final_turn = env.state().turn;
    trace.max_depth = std::min(env.state().depth, env.state().num_levels);
    trace.role = role;
    return trace;
}

}  // namespace gridhack::bot
