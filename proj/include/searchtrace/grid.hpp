#pragma once

// Maze and Sokoban task semantics: state spaces, legal moves, heuristics and
// plan validation. Coordinates are (x, y) with the origin at the bottom-left,
// x increasing rightward and y increasing upward. All coordinate sets (walls,
// boxes, docks) are kept sorted ascending by (x, then y); that ordering is
// also the token emission order.

#include <algorithm>
#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include "searchtrace/common.hpp"

namespace searchtrace {

struct GridCoord {
  int x{};
  int y{};
  friend auto operator<=>(const GridCoord&, const GridCoord&) = default;
};

struct GridCoordHash {
  std::size_t operator()(const GridCoord& c) const {
    return static_cast<std::size_t>(c.x) * 0x9e3779b1u ^
           static_cast<std::size_t>(c.y);
  }
};

enum class TaskKind { Maze, Sokoban };

inline std::string task_kind_name(TaskKind kind) {
  return kind == TaskKind::Maze ? "maze" : "sokoban";
}

// A plan is the sequence of visited cells (maze: agent cells, Sokoban: worker
// cells), starting at the task's start position. Cost = steps = cells - 1.
using Plan = std::vector<GridCoord>;

struct PlanVerdict {
  enum class Kind { Invalid, Feasible, Optimal };
  Kind kind{Kind::Invalid};
  int cost{0};  // meaningful for Feasible/Optimal

  bool correct() const { return kind != Kind::Invalid; }
  bool optimal() const { return kind == Kind::Optimal; }

  static PlanVerdict invalid() { return {Kind::Invalid, 0}; }
  static PlanVerdict feasible(int cost) { return {Kind::Feasible, cost}; }
  static PlanVerdict optimal_cost(int cost) { return {Kind::Optimal, cost}; }
  friend bool operator==(const PlanVerdict&, const PlanVerdict&) = default;
};

namespace detail {

inline bool sorted_contains(const std::vector<GridCoord>& v, GridCoord c) {
  return std::binary_search(v.begin(), v.end(), c);
}

inline void sort_unique(std::vector<GridCoord>& v) {
  std::sort(v.begin(), v.end());
  v.erase(std::unique(v.begin(), v.end()), v.end());
}

}  // namespace detail

// ---------------------------------------------------------------------------
// Maze

struct MazeTask {
  int width{};
  int height{};
  std::vector<GridCoord> walls;  // sorted ascending (x, y)
  GridCoord start{};
  GridCoord goal{};

  bool in_bounds(GridCoord c) const {
    return c.x >= 0 && c.x < width && c.y >= 0 && c.y < height;
  }
  bool is_wall(GridCoord c) const { return detail::sorted_contains(walls, c); }

  // Structural well-formedness. Reachability is a generator admission
  // concern, not a validity one: illustrative hand-built tasks (and
  // start == goal) are accepted here.
  void validate() const {
    if (width < 1 || height < 1) throw ConfigError("maze: empty grid");
    for (const auto& w : walls) {
      if (!in_bounds(w)) throw ConfigError("maze: wall out of bounds");
    }
    if (!in_bounds(start) || !in_bounds(goal)) {
      throw ConfigError("maze: start/goal out of bounds");
    }
    if (is_wall(start) || is_wall(goal)) {
      throw ConfigError("maze: start/goal on a wall");
    }
  }
};

// Fixed successor order: up, down, left, right (before any randomization).
inline constexpr GridCoord kMoveOrder[4] = {{0, 1}, {0, -1}, {-1, 0}, {1, 0}};

struct MazeDomain {
  using State = GridCoord;
  using StateHash = GridCoordHash;

  const MazeTask& task;

  State start() const { return task.start; }
  bool is_goal(const State& s) const { return s == task.goal; }

  int heuristic(const State& s) const {
    return std::abs(s.x - task.goal.x) + std::abs(s.y - task.goal.y);
  }

  void successors(const State& s, std::vector<State>& out) const {
    out.clear();
    for (const auto& d : kMoveOrder) {
      const GridCoord n{s.x + d.x, s.y + d.y};
      if (task.in_bounds(n) && !task.is_wall(n)) out.push_back(n);
    }
  }

  static GridCoord worker_cell(const State& s) { return s; }
};

// ---------------------------------------------------------------------------
// Sokoban

struct SokobanState {
  GridCoord worker{};
  std::vector<GridCoord> boxes;  // sorted ascending (x, y)

  friend bool operator==(const SokobanState&, const SokobanState&) = default;
};

struct SokobanStateHash {
  std::size_t operator()(const SokobanState& s) const {
    std::size_t h = GridCoordHash{}(s.worker);
    for (const auto& b : s.boxes) {
      h = h * 0x100000001b3ULL ^ GridCoordHash{}(b);
    }
    return h;
  }
};

struct SokobanTask {
  int width{7};
  int height{7};
  std::vector<GridCoord> walls;  // perimeter plus interior obstacles, sorted
  std::vector<GridCoord> docks;  // sorted
  SokobanState initial;

  bool in_bounds(GridCoord c) const {
    return c.x >= 0 && c.x < width && c.y >= 0 && c.y < height;
  }
  bool is_wall(GridCoord c) const { return detail::sorted_contains(walls, c); }
  bool is_dock(GridCoord c) const { return detail::sorted_contains(docks, c); }

  void validate() const {
    if (width < 3 || height < 3) throw ConfigError("sokoban: grid too small");
    if (docks.size() != 2) throw ConfigError("sokoban: expected 2 docks");
    if (initial.boxes.size() != 2) throw ConfigError("sokoban: expected 2 boxes");
    std::vector<GridCoord> occupied{initial.worker};
    occupied.insert(occupied.end(), initial.boxes.begin(), initial.boxes.end());
    occupied.insert(occupied.end(), docks.begin(), docks.end());
    for (const auto& c : occupied) {
      if (!in_bounds(c)) throw ConfigError("sokoban: entity out of bounds");
      if (is_wall(c)) throw ConfigError("sokoban: entity on a wall");
    }
    std::sort(occupied.begin(), occupied.end());
    if (std::adjacent_find(occupied.begin(), occupied.end()) != occupied.end()) {
      throw ConfigError("sokoban: worker/boxes/docks must occupy distinct cells");
    }
  }
};

struct SokobanDomain {
  using State = SokobanState;
  using StateHash = SokobanStateHash;

  const SokobanTask& task;

  State start() const { return task.initial; }

  bool is_goal(const State& s) const {
    for (const auto& b : s.boxes) {
      if (!task.is_dock(b)) return false;
    }
    return true;
  }

  // Sum over boxes of the Manhattan distance to the nearest dock. Docks are
  // matched greedily and may be shared between boxes.
  int heuristic(const State& s) const {
    int total = 0;
    for (const auto& b : s.boxes) {
      int best = std::numeric_limits<int>::max();
      for (const auto& d : task.docks) {
        best = std::min(best, std::abs(b.x - d.x) + std::abs(b.y - d.y));
      }
      total += best;
    }
    return total;
  }

  // Worker moves up/down/left/right; moving into a box pushes it one cell
  // further if that cell is free. Fixed order before any randomization.
  void successors(const State& s, std::vector<State>& out) const {
    out.clear();
    for (const auto& d : kMoveOrder) {
      const GridCoord target{s.worker.x + d.x, s.worker.y + d.y};
      if (!task.in_bounds(target) || task.is_wall(target)) continue;
      const auto box = std::lower_bound(s.boxes.begin(), s.boxes.end(), target);
      if (box != s.boxes.end() && *box == target) {
        const GridCoord beyond{target.x + d.x, target.y + d.y};
        if (!task.in_bounds(beyond) || task.is_wall(beyond)) continue;
        if (detail::sorted_contains(s.boxes, beyond)) continue;
        State next{target, s.boxes};
        next.boxes[static_cast<std::size_t>(box - s.boxes.begin())] = beyond;
        std::sort(next.boxes.begin(), next.boxes.end());
        out.push_back(std::move(next));
      } else {
        out.push_back(State{target, s.boxes});
      }
    }
  }

  static GridCoord worker_cell(const State& s) { return s.worker; }
};

// ---------------------------------------------------------------------------
// Plan validation
//
// Simulates the plan step by step. Invalid if any step is illegal or the
// terminal condition is unmet; otherwise Optimal iff the cost equals
// oracle_cost, Feasible above it. oracle_cost must come from the search
// engine or the breadth-first oracle on the same task.

inline PlanVerdict validate_plan(const MazeTask& task, const Plan& plan,
                                 int oracle_cost) {
  if (plan.empty() || plan.front() != task.start) return PlanVerdict::invalid();
  for (std::size_t i = 0; i < plan.size(); ++i) {
    const GridCoord c = plan[i];
    if (!task.in_bounds(c) || task.is_wall(c)) return PlanVerdict::invalid();
    if (i > 0) {
      const int dist = std::abs(c.x - plan[i - 1].x) + std::abs(c.y - plan[i - 1].y);
      if (dist != 1) return PlanVerdict::invalid();
    }
  }
  if (plan.back() != task.goal) return PlanVerdict::invalid();
  const int cost = static_cast<int>(plan.size()) - 1;
  return cost == oracle_cost ? PlanVerdict::optimal_cost(cost)
                             : PlanVerdict::feasible(cost);
}

// Sokoban plans list worker cells only; box pushes are inferred from worker
// motion during replay.
inline PlanVerdict validate_plan(const SokobanTask& task, const Plan& plan,
                                 int oracle_cost) {
  if (plan.empty() || plan.front() != task.initial.worker) {
    return PlanVerdict::invalid();
  }
  SokobanState state = task.initial;
  for (std::size_t i = 1; i < plan.size(); ++i) {
    const GridCoord from = plan[i - 1];
    const GridCoord to = plan[i];
    const GridCoord d{to.x - from.x, to.y - from.y};
    if (std::abs(d.x) + std::abs(d.y) != 1) return PlanVerdict::invalid();
    if (!task.in_bounds(to) || task.is_wall(to)) return PlanVerdict::invalid();
    const auto box = std::lower_bound(state.boxes.begin(), state.boxes.end(), to);
    if (box != state.boxes.end() && *box == to) {
      const GridCoord beyond{to.x + d.x, to.y + d.y};
      if (!task.in_bounds(beyond) || task.is_wall(beyond)) {
        return PlanVerdict::invalid();
      }
      if (detail::sorted_contains(state.boxes, beyond)) {
        return PlanVerdict::invalid();
      }
      *box = beyond;
      std::sort(state.boxes.begin(), state.boxes.end());
    }
    state.worker = to;
  }
  for (const auto& b : state.boxes) {
    if (!task.is_dock(b)) return PlanVerdict::invalid();
  }
  const int cost = static_cast<int>(plan.size()) - 1;
  return cost == oracle_cost ? PlanVerdict::optimal_cost(cost)
                             : PlanVerdict::feasible(cost);
}

}  // namespace searchtrace
