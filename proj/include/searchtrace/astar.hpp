#pragma once

// A* search over a grid domain, logging every frontier insertion (create) and
// every expansion (close) into an execution trace. The loop follows the
// standard frontier/closed-set formulation:
//
//   frontier <- {start}                     (logged as create)
//   repeat: pop argmin f = c + h            (logged as close)
//           stop if goal, else for each child:
//             skip if any known node with the same state has f <= child f,
//             else set parent and insert    (logged as create)
//
// Insertion never deletes a stale frontier entry for the same state; stale
// entries whose state has been closed are dropped when they surface at
// selection time, so no state closes twice.
//
// Deterministic mode orders children (up, down, left, right) and selects by
// (f, h, insertion sequence); that key reproduces the reference maze trace
// exactly. Non-deterministic mode shuffles children per expansion and breaks
// f ties uniformly at random, driven by the seed.

#include <cstdint>
#include <deque>
#include <string>
#include <tuple>
#include <unordered_map>
#include <vector>

#include "searchtrace/common.hpp"
#include "searchtrace/grid.hpp"

namespace searchtrace {

enum class SearchMode { Deterministic, NonDeterministic };

inline std::string search_mode_name(SearchMode mode) {
  return mode == SearchMode::Deterministic ? "deterministic" : "nondeterministic";
}

template <typename State>
struct TraceEvent {
  enum class Kind { Create, Close };
  Kind kind{};
  State state{};
  int cost{};       // c(n), steps from start
  int heuristic{};  // h(n)

  friend bool operator==(const TraceEvent&, const TraceEvent&) = default;
};

template <typename State>
using ExecutionTrace = std::vector<TraceEvent<State>>;

template <typename State>
struct AStarResult {
  ExecutionTrace<State> trace;
  Plan plan;  // worker/agent cells along the optimal path
  int optimal_cost{};
};

template <typename Domain>
AStarResult<typename Domain::State> run_astar(const Domain& domain,
                                              SearchMode mode,
                                              std::uint64_t seed = 0) {
  using State = typename Domain::State;
  struct Node {
    State state;
    int cost;
    int heuristic;
    int parent;  // index into nodes, -1 for root
  };

  Rng rng(seed);
  AStarResult<State> result;
  std::vector<Node> nodes;
  std::vector<int> frontier;  // node indices; removal swaps with back
  std::unordered_map<State, int, typename Domain::StateHash> best_f;
  std::unordered_map<State, bool, typename Domain::StateHash> closed;

  const auto create = [&](State state, int cost, int parent) {
    const int h = domain.heuristic(state);
    result.trace.push_back(
        {TraceEvent<State>::Kind::Create, state, cost, h});
    best_f.insert_or_assign(state, cost + h);
    nodes.push_back(Node{std::move(state), cost, h, parent});
    frontier.push_back(static_cast<int>(nodes.size()) - 1);
  };

  create(domain.start(), 0, -1);

  std::vector<State> children;
  std::vector<std::size_t> order;
  while (true) {
    // Select the live argmin-f entry, dropping stale closed-state entries.
    int selected = -1;  // position within frontier
    std::size_t i = 0;
    while (i < frontier.size()) {
      const Node& n = nodes[static_cast<std::size_t>(frontier[i])];
      if (closed.count(n.state) != 0) {
        frontier[i] = frontier.back();
        frontier.pop_back();
        continue;
      }
      if (selected < 0) {
        selected = static_cast<int>(i);
      } else {
        const Node& s = nodes[static_cast<std::size_t>(frontier[static_cast<std::size_t>(selected)])];
        const long f_n = n.cost + n.heuristic;
        const long f_s = s.cost + s.heuristic;
        if (mode == SearchMode::Deterministic) {
          const auto key_n = std::tuple(f_n, long{n.heuristic}, frontier[i]);
          const auto key_s = std::tuple(f_s, long{s.heuristic},
                                        frontier[static_cast<std::size_t>(selected)]);
          if (key_n < key_s) selected = static_cast<int>(i);
        } else if (f_n < f_s) {
          selected = static_cast<int>(i);
        }
      }
      ++i;
    }
    if (selected < 0) throw NoPlanError("astar: frontier exhausted");

    if (mode == SearchMode::NonDeterministic) {
      // Uniform choice among all entries tied at the minimum f. Candidates
      // are ranked by insertion sequence so the draw is seed-stable.
      const Node& s = nodes[static_cast<std::size_t>(frontier[static_cast<std::size_t>(selected)])];
      const long f_min = s.cost + s.heuristic;
      std::vector<int> ties;
      for (std::size_t j = 0; j < frontier.size(); ++j) {
        const Node& n = nodes[static_cast<std::size_t>(frontier[j])];
        if (n.cost + n.heuristic == f_min) ties.push_back(static_cast<int>(j));
      }
      std::sort(ties.begin(), ties.end(), [&](int a, int b) {
        return frontier[static_cast<std::size_t>(a)] < frontier[static_cast<std::size_t>(b)];
      });
      selected = ties[rng.below(ties.size())];
    }

    const int node_index = frontier[static_cast<std::size_t>(selected)];
    frontier[static_cast<std::size_t>(selected)] = frontier.back();
    frontier.pop_back();
    const Node current = nodes[static_cast<std::size_t>(node_index)];

    closed.emplace(current.state, true);
    result.trace.push_back({TraceEvent<State>::Kind::Close, current.state,
                            current.cost, current.heuristic});

    if (domain.is_goal(current.state)) {
      std::vector<GridCoord> cells;
      for (int at = node_index; at >= 0; at = nodes[static_cast<std::size_t>(at)].parent) {
        cells.push_back(Domain::worker_cell(nodes[static_cast<std::size_t>(at)].state));
      }
      result.plan.assign(cells.rbegin(), cells.rend());
      result.optimal_cost = current.cost;
      return result;
    }

    domain.successors(current.state, children);
    order.resize(children.size());
    for (std::size_t k = 0; k < order.size(); ++k) order[k] = k;
    if (mode == SearchMode::NonDeterministic) rng.shuffle(order);

    for (const std::size_t k : order) {
      State& child = children[k];
      const int child_cost = current.cost + 1;
      const int child_f = child_cost + domain.heuristic(child);
      const auto known = best_f.find(child);
      if (known != best_f.end() && known->second <= child_f) continue;
      create(std::move(child), child_cost, node_index);
    }
  }
}

inline AStarResult<GridCoord> run_astar(const MazeTask& task, SearchMode mode,
                                        std::uint64_t seed = 0) {
  return run_astar(MazeDomain{task}, mode, seed);
}

inline AStarResult<SokobanState> run_astar(const SokobanTask& task,
                                           SearchMode mode,
                                           std::uint64_t seed = 0) {
  return run_astar(SokobanDomain{task}, mode, seed);
}

// ---------------------------------------------------------------------------
// Independent oracle: breadth-first search over the same successor function.
// Used by tests, plan validation and generator admission; shares no code
// with run_astar's frontier logic.

template <typename Domain>
std::optional<int> bfs_shortest_cost(const Domain& domain) {
  using State = typename Domain::State;
  std::unordered_map<State, bool, typename Domain::StateHash> seen;
  std::deque<std::pair<State, int>> queue;
  queue.emplace_back(domain.start(), 0);
  seen.emplace(domain.start(), true);
  std::vector<State> children;
  while (!queue.empty()) {
    auto [state, dist] = std::move(queue.front());
    queue.pop_front();
    if (domain.is_goal(state)) return dist;
    domain.successors(state, children);
    for (auto& child : children) {
      if (seen.emplace(child, true).second) {
        queue.emplace_back(std::move(child), dist + 1);
      }
    }
  }
  return std::nullopt;
}

template <typename Domain>
int oracle_shortest_cost(const Domain& domain) {
  const auto cost = bfs_shortest_cost(domain);
  if (!cost) throw NoPlanError("oracle: task is unsolvable");
  return *cost;
}

inline int oracle_shortest_cost(const MazeTask& task) {
  return oracle_shortest_cost(MazeDomain{task});
}

inline int oracle_shortest_cost(const SokobanTask& task) {
  return oracle_shortest_cost(SokobanDomain{task});
}

// ---------------------------------------------------------------------------
// Trace token accounting: the exact number of response tokens the tokenizer
// emits for the trace portion (excluding plan, bos, eos).

inline int trace_token_length(const ExecutionTrace<GridCoord>& trace) {
  // kind, x, y, c-token, h-token per event.
  return static_cast<int>(trace.size()) * 5;
}

inline int trace_token_length(const ExecutionTrace<SokobanState>& trace,
                              const SokobanTask& task) {
  // kind + "worker x y" + "box x y" per box off a dock + c-token + h-token.
  int total = 0;
  for (const auto& event : trace) {
    int boxes_listed = 0;
    for (const auto& b : event.state.boxes) {
      if (!task.is_dock(b)) ++boxes_listed;
    }
    total += 6 + 3 * boxes_listed;
  }
  return total;
}

}  // namespace searchtrace
