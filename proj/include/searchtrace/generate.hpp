#pragma once

// Random task generation with rejection sampling. Both generators are pure
// functions of their seed and resample until a task passes admission or the
// attempt budget runs out.

#include <cstdint>

#include "searchtrace/astar.hpp"
#include "searchtrace/common.hpp"
#include "searchtrace/grid.hpp"

namespace searchtrace {

inline constexpr int kGenerationBudget = 10000;

// Draws a wall fraction uniformly in [0.30, 0.50], places walls and distinct
// start/goal cells at random, and admits the task only if the shortest plan
// has at least max(width, height) steps.
inline MazeTask generate_maze(int width, int height, std::uint64_t seed) {
  if (width < 3 || height < 3) {
    throw ConfigError("generate_maze: width and height must be >= 3");
  }
  Rng rng(seed);
  const int cells = width * height;
  for (int attempt = 0; attempt < kGenerationBudget; ++attempt) {
    const double wall_fraction = rng.uniform(0.30, 0.50);
    const int wall_count = static_cast<int>(wall_fraction * cells);

    MazeTask task;
    task.width = width;
    task.height = height;
    const auto picks = rng.sample_distinct(cells, wall_count + 2);
    for (int i = 0; i < wall_count; ++i) {
      task.walls.push_back({picks[static_cast<std::size_t>(i)] % width,
                            picks[static_cast<std::size_t>(i)] / width});
    }
    detail::sort_unique(task.walls);
    task.start = {picks[static_cast<std::size_t>(wall_count)] % width,
                  picks[static_cast<std::size_t>(wall_count)] / width};
    task.goal = {picks[static_cast<std::size_t>(wall_count) + 1] % width,
                 picks[static_cast<std::size_t>(wall_count) + 1] / width};

    const auto cost = bfs_shortest_cost(MazeDomain{task});
    if (!cost || *cost < std::max(width, height)) continue;
    return task;
  }
  throw GenerationError("generate_maze: resample budget exhausted");
}

// 7x7 grid with perimeter walls plus two random interior obstacles; two
// docks, two boxes and the worker are placed on distinct free interior
// cells. Admitted only if solvable.
inline SokobanTask generate_sokoban(std::uint64_t seed) {
  Rng rng(seed);
  constexpr int kSide = 7;
  for (int attempt = 0; attempt < kGenerationBudget; ++attempt) {
    SokobanTask task;
    task.width = kSide;
    task.height = kSide;
    for (int x = 0; x < kSide; ++x) {
      for (int y = 0; y < kSide; ++y) {
        if (x == 0 || y == 0 || x == kSide - 1 || y == kSide - 1) {
          task.walls.push_back({x, y});
        }
      }
    }

    // Interior cells, row-by-row; indices drawn without replacement.
    std::vector<GridCoord> interior;
    for (int y = 1; y < kSide - 1; ++y) {
      for (int x = 1; x < kSide - 1; ++x) interior.push_back({x, y});
    }
    const auto picks = rng.sample_distinct(static_cast<int>(interior.size()), 7);
    task.walls.push_back(interior[static_cast<std::size_t>(picks[0])]);
    task.walls.push_back(interior[static_cast<std::size_t>(picks[1])]);
    detail::sort_unique(task.walls);
    task.docks = {interior[static_cast<std::size_t>(picks[2])],
                  interior[static_cast<std::size_t>(picks[3])]};
    std::sort(task.docks.begin(), task.docks.end());
    task.initial.boxes = {interior[static_cast<std::size_t>(picks[4])],
                          interior[static_cast<std::size_t>(picks[5])]};
    std::sort(task.initial.boxes.begin(), task.initial.boxes.end());
    task.initial.worker = interior[static_cast<std::size_t>(picks[6])];

    if (!bfs_shortest_cost(SokobanDomain{task})) continue;
    return task;
  }
  throw GenerationError("generate_sokoban: resample budget exhausted");
}

}  // namespace searchtrace
