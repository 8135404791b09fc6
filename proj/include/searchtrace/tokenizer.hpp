#pragma once

// Serialization between structured tasks/traces/plans and token sequences,
// plus the strict parser used on model output. Tokens are plain symbol
// strings; a Vocabulary maps them to dense ids for the model.
//
// Sequence formats (bos/eos framing always present):
//   maze prompt      bos  start x y  goal x y  [wall x y]*  eos
//   sokoban prompt   bos  worker x y  [box x y]x2  [dock x y]x2  [wall x y]*  eos
//   response         bos  <trace event>*  [plan x y]+  eos
//   maze event       create|close  x y  c<c>  c<h>
//   sokoban event    create|close  worker x y  [box x y]*  c<c>  c<h>
//
// Sokoban events list only boxes that are not sitting on a dock; the solved
// terminal state therefore shows the worker alone. Coordinate sets are
// emitted ascending by (x, then y).

#include <charconv>
#include <cstdint>
#include <fstream>
#include <optional>
#include <string>
#include <unordered_map>
#include <variant>
#include <vector>

#include "searchtrace/astar.hpp"
#include "searchtrace/common.hpp"
#include "searchtrace/grid.hpp"

namespace searchtrace {

using TokenList = std::vector<std::string>;
using Task = std::variant<MazeTask, SokobanTask>;

inline TaskKind kind_of(const Task& task) {
  return std::holds_alternative<MazeTask>(task) ? TaskKind::Maze
                                                : TaskKind::Sokoban;
}

inline int oracle_shortest_cost(const Task& task) {
  return std::visit([](const auto& t) { return oracle_shortest_cost(t); }, task);
}

inline PlanVerdict validate_plan(const Task& task, const Plan& plan,
                                 int oracle_cost) {
  return std::visit(
      [&](const auto& t) { return validate_plan(t, plan, oracle_cost); }, task);
}

// ---------------------------------------------------------------------------
// Vocabulary

class Vocabulary {
 public:
  static constexpr int kBos = 0;
  static constexpr int kEos = 1;

  Vocabulary() = default;

  // Minimal vocabulary for a dataset: framing + grammar keywords, numerals
  // covering the grid side, cost tokens c0..c<max_cost>.
  static Vocabulary build(TaskKind kind, int side, int max_cost) {
    if (side < 1 || max_cost < 0) {
      throw ConfigError("Vocabulary::build: bad dimensions");
    }
    Vocabulary v;
    v.add("bos");
    v.add("eos");
    if (kind == TaskKind::Maze) {
      for (const char* s : {"start", "goal", "wall", "plan", "create", "close"})
        v.add(s);
    } else {
      for (const char* s :
           {"worker", "box", "dock", "wall", "plan", "create", "close"})
        v.add(s);
    }
    for (int i = 0; i < side; ++i) v.add(std::to_string(i));
    for (int c = 0; c <= max_cost; ++c) v.add("c" + std::to_string(c));
    return v;
  }

  int size() const { return static_cast<int>(symbols_.size()); }

  bool contains(const std::string& symbol) const {
    return index_.count(symbol) != 0;
  }

  int id(const std::string& symbol) const {
    const auto it = index_.find(symbol);
    if (it == index_.end()) {
      throw EncodingError("vocabulary: unknown symbol '" + symbol + "'");
    }
    return it->second;
  }

  const std::string& symbol(int id) const {
    if (id < 0 || id >= size()) {
      throw EncodingError("vocabulary: id out of range");
    }
    return symbols_[static_cast<std::size_t>(id)];
  }

  std::vector<int> encode(const TokenList& tokens) const {
    std::vector<int> ids;
    ids.reserve(tokens.size());
    for (const auto& t : tokens) ids.push_back(id(t));
    return ids;
  }

  TokenList decode(const std::vector<int>& ids) const {
    TokenList tokens;
    tokens.reserve(ids.size());
    for (int i : ids) tokens.push_back(symbol(i));
    return tokens;
  }

  // One symbol per line; the line number is the id.
  void save(const std::string& path) const {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw IoError("vocabulary: cannot write " + path);
    for (const auto& s : symbols_) out << s << '\n';
  }

  static Vocabulary load(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw IoError("vocabulary: cannot read " + path);
    Vocabulary v;
    std::string line;
    while (std::getline(in, line)) {
      if (!line.empty()) v.add(line);
    }
    if (v.size() < 2 || v.symbols_[0] != "bos" || v.symbols_[1] != "eos") {
      throw IoError("vocabulary: malformed file " + path);
    }
    return v;
  }

 private:
  void add(const std::string& symbol) {
    index_.emplace(symbol, static_cast<int>(symbols_.size()));
    symbols_.push_back(symbol);
  }

  std::vector<std::string> symbols_;
  std::unordered_map<std::string, int> index_;
};

// ---------------------------------------------------------------------------
// Encoding

namespace detail {

inline void push_coord(TokenList& out, GridCoord c) {
  out.push_back(std::to_string(c.x));
  out.push_back(std::to_string(c.y));
}

inline void push_cost(TokenList& out, int v) {
  out.push_back("c" + std::to_string(v));
}

}  // namespace detail

inline TokenList encode_prompt(const MazeTask& task) {
  TokenList out{"bos", "start"};
  detail::push_coord(out, task.start);
  out.push_back("goal");
  detail::push_coord(out, task.goal);
  for (const auto& w : task.walls) {
    out.push_back("wall");
    detail::push_coord(out, w);
  }
  out.push_back("eos");
  return out;
}

inline TokenList encode_prompt(const SokobanTask& task) {
  TokenList out{"bos", "worker"};
  detail::push_coord(out, task.initial.worker);
  for (const auto& b : task.initial.boxes) {
    out.push_back("box");
    detail::push_coord(out, b);
  }
  for (const auto& d : task.docks) {
    out.push_back("dock");
    detail::push_coord(out, d);
  }
  for (const auto& w : task.walls) {
    out.push_back("wall");
    detail::push_coord(out, w);
  }
  out.push_back("eos");
  return out;
}

inline TokenList encode_prompt(const Task& task) {
  return std::visit([](const auto& t) { return encode_prompt(t); }, task);
}

inline void append_plan_tokens(TokenList& out, const Plan& plan) {
  for (const auto& step : plan) {
    out.push_back("plan");
    detail::push_coord(out, step);
  }
}

inline TokenList encode_response(const ExecutionTrace<GridCoord>* trace,
                                 const Plan& plan) {
  if (plan.empty()) throw EncodingError("encode_response: empty plan");
  TokenList out{"bos"};
  if (trace != nullptr) {
    for (const auto& e : *trace) {
      out.push_back(e.kind == TraceEvent<GridCoord>::Kind::Create ? "create"
                                                                  : "close");
      detail::push_coord(out, e.state);
      detail::push_cost(out, e.cost);
      detail::push_cost(out, e.heuristic);
    }
  }
  append_plan_tokens(out, plan);
  out.push_back("eos");
  return out;
}

inline TokenList encode_response(const ExecutionTrace<SokobanState>* trace,
                                 const Plan& plan, const SokobanTask& task) {
  if (plan.empty()) throw EncodingError("encode_response: empty plan");
  TokenList out{"bos"};
  if (trace != nullptr) {
    for (const auto& e : *trace) {
      out.push_back(e.kind == TraceEvent<SokobanState>::Kind::Create ? "create"
                                                                     : "close");
      out.push_back("worker");
      detail::push_coord(out, e.state.worker);
      for (const auto& b : e.state.boxes) {
        if (task.is_dock(b)) continue;
        out.push_back("box");
        detail::push_coord(out, b);
      }
      detail::push_cost(out, e.cost);
      detail::push_cost(out, e.heuristic);
    }
  }
  append_plan_tokens(out, plan);
  out.push_back("eos");
  return out;
}

// ---------------------------------------------------------------------------
// Prompt decoding (inverse of encode_prompt; the grid side is dataset-level
// metadata and is passed in).

inline std::optional<int> parse_numeral(const std::string& token, int bound) {
  if (token.empty() || token.size() > 9) return std::nullopt;
  int value = 0;
  const auto [ptr, ec] =
      std::from_chars(token.data(), token.data() + token.size(), value);
  if (ec != std::errc() || ptr != token.data() + token.size()) {
    return std::nullopt;
  }
  if (value < 0 || value >= bound) return std::nullopt;
  return value;
}

inline std::optional<int> parse_cost_token(const std::string& token) {
  if (token.size() < 2 || token[0] != 'c') return std::nullopt;
  return parse_numeral(token.substr(1), std::numeric_limits<int>::max());
}

inline Task decode_prompt(const TokenList& tokens, TaskKind kind, int side) {
  std::size_t pos = 0;
  const auto expect = [&](const std::string& symbol) {
    if (pos >= tokens.size() || tokens[pos] != symbol) {
      throw EncodingError("decode_prompt: expected '" + symbol + "' at token " +
                          std::to_string(pos));
    }
    ++pos;
  };
  const auto coord = [&]() -> GridCoord {
    if (pos + 1 >= tokens.size()) {
      throw EncodingError("decode_prompt: truncated coordinate");
    }
    const auto x = parse_numeral(tokens[pos], side);
    const auto y = parse_numeral(tokens[pos + 1], side);
    if (!x || !y) throw EncodingError("decode_prompt: bad coordinate");
    pos += 2;
    return {*x, *y};
  };

  expect("bos");
  if (kind == TaskKind::Maze) {
    MazeTask task;
    task.width = side;
    task.height = side;
    expect("start");
    task.start = coord();
    expect("goal");
    task.goal = coord();
    while (pos < tokens.size() && tokens[pos] == "wall") {
      ++pos;
      task.walls.push_back(coord());
    }
    expect("eos");
    if (pos != tokens.size()) throw EncodingError("decode_prompt: trailing tokens");
    return task;
  }
  SokobanTask task;
  task.width = side;
  task.height = side;
  expect("worker");
  task.initial.worker = coord();
  while (pos < tokens.size() && tokens[pos] == "box") {
    ++pos;
    task.initial.boxes.push_back(coord());
  }
  while (pos < tokens.size() && tokens[pos] == "dock") {
    ++pos;
    task.docks.push_back(coord());
  }
  while (pos < tokens.size() && tokens[pos] == "wall") {
    ++pos;
    task.walls.push_back(coord());
  }
  expect("eos");
  if (pos != tokens.size()) throw EncodingError("decode_prompt: trailing tokens");
  return task;
}

// ---------------------------------------------------------------------------
// Response decoding

struct DecodedEvent {
  bool is_create{};
  GridCoord position{};            // maze cell / sokoban worker
  std::vector<GridCoord> boxes;    // sokoban only; boxes listed in the event
  int cost{};
  int heuristic{};

  friend bool operator==(const DecodedEvent&, const DecodedEvent&) = default;
};

struct DecodeResult {
  bool ok{false};
  std::vector<DecodedEvent> events;
  Plan plan;
  std::size_t error_pos{};
  std::string expected;
};

// Strict grammar parse of a (possibly model-generated) response. Parse
// failure reports the offending position and the expected token class; it is
// a verdict, not an exception, because arbitrary model output is legal input.
// When `vocab` is given, any token outside it is malformed (this is how
// out-of-range cost tokens are rejected for free-text input).
inline DecodeResult decode_response(const TokenList& tokens, const Task& task,
                                    const Vocabulary* vocab = nullptr) {
  DecodeResult result;
  const TaskKind kind = kind_of(task);
  const int width = std::visit([](const auto& t) { return t.width; }, task);
  const int height = std::visit([](const auto& t) { return t.height; }, task);
  const std::size_t max_boxes =
      kind == TaskKind::Sokoban
          ? std::get<SokobanTask>(task).initial.boxes.size()
          : 0;

  std::size_t pos = 0;
  const auto fail = [&](const std::string& expected) {
    result.ok = false;
    result.error_pos = pos;
    result.expected = expected;
    return result;
  };
  const auto at = [&](const std::string& symbol) {
    return pos < tokens.size() && tokens[pos] == symbol;
  };

  if (vocab != nullptr) {
    for (std::size_t i = 0; i < tokens.size(); ++i) {
      if (!vocab->contains(tokens[i])) {
        pos = i;
        return fail("vocabulary symbol");
      }
    }
  }

  if (!at("bos")) return fail("bos");
  ++pos;

  const auto coord = [&](GridCoord& out) {
    if (pos + 1 >= tokens.size()) return false;
    const auto x = parse_numeral(tokens[pos], width);
    const auto y = parse_numeral(tokens[pos + 1], height);
    if (!x || !y) return false;
    out = {*x, *y};
    pos += 2;
    return true;
  };

  while (at("create") || at("close")) {
    DecodedEvent event;
    event.is_create = tokens[pos] == "create";
    ++pos;
    if (kind == TaskKind::Sokoban) {
      if (!at("worker")) return fail("worker");
      ++pos;
      if (!coord(event.position)) return fail("coordinate");
      while (at("box")) {
        if (event.boxes.size() == max_boxes) return fail("cost token");
        ++pos;
        GridCoord b;
        if (!coord(b)) return fail("coordinate");
        event.boxes.push_back(b);
      }
    } else {
      if (!coord(event.position)) return fail("coordinate");
    }
    for (int* slot : {&event.cost, &event.heuristic}) {
      if (pos >= tokens.size()) return fail("cost token");
      const auto v = parse_cost_token(tokens[pos]);
      if (!v) return fail("cost token");
      *slot = *v;
      ++pos;
    }
    result.events.push_back(std::move(event));
  }

  while (at("plan")) {
    ++pos;
    GridCoord step;
    if (!coord(step)) return fail("coordinate");
    result.plan.push_back(step);
  }
  if (result.plan.empty()) return fail("plan");
  if (!at("eos")) return fail("eos");
  ++pos;
  if (pos != tokens.size()) return fail("end of sequence");

  result.ok = true;
  return result;
}

// ---------------------------------------------------------------------------
// Token accounting across a full response

inline int plan_token_length(const Plan& plan) {
  return 3 * static_cast<int>(plan.size());
}

// Tokens strictly between bos and the first plan token.
inline int response_trace_tokens(const TokenList& response) {
  int count = 0;
  for (std::size_t i = 1; i < response.size(); ++i) {
    if (response[i] == "plan") break;
    if (response[i] == "eos") break;
    ++count;
  }
  return count;
}

}  // namespace searchtrace
