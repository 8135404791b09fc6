#pragma once

// Versioned checkpoint container: one JSON header line (magic, config,
// vocabulary reference, training step, optimizer-state flag) followed by the
// flat parameter arrays as little-endian float32 in for_each_param order.
// When optimizer state is present, the first and second Adam moments follow
// in the same order. save -> load -> save is byte-identical.

#include <bit>
#include <cstdint>
#include <fstream>
#include <optional>
#include <string>

#include <json.hpp>

#include "searchtrace/common.hpp"
#include "searchtrace/model.hpp"

namespace searchtrace {

static_assert(std::endian::native == std::endian::little,
              "checkpoint format assumes a little-endian host");

inline constexpr const char* kCheckpointMagic = "STCHKPT1";

struct OptimizerState {
  ModelParameters<float> m;  // first moment
  ModelParameters<float> v;  // second moment
  std::int64_t step{0};
};

struct Checkpoint {
  ModelParameters<float> params;
  std::string vocab_ref;  // file name of the vocabulary this model speaks
  std::int64_t step{0};
  std::optional<OptimizerState> optimizer;
};

inline void to_json(nlohmann::json& j, const ModelConfig& c) {
  j = nlohmann::json{{"layers", c.layers},
                     {"heads", c.heads},
                     {"head_dim", c.head_dim},
                     {"vocab_size", c.vocab_size},
                     {"rope_base", c.rope_base},
                     {"max_seq_len", c.max_seq_len}};
}

inline void from_json(const nlohmann::json& j, ModelConfig& c) {
  j.at("layers").get_to(c.layers);
  j.at("heads").get_to(c.heads);
  j.at("head_dim").get_to(c.head_dim);
  j.at("vocab_size").get_to(c.vocab_size);
  j.at("rope_base").get_to(c.rope_base);
  j.at("max_seq_len").get_to(c.max_seq_len);
}

namespace detail {

inline void write_params(std::ofstream& out, const ModelParameters<float>& p) {
  for_each_param(p, [&](const std::string&, const Mat<float>& m) {
    out.write(reinterpret_cast<const char*>(m.data()),
              static_cast<std::streamsize>(sizeof(float)) * m.size());
  });
}

inline void read_params(std::ifstream& in, ModelParameters<float>& p,
                        const std::string& path) {
  for_each_param(p, [&](const std::string&, Mat<float>& m) {
    in.read(reinterpret_cast<char*>(m.data()),
            static_cast<std::streamsize>(sizeof(float)) * m.size());
    if (!in) throw IoError("checkpoint: truncated parameter data in " + path);
  });
}

}  // namespace detail

inline void save_checkpoint(const std::string& path, const Checkpoint& ckpt) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw IoError("checkpoint: cannot write " + path);
  nlohmann::json header{{"magic", kCheckpointMagic},
                        {"format_version", 1},
                        {"config", ckpt.params.config},
                        {"vocab_ref", ckpt.vocab_ref},
                        {"step", ckpt.step},
                        {"has_optimizer", ckpt.optimizer.has_value()},
                        {"param_count", parameter_count(ckpt.params.config)}};
  out << header.dump() << '\n';
  detail::write_params(out, ckpt.params);
  if (ckpt.optimizer) {
    detail::write_params(out, ckpt.optimizer->m);
    detail::write_params(out, ckpt.optimizer->v);
    const std::int64_t opt_step = ckpt.optimizer->step;
    out.write(reinterpret_cast<const char*>(&opt_step), sizeof(opt_step));
  }
  if (!out) throw IoError("checkpoint: write failed for " + path);
}

inline Checkpoint load_checkpoint(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("checkpoint: cannot read " + path);
  std::string header_line;
  if (!std::getline(in, header_line)) {
    throw IoError("checkpoint: missing header in " + path);
  }
  nlohmann::json header = nlohmann::json::parse(header_line, nullptr, false);
  if (header.is_discarded() || header.value("magic", "") != kCheckpointMagic) {
    throw IoError("checkpoint: bad header in " + path);
  }
  Checkpoint ckpt;
  ModelConfig config = header.at("config").get<ModelConfig>();
  ckpt.params = allocate_params<float>(config);
  ckpt.vocab_ref = header.value("vocab_ref", "");
  ckpt.step = header.at("step").get<std::int64_t>();
  detail::read_params(in, ckpt.params, path);
  if (header.value("has_optimizer", false)) {
    OptimizerState state;
    state.m = allocate_params<float>(config);
    state.v = allocate_params<float>(config);
    detail::read_params(in, state.m, path);
    detail::read_params(in, state.v, path);
    in.read(reinterpret_cast<char*>(&state.step), sizeof(state.step));
    if (!in) throw IoError("checkpoint: truncated optimizer state in " + path);
    ckpt.optimizer = std::move(state);
  }
  return ckpt;
}

}  // namespace searchtrace
