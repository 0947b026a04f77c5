#pragma once

#include "feedrec/errors.hpp"
#include "json.hpp"

namespace feedrec {

/// Shape of the network. Defaults follow the published setting: 256-dim
/// embeddings and 16 attention heads of width 16.
struct ModelConfig {
  int dim = 256;
  int heads = 16;
  int ffn_dim = 256;
  int vocab_size = 1200;
  int max_seq = 50;
  int title_len = 30;

  void validate() const {
    if (dim <= 0 || heads <= 0 || dim % heads != 0) {
      throw ConfigError("model dim must be a positive multiple of heads");
    }
    if (ffn_dim <= 0 || vocab_size <= 0 || max_seq <= 0 || title_len <= 0) {
      throw ConfigError("model sizes must be positive");
    }
  }
  int head_dim() const { return dim / heads; }
};

/// Architecture ablation switches.
struct ModelOptions {
  bool disable_hetero = false;
  bool disable_homo = false;
  /// Replace strong-to-weak queries by independent learned queries.
  bool disable_strong_to_weak = false;
  bool disable_position = false;
  bool disable_type = false;
  bool disable_dwell = false;
  bool disable_interval = false;
};

inline void to_json(nlohmann::json& j, const ModelConfig& c) {
  j = nlohmann::json{{"dim", c.dim},
                     {"heads", c.heads},
                     {"ffn_dim", c.ffn_dim},
                     {"vocab_size", c.vocab_size},
                     {"max_seq", c.max_seq},
                     {"title_len", c.title_len}};
}

}  // namespace feedrec
