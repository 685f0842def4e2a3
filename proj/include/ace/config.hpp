#ifndef ACE_CONFIG_HPP
#define ACE_CONFIG_HPP

#include <cstdint>
#include <optional>
#include <string>
#include <utility>
#include <vector>

#include "ace/data.hpp"
#include "ace/eval.hpp"
#include "ace/model.hpp"
#include "ace/train.hpp"

namespace ace::config {

// Everything a `train` or `sweep` invocation needs. Either both CSV paths
// are set, or the synthetic spec is used to generate the data.
struct RunConfig {
  train::TrainConfig train;
  model::Architecture arch = model::Architecture::mlp1;
  int hidden = 64;
  std::string train_csv;
  std::string test_csv;
  data::SyntheticSpec synthetic;
  std::optional<std::uint64_t> data_seed;  // defaults to train.seed
  eval::GroupSpec groups = eval::GroupSpec::percentile();
  bool crt = false;
  int crt_epochs = 0;  // 0: same as epochs
  std::string preset = "none";

  data::SyntheticSpec effective_synthetic() const;
};

using KeyValues = std::vector<std::pair<std::string, std::string>>;

struct KeyInfo {
  std::string key;
  bool is_flag;  // boolean; a bare CLI flag means true
  std::string help;
};

const std::vector<KeyInfo>& known_keys();

/// Regime defaults for lambda and tau: fgvc, long_tail, natural_world, none.
void apply_preset(RunConfig& cfg, const std::string& name);

/// Applies one key. Unknown keys raise a ValidationError listing the valid ones.
void apply(RunConfig& cfg, const std::string& key, const std::string& value);

/// Applies a preset first (if any entry names one), then every other entry
/// in order.
void apply_all(RunConfig& cfg, const KeyValues& kv);

/// `key = value` per line, `#` starts a comment.
KeyValues parse_text(const std::string& text);
KeyValues read_file(const std::string& path);

/// Complete snapshot; apply_all(RunConfig{}, to_key_values(c)) reproduces c.
KeyValues to_key_values(const RunConfig& cfg);
std::string to_text(const RunConfig& cfg);

void validate(const RunConfig& cfg);

}  // namespace ace::config

#endif  // ACE_CONFIG_HPP
