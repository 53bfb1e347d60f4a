#pragma once

#include <filesystem>
#include <string>
#include <vector>

#include "dac/simulator.hpp"

namespace dac {

// Config files are flat `key = value` lines; `#` starts a comment. Keys:
//
//   protocol        dac | dac_var | random | pens | oracle | local  (required)
//   K               number of clients                               (required)
//   layout          comma-separated `shift:count` entries           (required)
//                   rotation: `0:14, 180:4`   label: `{0,1,2}:6, {3}:4`
//   seed            unsigned integer                                (required)
//   shift           rotation | label (default: inferred from layout)
//   T E m batch_size learning_rate tau tau_max
//   train_n val_n test_n n_classes dim hidden_dim
//   pens_selection_rounds pens_top_fraction
//   two_hop         true | false
//   two_hop_rule    most_similar | least_similar
//   output_dir idx_images idx_labels
//
// Unknown keys, malformed values and constraint violations are all
// collected and reported together in one ConfigError.
ExperimentConfig parse_config_text(const std::string& text);
ExperimentConfig parse_config(const std::filesystem::path& path);

// Fully-resolved config in the same syntax; parse_config_text(echo_config(c))
// reproduces c.
std::string echo_config(const ExperimentConfig& config);

// Parses the layout syntax above.
ClusterLayout parse_layout(const std::string& text);

}  // namespace dac
