#pragma once

#include <string>

#include "scanrl/trainer.hpp"

namespace scanrl {

// Flat key=value view over every training parameter plus paths. Defaults are the
// desk preset; a preset key is applied before any other key from the same
// source; later sources (CLI flags) override earlier ones (config file).
struct RunConfig {
    std::string preset = "desk";
    TrainConfig train = desk_train_config();
    std::string dataset_path;
    std::string out_dir = ".";
    std::string checkpoint_path;
};

// Applies "paper" or "desk" scale constants; anything else is a config error.
void apply_preset(RunConfig& cfg, const std::string& name);

// Sets one key; throws ConfigError for unknown keys or unparsable values.
void set_config_key(RunConfig& cfg, const std::string& key, const std::string& value);

// Reads a UTF-8 "key = value" file with '#' comments. Unknown keys and bad
// values are reported with their line number.
RunConfig parse_config_file(const std::string& path);
RunConfig parse_config_text(const std::string& text, const std::string& origin);

// Every resolved key=value pair, one per line, fixed order; written to the
// run log so each run records its exact configuration.
std::string echo_config(const RunConfig& cfg);

}  // namespace scanrl
