#pragma once

#include <map>

#include "comma/net.hpp"

namespace comma {

// key=value configuration; '#' starts a comment. Unknown keys are rejected.
// `preset=paper|desk|tiny` selects a baseline that later keys override.
CommaConfig parse_config_text(const std::string& text);
CommaConfig load_config_file(const std::string& path);

// Applies one key=value pair onto an existing config.
void apply_config_entry(CommaConfig& cfg, const std::string& key, const std::string& value);

std::string config_to_text(const CommaConfig& cfg);

}  // namespace comma
