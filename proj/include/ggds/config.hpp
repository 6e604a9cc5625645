#pragma once

#include "ggds/optimizer.hpp"

#include <string>
#include <vector>

namespace ggds {

/// Malformed config text: unknown key, duplicate key, bad value or missing '='.
class ConfigError : public std::runtime_error {
public:
    ConfigError(const std::string &what, int line) : std::runtime_error(what), line(line) {}
    int line;
};

/// `key = value` lines; '#' starts a comment. Keys not listed are left at their defaults.
GgdsConfig parse_config(const std::string &text, const GgdsConfig &base = {});
GgdsConfig load_config(const std::string &path, const GgdsConfig &base = {});
/// Every key with its current value, parseable by parse_config.
std::string format_config(const GgdsConfig &config);
/// Recognized keys in file order.
std::vector<std::string> config_keys();

} // namespace ggds
