#pragma once

#include <map>
#include <string>
#include <string_view>

namespace llie {

// Plain-text "key = value" lines; '#' starts a comment; blank lines are
// ignored. Duplicate keys and lines without '=' raise ConfigError.
std::map<std::string, std::string> parse_key_values(std::string_view text);
std::map<std::string, std::string> read_key_value_file(const std::string& path);

double parse_double(const std::string& key, const std::string& value);
long long parse_integer(const std::string& key, const std::string& value);
bool parse_bool(const std::string& key, const std::string& value);

}  // namespace llie
