#pragma once

// Config file loading. `.toml` files are parsed with toml++ and mapped onto
// the same JSON structure; anything else is read as JSON.

#include "biquality/harness.hpp"

#include <nlohmann/json.hpp>
#include <toml.hpp>

#include <filesystem>
#include <fstream>
#include <string>

namespace biq {

namespace detail {

inline nlohmann::json toml_node_to_json(const toml::node& node) {
    if (const auto* t = node.as_table()) {
        nlohmann::json j = nlohmann::json::object();
        for (const auto& [k, v] : *t) j[std::string(k.str())] = toml_node_to_json(v);
        return j;
    }
    if (const auto* a = node.as_array()) {
        nlohmann::json j = nlohmann::json::array();
        for (const auto& v : *a) j.push_back(toml_node_to_json(v));
        return j;
    }
    if (const auto* v = node.as_string()) return v->get();
    if (const auto* v = node.as_integer()) return v->get();
    if (const auto* v = node.as_floating_point()) return v->get();
    if (const auto* v = node.as_boolean()) return v->get();
    throw ConfigError("config: unsupported TOML value (dates and times are not accepted)");
}

} // namespace detail

inline nlohmann::json parse_toml_config(const std::string& text, const std::string& origin = "config") {
    try {
        return detail::toml_node_to_json(toml::parse(text, origin));
    } catch (const toml::parse_error& e) {
        std::ostringstream msg;
        msg << origin << ": " << e.description() << " (line " << e.source().begin.line << ")";
        throw ConfigError(msg.str());
    }
}

inline ExperimentConfig load_config(const std::filesystem::path& path) {
    std::ifstream in(path);
    if (!in) throw ConfigError("cannot open config " + path.string());
    std::stringstream buf;
    buf << in.rdbuf();
    nlohmann::json j;
    if (path.extension() == ".toml") {
        j = parse_toml_config(buf.str(), path.string());
    } else {
        try {
            j = nlohmann::json::parse(buf.str());
        } catch (const nlohmann::json::exception& e) {
            throw ConfigError("config " + path.string() + ": " + e.what());
        }
    }
    return config_from_json(j, path.parent_path());
}

} // namespace biq
