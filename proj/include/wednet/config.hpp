#pragma once

// Plain `key = value` run configuration. `#` starts a comment; blank lines are ignored.

#include <filesystem>
#include <fstream>
#include <map>
#include <sstream>
#include <string>

#include "wednet/causalaug.hpp"
#include "wednet/train.hpp"

namespace wednet {

using KeyValues = std::map<std::string, std::string>;

inline std::string trim(const std::string& s) {
  const auto b = s.find_first_not_of(" \t\r");
  if (b == std::string::npos) return "";
  return s.substr(b, s.find_last_not_of(" \t\r") - b + 1);
}

inline KeyValues parse_key_values(std::istream& in, const std::string& source = "config") {
  KeyValues kv;
  std::string line;
  int lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    if (const auto hash = line.find('#'); hash != std::string::npos) line.erase(hash);
    line = trim(line);
    if (line.empty()) continue;
    const auto eq = line.find('=');
    if (eq == std::string::npos) throw ValidationError(source + ":" + std::to_string(lineno) + ": expected key = value");
    const std::string key = trim(line.substr(0, eq));
    if (key.empty()) throw ValidationError(source + ":" + std::to_string(lineno) + ": empty key");
    kv[key] = trim(line.substr(eq + 1));
  }
  return kv;
}

inline KeyValues read_key_values(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw ValidationError("cannot open config " + path.string());
  return parse_key_values(in, path.string());
}

namespace detail {

template <typename T>
T parse_value(const std::string& key, const std::string& text) {
  std::istringstream in(text);
  T v{};
  in >> v;
  if (in.fail() || !(in >> std::ws).eof()) throw ValidationError("config: bad value '" + text + "' for " + key);
  return v;
}

}  // namespace detail

/// Applies every recognized key; unknown keys are an error. `preset = desk` resets to the desk configuration first.
inline void apply_config(TrainConfig& cfg, const KeyValues& kv) {
  if (auto it = kv.find("preset"); it != kv.end()) {
    if (it->second == "desk") {
      cfg = desk_config();
    } else if (it->second == "full") {
      cfg = TrainConfig{};
    } else {
      throw ValidationError("config: unknown preset '" + it->second + "' (desk, full)");
    }
  }
  using detail::parse_value;
  for (const auto& [key, value] : kv) {
    auto& m = cfg.model;
    if (key == "preset") continue;
    else if (key == "batch_size") cfg.batch_size = parse_value<int>(key, value);
    else if (key == "lr") cfg.lr = parse_value<double>(key, value);
    else if (key == "weight_decay") cfg.weight_decay = parse_value<double>(key, value);
    else if (key == "epochs") cfg.epochs = parse_value<int>(key, value);
    else if (key == "eta") cfg.eta = parse_value<double>(key, value);
    else if (key == "warmup") cfg.warmup = parse_value<double>(key, value);
    else if (key == "initial_div") cfg.initial_div = parse_value<double>(key, value);
    else if (key == "final_div") cfg.final_div = parse_value<double>(key, value);
    else if (key == "patience") cfg.patience = parse_value<int>(key, value);
    else if (key == "eval_batch_size") cfg.eval_batch_size = parse_value<int>(key, value);
    else if (key == "seed") cfg.seed = parse_value<std::uint64_t>(key, value);
    else if (key == "variant") m.variant = parse_variant(value);
    else if (key == "heads") m.heads = parse_value<int>(key, value);
    else if (key == "blocks") m.blocks = parse_value<int>(key, value);
    else if (key == "ffn_factor") m.ffn_factor = parse_value<int>(key, value);
    else if (key == "dropout") m.dropout = parse_value<double>(key, value);
    else if (key == "memory_slots") m.memory_slots = parse_value<int>(key, value);
    else if (key == "predictor_hidden") m.predictor_hidden = parse_value<int>(key, value);
    else if (key == "disc_hidden") m.disc_hidden = parse_value<int>(key, value);
    else if (key == "grl_lambda") m.grl_lambda = parse_value<double>(key, value);
    else if (key == "embed") {
      std::istringstream in(value);
      std::string part;
      std::vector<int> w;
      while (std::getline(in, part, ',')) w.push_back(parse_value<int>(key, trim(part)));
      if (w.size() != 5) throw ValidationError("config: embed needs 5 comma-separated widths (feature, temporal, spatial, tod, dow)");
      m.embed = {w[0], w[1], w[2], w[3], w[4]};
    } else {
      throw ValidationError("config: unknown key '" + key + "'");
    }
  }
  cfg.validate();
}

inline void apply_config(AugmentOptions& opt, const KeyValues& kv) {
  using detail::parse_value;
  for (const auto& [key, value] : kv) {
    if (key == "r") opt.r = parse_value<int>(key, value);
    else if (key == "r_a") opt.r_a = parse_value<double>(key, value);
    else if (key == "window") opt.window = parse_value<int>(key, value);
    else if (key == "seed") opt.seed = parse_value<std::uint64_t>(key, value);
    else throw ValidationError("augment config: unknown key '" + key + "'");
  }
  opt.validate();
}

}  // namespace wednet
