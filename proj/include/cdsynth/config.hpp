#pragma once

// Flat key & value run configuration. Every tunable lives in one registry
// with a default; unknown keys are rejected, `seed` is the single required
// key, and the resolved text (sorted, fully expanded) is what gets hashed
// and emitted next to every run's outputs.

#include <cstdint>
#include <fstream>
#include <map>
#include <sstream>
#include <string>
#include <vector>

#include "cdsynth/errors.hpp"

namespace cdsynth {

class RunConfig {
 public:
  // key -> default value; empty default marks a required key
  static const std::map<std::string, std::string>& registry() {
    static const std::map<std::string, std::string> keys = {
        {"seed", ""},
        {"workers", "1"},
        {"image.size", "64"},
        {"image.channels", "3"},
        {"scene.classes", "8"},
        {"scene.noise_scale", "0.1"},
        {"scene.texture_amplitude", "0.05"},
        {"scene.texture_wavelength", "16"},
        {"schedule.steps", "200"},
        {"schedule.beta_start", "1e-4"},
        {"schedule.beta_end", "0.02"},
        {"schedule.sigma_mode", "standard"},
        {"codec.kind", "identity"},
        {"maskgen.background_seeds", "5"},
        {"maskgen.instances", "3"},
        {"maskgen.instance_min", "5"},
        {"maskgen.instance_max", "10"},
        {"events.min_area", "16"},
        {"events.max_area_fraction", "0.05"},
        {"events.max_attempts", "100"},
        {"events.mask_retries", "8"},
        {"denoiser.base_channels", "16"},
        {"denoiser.time_embed_dim", "32"},
        {"train.steps", "1500"},
        {"train.scenes", "8"},
        {"train.learning_rate", "3e-3"},
        {"train.weight_decay", "0.01"},
        {"train.beta1", "0.9"},
        {"train.beta2", "0.999"},
        {"train.epsilon", "1e-8"},
        {"gen.mode", "checkpoint"},
        {"gen.sampler", "ddim"},
        {"gen.n_max", "200"},
        {"gen.n_min", "50"},
        {"gen.ddim_substeps", "50"},
        {"gen.eta", "0"},
        {"gen.blend_at_zero", "false"},
        {"gen.dilate_radius", "0"},
        {"bench.nonchange_jitter", "0.03"},
        {"bench.brightness_sigma", "0.05"},
        {"eval.ratios", "0.05,0.1"},
        {"eval.seeds", "0,1,2,3,4"},
        {"eval.test_fraction", "0.5"},
        {"eval.pretrain_steps", "600"},
        {"eval.finetune_steps", "300"},
        {"eval.onlysup_steps", "300"},
        {"eval.learning_rate", "2e-3"},
        {"eval.weight_decay", "0.01"},
        {"eval.cd_base_channels", "16"},
    };
    return keys;
  }

  RunConfig() = default;

  static RunConfig from_file(const std::string& path) {
    std::ifstream is(path);
    if (!is) throw ConfigError("cannot open config file: " + path);
    RunConfig cfg;
    std::string line;
    int lineno = 0;
    while (std::getline(is, line)) {
      ++lineno;
      std::string stripped = strip(line);
      if (stripped.empty() || stripped[0] == '#') continue;
      size_t eq = stripped.find('=');
      if (eq == std::string::npos)
        throw ConfigError("config line " + std::to_string(lineno) + ": expected key = value");
      cfg.set(strip(stripped.substr(0, eq)), strip(stripped.substr(eq + 1)));
    }
    return cfg;
  }

  void set(const std::string& key, const std::string& value) {
    if (!registry().count(key)) throw ConfigError("unknown config key: " + key);
    values_[key] = value;
  }

  // Accepts "key=value"; used for command-line overrides.
  void apply_override(const std::string& kv) {
    size_t eq = kv.find('=');
    if (eq == std::string::npos)
      throw ConfigError("override must be key=value, got: " + kv);
    set(strip(kv.substr(0, eq)), strip(kv.substr(eq + 1)));
  }

  std::string get(const std::string& key) const {
    auto reg = registry().find(key);
    if (reg == registry().end()) throw ConfigError("unknown config key: " + key);
    auto it = values_.find(key);
    if (it != values_.end()) return it->second;
    if (reg->second.empty()) throw ConfigError("missing required config key: " + key);
    return reg->second;
  }

  long get_int(const std::string& key) const {
    try {
      size_t pos = 0;
      long v = std::stol(get(key), &pos);
      if (pos != get(key).size()) throw std::invalid_argument("");
      return v;
    } catch (const ConfigError&) {
      throw;
    } catch (...) {
      throw ConfigError("config key " + key + ": expected an integer, got '" + get(key) + "'");
    }
  }

  uint64_t get_u64(const std::string& key) const {
    try {
      size_t pos = 0;
      uint64_t v = std::stoull(get(key), &pos);
      if (pos != get(key).size()) throw std::invalid_argument("");
      return v;
    } catch (const ConfigError&) {
      throw;
    } catch (...) {
      throw ConfigError("config key " + key + ": expected an unsigned integer");
    }
  }

  double get_double(const std::string& key) const {
    try {
      size_t pos = 0;
      double v = std::stod(get(key), &pos);
      if (pos != get(key).size()) throw std::invalid_argument("");
      return v;
    } catch (const ConfigError&) {
      throw;
    } catch (...) {
      throw ConfigError("config key " + key + ": expected a number, got '" + get(key) + "'");
    }
  }

  bool get_bool(const std::string& key) const {
    std::string v = get(key);
    if (v == "true" || v == "1" || v == "yes") return true;
    if (v == "false" || v == "0" || v == "no") return false;
    throw ConfigError("config key " + key + ": expected a boolean, got '" + v + "'");
  }

  std::vector<double> get_double_list(const std::string& key) const {
    std::vector<double> out;
    for (const std::string& item : split_list(get(key))) {
      try {
        out.push_back(std::stod(item));
      } catch (...) {
        throw ConfigError("config key " + key + ": bad list element '" + item + "'");
      }
    }
    if (out.empty()) throw ConfigError("config key " + key + ": empty list");
    return out;
  }

  std::vector<uint64_t> get_u64_list(const std::string& key) const {
    std::vector<uint64_t> out;
    for (const std::string& item : split_list(get(key))) {
      try {
        out.push_back(std::stoull(item));
      } catch (...) {
        throw ConfigError("config key " + key + ": bad list element '" + item + "'");
      }
    }
    if (out.empty()) throw ConfigError("config key " + key + ": empty list");
    return out;
  }

  // Fully expanded, sorted, deterministic. Execution-local knobs that cannot
  // affect results (worker count) are excluded, so the text and its hash
  // identify the experiment itself.
  std::string resolved_text() const {
    std::ostringstream os;
    for (const auto& [key, def] : registry()) {
      if (key == "workers") continue;
      os << key << " = " << get(key) << "\n";
    }
    return os.str();
  }

  uint64_t hash() const {  // FNV-1a over the resolved text
    uint64_t h = 0xcbf29ce484222325ull;
    for (char c : resolved_text()) {
      h ^= static_cast<unsigned char>(c);
      h *= 0x100000001b3ull;
    }
    return h;
  }

 private:
  static std::string strip(const std::string& s) {
    size_t a = s.find_first_not_of(" \t\r\n");
    if (a == std::string::npos) return "";
    size_t b = s.find_last_not_of(" \t\r\n");
    return s.substr(a, b - a + 1);
  }

  static std::vector<std::string> split_list(const std::string& s) {
    std::vector<std::string> out;
    std::string item;
    std::istringstream is(s);
    while (std::getline(is, item, ',')) {
      item = strip(item);
      if (!item.empty()) out.push_back(item);
    }
    return out;
  }

  std::map<std::string, std::string> values_;
};

}  // namespace cdsynth
