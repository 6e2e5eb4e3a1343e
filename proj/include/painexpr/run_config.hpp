#pragma once

#include <cstdint>
#include <filesystem>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include "painexpr/data.hpp"
#include "painexpr/edm.hpp"
#include "painexpr/forcing.hpp"
#include "painexpr/guidance.hpp"
#include "painexpr/net.hpp"
#include "painexpr/trainer.hpp"

namespace painexpr {

/// Flat "section.key" -> value view of a TOML-style file plus flag overrides.
class RunConfig {
 public:
  /// Sections in [brackets], `key = value` lines, `#` comments, optional
  /// quotes around string values, comma-separated lists.
  static RunConfig parse(const std::string& text, const std::string& origin = "<config>");
  static RunConfig load(const std::filesystem::path& path);

  void set(const std::string& key, const std::string& value);
  bool has(const std::string& key) const { return values_.count(key) != 0; }
  const std::map<std::string, std::string>& values() const { return values_; }

  std::string get_string(const std::string& key, const std::string& fallback) const;
  int get_int(const std::string& key, int fallback) const;
  std::uint64_t get_u64(const std::string& key, std::uint64_t fallback) const;
  double get_double(const std::string& key, double fallback) const;
  std::vector<int> get_int_list(const std::string& key, const std::vector<int>& fallback) const;
  std::vector<std::string> get_list(const std::string& key, const std::vector<std::string>& fallback) const;

  /// Rejects keys outside the known schema.
  void check_known_keys() const;

  DataGenConfig datagen() const;
  NetConfig net(int dim, int stack) const;
  EdmParams edm() const;
  TrainConfig train() const;
  GuidanceWeights guidance() const;
  /// Sampling options for the given latent shape.
  RolloutOptions rollout(int dim, int stack, double frame_rate) const;

  /// Effective configuration as a JSON object grouped by section.
  std::string to_json() const;

 private:
  std::map<std::string, std::string> values_;
};

/// "emotion_expressiveness_stimuli", e.g. "1_2_4".
GuidanceWeights parse_guidance_triple(const std::string& text);

}  // namespace painexpr
