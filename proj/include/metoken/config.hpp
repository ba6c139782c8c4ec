#pragma once

#include <string>
#include <vector>

#include "metoken/geometry.hpp"
#include "metoken/model.hpp"
#include "metoken/pgraph.hpp"

namespace metoken::cli {

// Flat key=value view over every tunable. Unknown keys are an error.
struct RunConfig {
  geom::FeatureConfig feature;
  pgraph::GraphConfig graph;
  model::TrainConfig train;  // carries VQConfig and model dims

  void set(const std::string& key, const std::string& value);
  std::string get(const std::string& key) const;
  void load_file(const std::string& path);
  void validate() const;
  uint64_t hash() const;  // canonical FNV over all keys

  static const std::vector<std::pair<std::string, std::string>>& key_help();
};

}  // namespace metoken::cli
