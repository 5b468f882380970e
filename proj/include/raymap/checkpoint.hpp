#pragma once

#include <map>
#include <string>

#include "raymap/optim.hpp"

namespace raymap {

// Model snapshot: named parameter tensors plus free-form metadata strings
// (standardizer moments, coordinate scale, regime).  Serialized as JSON with
// a format version; loading any other version is an error.
struct Checkpoint {
  ParamStore params;
  std::map<std::string, std::string> meta;

  void save(const std::string& path) const;
  static Checkpoint load(const std::string& path);

  double meta_f64(const std::string& key) const;
  const std::string& meta_str(const std::string& key) const;
};

}  // namespace raymap
