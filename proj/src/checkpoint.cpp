#include "raymap/checkpoint.hpp"

#include "json.hpp"
#include "raymap/csv.hpp"
#include "raymap/errors.hpp"

namespace raymap {

namespace {
constexpr int kFormatVersion = 1;
}

void Checkpoint::save(const std::string& path) const {
  nlohmann::ordered_json j;
  j["version"] = kFormatVersion;
  nlohmann::ordered_json jm = nlohmann::ordered_json::object();
  for (const auto& [k, v] : meta) jm[k] = v;
  j["meta"] = jm;
  nlohmann::ordered_json jp = nlohmann::ordered_json::object();
  for (const auto& [name, arr] : params) {
    nlohmann::ordered_json e;
    e["shape"] = {arr.rows, arr.cols};
    e["values"] = arr.data;
    jp[name] = e;
  }
  j["params"] = jp;
  std::ofstream f = open_out(path);
  f << j.dump() << '\n';
  if (!f) throw IoError("failed writing '" + path + "'");
}

Checkpoint Checkpoint::load(const std::string& path) {
  nlohmann::json j;
  try {
    j = nlohmann::json::parse(read_file(path));
  } catch (const nlohmann::json::parse_error& e) {
    throw ValidationError(path + ": " + e.what());
  }
  if (!j.is_object() || !j.contains("version") || !j["version"].is_number_integer())
    throw ValidationError(path + ": missing format version");
  const int version = j["version"].get<int>();
  if (version != kFormatVersion)
    throw ValidationError(path + ": unsupported checkpoint version " +
                          std::to_string(version));

  Checkpoint ck;
  if (j.contains("meta")) {
    for (auto it = j["meta"].begin(); it != j["meta"].end(); ++it)
      ck.meta[it.key()] = it.value().get<std::string>();
  }
  if (!j.contains("params") || !j["params"].is_object())
    throw ValidationError(path + ": missing params object");
  for (auto it = j["params"].begin(); it != j["params"].end(); ++it) {
    const auto& e = it.value();
    if (!e.contains("shape") || !e.contains("values") || e["shape"].size() != 2)
      throw ValidationError(path + ": malformed entry for param '" + it.key() + "'");
    Array a(e["shape"][0].get<int>(), e["shape"][1].get<int>());
    const auto& vals = e["values"];
    if (vals.size() != a.size())
      throw ValidationError(path + ": value count mismatch for param '" + it.key() + "'");
    for (std::size_t i = 0; i < a.size(); ++i) a.data[i] = vals[i].get<double>();
    ck.params[it.key()] = std::move(a);
  }
  return ck;
}

double Checkpoint::meta_f64(const std::string& key) const {
  auto it = meta.find(key);
  if (it == meta.end()) throw ValidationError("checkpoint meta missing key '" + key + "'");
  return std::stod(it->second);
}

const std::string& Checkpoint::meta_str(const std::string& key) const {
  auto it = meta.find(key);
  if (it == meta.end()) throw ValidationError("checkpoint meta missing key '" + key + "'");
  return it->second;
}

}  // namespace raymap
