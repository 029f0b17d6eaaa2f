#include "cst/checkpoint.hpp"

#include "cst/errors.hpp"

#include <nlohmann/json.hpp>

#include <fstream>

namespace cst::ckpt {

using nlohmann::json;

void write_manifest(const std::filesystem::path& dir, const Manifest& m) {
  json j{{"format", kFormat},          {"version", m.version}, {"epoch", m.epoch},
         {"step", m.step},             {"fingerprint", m.fingerprint},
         {"config", m.config_text},    {"rng_state", m.rng_state},
         {"files", m.files}};
  std::ofstream out(dir / "manifest.json");
  if (!out) throw IoError("cannot write checkpoint manifest in " + dir.string());
  out << j.dump(2) << '\n';
}

Manifest read_manifest(const std::filesystem::path& dir) {
  std::ifstream in(dir / "manifest.json");
  if (!in) throw IoError("not a checkpoint directory (no manifest.json): " + dir.string());
  try {
    json j;
    in >> j;
    if (j.at("format") != kFormat) throw DataError("unexpected checkpoint format in " + dir.string());
    Manifest m;
    m.version = j.at("version");
    if (m.version != kVersion) throw DataError("unsupported checkpoint version " + std::to_string(m.version));
    m.epoch = j.at("epoch");
    m.step = j.at("step");
    m.fingerprint = j.at("fingerprint");
    m.config_text = j.at("config");
    m.rng_state = j.at("rng_state").get<std::map<std::string, std::string>>();
    m.files = j.at("files").get<std::vector<std::string>>();
    return m;
  } catch (const json::exception& e) {
    throw DataError("malformed checkpoint manifest in " + dir.string() + ": " + e.what());
  }
}

void write_atomically(const std::filesystem::path& dir, const std::function<void(const std::filesystem::path&)>& fill) {
  const auto tmp = std::filesystem::path(dir.string() + ".tmp");
  std::filesystem::remove_all(tmp);
  std::filesystem::create_directories(tmp);
  fill(tmp);
  std::filesystem::remove_all(dir);
  std::filesystem::rename(tmp, dir);
}

}  // namespace cst::ckpt
