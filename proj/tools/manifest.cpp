#include "experiment.hpp"

#include <fmt/format.h>

#include <fstream>

namespace mrf {

Manifest::Manifest(fs::path out_dir) : dir_(std::move(out_dir)) {
  const fs::path path = dir_ / "manifest.json";
  if (!fs::exists(path)) {
    doc_ = {{"stages", nlohmann::json::object()}};
    return;
  }
  std::ifstream in(path);
  try {
    doc_ = nlohmann::json::parse(in);
  } catch (const nlohmann::json::parse_error& e) {
    throw ArtifactError(fmt::format("{} is corrupt: {}", path.string(), e.what()));
  }
  if (!doc_.contains("stages") || !doc_["stages"].is_object()) {
    throw ArtifactError(fmt::format("{} has no stages table", path.string()));
  }
}

void Manifest::record(const std::string& stage, const nlohmann::json& inputs, const std::vector<fs::path>& outputs,
                      const nlohmann::json& seeds) {
  nlohmann::json files = nlohmann::json::object();
  for (const auto& p : outputs) {
    files[fs::relative(p, dir_).generic_string()] = sha256_file(p);
  }
  doc_["stages"][stage] = {{"inputs", inputs}, {"outputs", files}, {"seeds", seeds}};
  save();
}

bool Manifest::has(const std::string& stage) const { return doc_["stages"].contains(stage); }

void Manifest::verify(const std::string& stage, const nlohmann::json& inputs) const {
  if (!has(stage)) {
    throw ArtifactError(fmt::format("stage '{}' has not been run in {}", stage, dir_.string()));
  }
  const auto& entry = doc_["stages"][stage];
  if (entry["inputs"] != inputs) {
    throw ArtifactError(
        fmt::format("stage '{}' in {} was produced with a different configuration; rerun it", stage, dir_.string()));
  }
  for (const auto& [rel, hash] : entry["outputs"].items()) {
    const fs::path p = dir_ / rel;
    if (!fs::exists(p)) {
      throw ArtifactError(fmt::format("artifact {} of stage '{}' is missing", p.string(), stage));
    }
    if (sha256_file(p) != hash.get<std::string>()) {
      throw ArtifactError(fmt::format("artifact {} of stage '{}' changed since it was written", p.string(), stage));
    }
  }
}

std::vector<std::string> Manifest::stages_with_prefix(const std::string& prefix) const {
  std::vector<std::string> out;
  for (const auto& [name, entry] : doc_["stages"].items()) {
    if (name.rfind(prefix, 0) == 0) {
      out.push_back(name);
    }
  }
  return out;
}

void Manifest::save() const {
  fs::create_directories(dir_);
  const fs::path tmp = dir_ / "manifest.json.tmp";
  {
    std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
    out << doc_.dump(2) << '\n';
    if (!out) {
      throw bardip::Error(fmt::format("cannot write {}", tmp.string()));
    }
  }
  fs::rename(tmp, dir_ / "manifest.json");
}

} // namespace mrf
