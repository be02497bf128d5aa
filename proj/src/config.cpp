#include "skillsight/config.hpp"

#include <fstream>

namespace skillsight {

ObjectReader::ObjectReader(const nlohmann::json& j, std::string path) : j_(j), path_(std::move(path)) {
  if (!j_.is_object()) throw ConfigError("expected an object", path_.empty() ? "/" : path_);
}

const nlohmann::json* ObjectReader::take(const char* key) {
  seen_.insert(key);
  auto it = j_.find(key);
  if (it == j_.end()) return nullptr;
  return &*it;
}

void ObjectReader::object(const char* key, const std::function<void(ObjectReader&)>& fn) {
  const nlohmann::json* v = take(key);
  if (v == nullptr) return;
  ObjectReader sub(*v, child(key));
  fn(sub);
  sub.finish();
}

void ObjectReader::finish() const {
  for (const auto& [key, _] : j_.items()) {
    if (!seen_.count(key)) throw ConfigError("unknown key", child(key));
  }
}

void read_encoder(ObjectReader& r, const char* key, nn::EncoderConfig& cfg) {
  r.object(key, [&](ObjectReader& e) {
    e.get("layers", cfg.layers);
    e.get("heads", cfg.heads);
    e.get("width", cfg.width);
    e.get("mlp_ratio", cfg.mlp_ratio);
  });
}

nlohmann::json encoder_json(const nn::EncoderConfig& cfg) {
  return {{"layers", cfg.layers}, {"heads", cfg.heads}, {"width", cfg.width}, {"mlp_ratio", cfg.mlp_ratio}};
}

void validate_encoder(const nn::EncoderConfig& cfg, const std::string& where) {
  if (cfg.layers < 0) throw ConfigError("must be >= 0", where + "/layers");
  if (cfg.heads <= 0) throw ConfigError("must be > 0", where + "/heads");
  if (cfg.width <= 0 || cfg.width % cfg.heads != 0) {
    throw ConfigError("must be a positive multiple of heads", where + "/width");
  }
  if (cfg.mlp_ratio <= 0) throw ConfigError("must be > 0", where + "/mlp_ratio");
}

nlohmann::json read_json(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("cannot read " + path.string());
  try {
    return nlohmann::json::parse(in);
  } catch (const nlohmann::json::parse_error& e) {
    throw ConfigError(std::string("malformed JSON: ") + e.what(), path.string());
  }
}

}  // namespace skillsight
