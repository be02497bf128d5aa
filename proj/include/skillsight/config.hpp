#pragma once

// Strict JSON object reading (unknown keys are errors, paths are reported as
// "/a/b/c") and the experiment file tying all modules together.

#include <cstdint>
#include <filesystem>
#include <functional>
#include <optional>
#include <set>
#include <string>

#include <json.hpp>

#include "skillsight/error.hpp"
#include "skillsight/nn.hpp"

namespace skillsight {

class ObjectReader {
 public:
  ObjectReader(const nlohmann::json& j, std::string path);

  template <typename T>
  void get(const char* key, T& out) {
    const nlohmann::json* v = take(key);
    if (v == nullptr) return;
    try {
      out = v->get<T>();
    } catch (const nlohmann::json::exception&) {
      throw ConfigError("wrong type", child(key));
    }
  }
  void object(const char* key, const std::function<void(ObjectReader&)>& fn);
  // Throws ConfigError naming the first key that was never read.
  void finish() const;
  std::string child(const std::string& key) const { return path_ + "/" + key; }
  const std::string& path() const { return path_; }

 private:
  const nlohmann::json* take(const char* key);
  const nlohmann::json& j_;
  std::string path_;
  std::set<std::string> seen_;
};

void read_encoder(ObjectReader& r, const char* key, nn::EncoderConfig& cfg);
nlohmann::json encoder_json(const nn::EncoderConfig& cfg);
void validate_encoder(const nn::EncoderConfig& cfg, const std::string& where);

nlohmann::json read_json(const std::filesystem::path& path);

}  // namespace skillsight
