// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <array>
#include <filesystem>
#include <map>
#include <string>

#include "charis/digest.hpp"
#include "charis/error.hpp"
#include "charis/util.hpp"

namespace charis {

/// Prompt templates with `{{name}}` placeholders, one text file per stage.
class TemplateSet {
 public:
  static constexpr std::array<const char*, 7> kNames = {"type",           "style",          "attributes", "features",
                                                        "transformation", "categorization", "synth"};

  TemplateSet() = default;

  static TemplateSet load(const std::filesystem::path& dir) {
    TemplateSet set;
    for (const char* name : kNames) {
      const auto path = dir / (std::string(name) + ".txt");
      if (!std::filesystem::exists(path)) throw TemplateError("missing template " + path.string());
      set.add(name, fs_util::read_file(path));
    }
    return set;
  }

  void add(const std::string& name, std::string body) {
    bodies_[name] = std::move(body);
    std::string all;
    for (const auto& [n, b] : bodies_) all += n + "\n" + std::to_string(b.size()) + "\n" + b;
    digest_ = sha256_hex(all);
  }

  const std::string& body(const std::string& name) const {
    auto it = bodies_.find(name);
    if (it == bodies_.end()) throw TemplateError("no template named '" + name + "'");
    return it->second;
  }

  /// Substitutes every placeholder; an unknown or unused variable is an error.
  std::string render(const std::string& name, const std::map<std::string, std::string>& vars) const {
    const std::string& tpl = body(name);
    std::string out;
    std::map<std::string, bool> used;
    std::size_t pos = 0;
    while (true) {
      const auto open = tpl.find("{{", pos);
      if (open == std::string::npos) {
        out.append(tpl, pos);
        break;
      }
      const auto close = tpl.find("}}", open + 2);
      if (close == std::string::npos) throw TemplateError("template '" + name + "' has an unterminated placeholder");
      out.append(tpl, pos, open - pos);
      const std::string key(text::trim(std::string_view(tpl).substr(open + 2, close - open - 2)));
      auto it = vars.find(key);
      if (it == vars.end()) throw TemplateError("template '" + name + "' needs variable '" + key + "'");
      out += it->second;
      used[key] = true;
      pos = close + 2;
    }
    for (const auto& [key, _] : vars)
      if (!used.count(key)) throw TemplateError("template '" + name + "' does not use variable '" + key + "'");
    return out;
  }

  /// SHA-256 over every (name, body) pair in name order.
  const std::string& digest() const { return digest_; }

 private:
  std::map<std::string, std::string> bodies_;
  std::string digest_;
};

}  // namespace charis
