#include "cbench/prompts.hpp"

#include <filesystem>
#include <map>
#include <string_view>

#include "cbench/util.hpp"

namespace cbench {

namespace detail {
const std::map<std::string, std::string_view>& embedded_resources();
}

const PromptPack& PromptPack::builtin() {
  static const PromptPack pack = [] {
    PromptPack p;
    for (const auto& [path, content] : detail::embedded_resources()) {
      if (path.rfind("prompts/", 0) != 0) continue;
      std::string stem = std::filesystem::path(path).stem().string();
      p.templates_[stem] = std::string(content);
    }
    return p;
  }();
  return pack;
}

PromptPack PromptPack::from_directory(const std::string& dir) {
  namespace fs = std::filesystem;
  PromptPack p = builtin();
  if (!fs::is_directory(dir)) throw ConfigError("prompt directory not found: " + dir);
  for (const auto& entry : fs::directory_iterator(dir)) {
    if (!entry.is_regular_file() || entry.path().extension() != ".txt") continue;
    p.templates_[entry.path().stem().string()] = read_file(entry.path().string());
  }
  return p;
}

const std::string& PromptPack::get(const std::string& name) const {
  auto it = templates_.find(name);
  if (it == templates_.end()) throw ConfigError("prompt pack has no template '" + name + "'");
  return it->second;
}

std::string PromptPack::render(const std::string& name,
                               const std::vector<std::pair<std::string, std::string>>& values) const {
  return render_template(get(name), values);
}

std::vector<std::string> PromptPack::names() const {
  std::vector<std::string> out;
  for (const auto& [k, v] : templates_) out.push_back(k);
  return out;
}

std::string PromptPack::hash() const {
  std::string all;
  for (const auto& [k, v] : templates_) {
    all += k;
    all += '\0';
    all += v;
    all += '\0';
  }
  return hex64(fnv1a64(all));
}

}  // namespace cbench
