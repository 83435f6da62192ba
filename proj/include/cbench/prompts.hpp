#pragma once

#include <map>
#include <string>
#include <utility>
#include <vector>

namespace cbench {

/// Prompt templates keyed by file stem ("ripple_initiation", "task_ranking",
/// ...). The shipped pack is compiled in; a directory can override any
/// subset of files.
class PromptPack {
 public:
  static const PromptPack& builtin();
  static PromptPack from_directory(const std::string& dir);

  const std::string& get(const std::string& name) const;
  std::string render(const std::string& name,
                     const std::vector<std::pair<std::string, std::string>>& values) const;
  std::vector<std::string> names() const;
  /// Content hash over every template, recorded in run configs.
  std::string hash() const;

 private:
  std::map<std::string, std::string> templates_;
};

}  // namespace cbench
