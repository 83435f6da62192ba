#pragma once

#include <map>
#include <string>
#include <string_view>
#include <vector>

#include "cbench/util.hpp"

namespace cbench::xml {

class ParseError : public Error {
 public:
  using Error::Error;
};

struct Node {
  std::string name;
  std::map<std::string, std::string> attributes;
  /// Direct character data, entity-decoded and trimmed.
  std::string text;
  std::vector<Node> children;

  const Node* child(std::string_view child_name) const;
  std::vector<const Node*> children_named(std::string_view child_name) const;
  /// Trimmed text of the first child with that name, or "" when absent.
  std::string child_text(std::string_view child_name) const;
  bool has_child(std::string_view child_name) const { return child(child_name) != nullptr; }
  std::string attribute(std::string_view key) const;
};

/// Finds the first <root ...> element anywhere in free-form model output
/// (prose, code fences and all) and parses it leniently: unclosed elements
/// are closed at end of input or at an ancestor's close tag, stray close tags
/// are dropped, and a bare '<' that does not start a tag is kept as text.
/// Throws ParseError when no such element exists.
Node parse_block(std::string_view text, std::string_view root);

std::string escape(std::string_view text);
std::string decode_entities(std::string_view text);

/// <name>escaped text</name>
std::string element(std::string_view name, std::string_view text);

}  // namespace cbench::xml
