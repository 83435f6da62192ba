#include "cbench/xml.hpp"

#include <algorithm>
#include <cctype>
#include <cstdlib>

namespace cbench::xml {

const Node* Node::child(std::string_view child_name) const {
  for (const auto& c : children) {
    if (c.name == child_name) return &c;
  }
  return nullptr;
}

std::vector<const Node*> Node::children_named(std::string_view child_name) const {
  std::vector<const Node*> out;
  for (const auto& c : children) {
    if (c.name == child_name) out.push_back(&c);
  }
  return out;
}

std::string Node::child_text(std::string_view child_name) const {
  const Node* c = child(child_name);
  return c ? c->text : std::string();
}

std::string Node::attribute(std::string_view key) const {
  auto it = attributes.find(std::string(key));
  return it == attributes.end() ? std::string() : it->second;
}

std::string escape(std::string_view text) {
  std::string out;
  out.reserve(text.size());
  for (char c : text) {
    switch (c) {
      case '&': out += "&amp;"; break;
      case '<': out += "&lt;"; break;
      case '>': out += "&gt;"; break;
      case '"': out += "&quot;"; break;
      default: out += c;
    }
  }
  return out;
}

std::string element(std::string_view name, std::string_view text) {
  return "<" + std::string(name) + ">" + escape(text) + "</" + std::string(name) + ">";
}

std::string decode_entities(std::string_view text) {
  std::string out;
  out.reserve(text.size());
  std::size_t i = 0;
  while (i < text.size()) {
    if (text[i] != '&') {
      out += text[i++];
      continue;
    }
    std::size_t semi = text.find(';', i);
    if (semi == std::string_view::npos || semi - i > 10) {
      out += text[i++];
      continue;
    }
    std::string_view ent = text.substr(i + 1, semi - i - 1);
    if (ent == "amp") out += '&';
    else if (ent == "lt") out += '<';
    else if (ent == "gt") out += '>';
    else if (ent == "quot") out += '"';
    else if (ent == "apos") out += '\'';
    else if (!ent.empty() && ent[0] == '#') {
      const bool hex = ent.size() > 1 && (ent[1] == 'x' || ent[1] == 'X');
      std::string digits(ent.substr(hex ? 2 : 1));
      char* end = nullptr;
      unsigned long cp = std::strtoul(digits.c_str(), &end, hex ? 16 : 10);
      if (digits.empty() || *end != '\0' || cp > 0x10ffff) {
        out.append(text.substr(i, semi - i + 1));
      } else {
        out += encode_utf8(static_cast<char32_t>(cp));
      }
    } else {
      out.append(text.substr(i, semi - i + 1));
    }
    i = semi + 1;
  }
  return out;
}

namespace {

bool is_name_start(char c) {
  return std::isalpha(static_cast<unsigned char>(c)) || c == '_' || c == ':';
}

bool is_name_char(char c) {
  return std::isalnum(static_cast<unsigned char>(c)) || c == '_' || c == ':' || c == '-' || c == '.';
}

class Parser {
 public:
  explicit Parser(std::string_view src) : s_(src) {}

  // Parses the element whose '<' is at pos_.
  /// `closed` reports whether this element's own end tag was seen.
  Node element(std::vector<std::string>& open, bool* closed = nullptr) {
    Node node;
    ++pos_;  // '<'
    node.name = read_name();
    read_attributes(node);
    if (peek("/>")) {
      pos_ += 2;
      if (closed) *closed = true;
      return node;
    }
    if (pos_ < s_.size() && s_[pos_] == '>') ++pos_;
    open.push_back(node.name);
    std::string text;
    while (pos_ < s_.size()) {
      if (peek("</")) {
        std::size_t save = pos_;
        pos_ += 2;
        std::string name = read_name();
        skip_to('>');
        if (name == node.name) {
          if (closed) *closed = true;
          break;
        }
        if (std::find(open.begin(), open.end(), name) != open.end()) {
          // An ancestor closes: close this element implicitly.
          pos_ = save;
          break;
        }
        continue;  // stray close tag
      }
      if (peek("<!--")) {
        std::size_t end = s_.find("-->", pos_ + 4);
        pos_ = end == std::string_view::npos ? s_.size() : end + 3;
        continue;
      }
      if (peek("<![CDATA[")) {
        std::size_t end = s_.find("]]>", pos_ + 9);
        std::size_t stop = end == std::string_view::npos ? s_.size() : end;
        text.append(s_.substr(pos_ + 9, stop - pos_ - 9));
        pos_ = end == std::string_view::npos ? s_.size() : end + 3;
        continue;
      }
      if (s_[pos_] == '<' && pos_ + 1 < s_.size() && is_name_start(s_[pos_ + 1])) {
        node.children.push_back(element(open));
        continue;
      }
      std::size_t next = s_.find('<', pos_ + 1);
      if (next == std::string_view::npos) next = s_.size();
      text.append(decode_entities(s_.substr(pos_, next - pos_)));
      pos_ = next;
    }
    open.pop_back();
    node.text = trim(text);
    return node;
  }

  std::size_t pos_ = 0;

 private:
  bool peek(std::string_view lit) const { return s_.substr(pos_, lit.size()) == lit; }

  std::string read_name() {
    std::size_t start = pos_;
    while (pos_ < s_.size() && is_name_char(s_[pos_])) ++pos_;
    return std::string(s_.substr(start, pos_ - start));
  }

  void skip_ws() {
    while (pos_ < s_.size() && std::isspace(static_cast<unsigned char>(s_[pos_]))) ++pos_;
  }

  void skip_to(char c) {
    std::size_t p = s_.find(c, pos_);
    pos_ = p == std::string_view::npos ? s_.size() : p + 1;
  }

  void read_attributes(Node& node) {
    while (pos_ < s_.size()) {
      skip_ws();
      if (pos_ >= s_.size() || s_[pos_] == '>' || peek("/>")) return;
      std::string key = read_name();
      if (key.empty()) {
        ++pos_;  // junk inside the tag
        continue;
      }
      skip_ws();
      std::string value;
      if (pos_ < s_.size() && s_[pos_] == '=') {
        ++pos_;
        skip_ws();
        if (pos_ < s_.size() && (s_[pos_] == '"' || s_[pos_] == '\'')) {
          char q = s_[pos_++];
          std::size_t end = s_.find(q, pos_);
          if (end == std::string_view::npos) end = s_.size();
          value = decode_entities(s_.substr(pos_, end - pos_));
          pos_ = std::min(end + 1, s_.size());
        } else {
          std::size_t start = pos_;
          while (pos_ < s_.size() && !std::isspace(static_cast<unsigned char>(s_[pos_])) &&
                 s_[pos_] != '>' && !peek("/>")) {
            ++pos_;
          }
          value = std::string(s_.substr(start, pos_ - start));
        }
      }
      node.attributes[key] = value;
    }
  }

  std::string_view s_;
};

std::size_t find_open_tag(std::string_view text, std::string_view root) {
  std::string needle = "<" + std::string(root);
  std::size_t pos = 0;
  while ((pos = text.find(needle, pos)) != std::string_view::npos) {
    std::size_t after = pos + needle.size();
    if (after >= text.size() || text[after] == '>' || text[after] == '/' ||
        std::isspace(static_cast<unsigned char>(text[after]))) {
      return pos;
    }
    pos = after;
  }
  return std::string_view::npos;
}

}  // namespace

Node parse_block(std::string_view text, std::string_view root) {
  std::size_t start = find_open_tag(text, root);
  if (start == std::string_view::npos) {
    throw ParseError("no <" + std::string(root) + "> element in model output");
  }
  Parser p(text);
  p.pos_ = start;
  std::vector<std::string> open;
  bool closed = false;
  Node n = p.element(open, &closed);
  if (!closed) throw ParseError("<" + std::string(root) + "> is never closed");
  return n;
}

}  // namespace cbench::xml
