#pragma once

/**
 * Token vocabulary for the chained-arithmetic domain.
 *
 * Tokens are atomic strings (digits, operators, variable letters, the
 * answer-template words, and four specials). Text serialization is the
 * space-joined token string; encode(decode(x)) == x because no token
 * contains whitespace. Ids are dense 0..|V|-1 in a fixed build order,
 * so corpora and checkpoints agree across runs.
 */

#include <sstream>
#include <string>
#include <unordered_map>
#include <vector>

#include "rpo/common.hpp"

namespace rpo {

class Vocabulary {
 public:
  Vocabulary() { build(); }

  int size() const { return static_cast<int>(tokens_.size()); }

  Token question_start() const { return q_start_; }
  Token answer_start() const { return a_start_; }
  Token step_delimiter() const { return delim_; }
  Token end_of_sequence() const { return eos_; }

  const std::string& token_text(Token id) const {
    require(id >= 0 && id < size(), "token id out of range");
    return tokens_[static_cast<size_t>(id)];
  }

  Token id_of(const std::string& text) const {
    auto it = index_.find(text);
    if (it == index_.end()) throw AuditError("unknown token: '" + text + "'");
    return it->second;
  }

  bool is_digit(Token id) const {
    const std::string& t = token_text(id);
    return t.size() == 1 && t[0] >= '0' && t[0] <= '9';
  }

  bool is_minus(Token id) const { return token_text(id) == "-"; }

  /// Encode whitespace-separated token text. Inverse of decode().
  TokenSeq encode(const std::string& text) const {
    TokenSeq out;
    std::istringstream in(text);
    std::string word;
    while (in >> word) out.push_back(id_of(word));
    return out;
  }

  std::string decode(const TokenSeq& ids) const {
    std::string out;
    for (size_t i = 0; i < ids.size(); ++i) {
      if (i) out += ' ';
      out += token_text(ids[i]);
    }
    return out;
  }

  /// Render a signed integer as tokens: optional "-" then one digit per token.
  TokenSeq render_int(long long value) const {
    TokenSeq out;
    unsigned long long mag;
    if (value < 0) {
      out.push_back(id_of("-"));
      mag = static_cast<unsigned long long>(-value);
    } else {
      mag = static_cast<unsigned long long>(value);
    }
    std::string digits = std::to_string(mag);
    for (char c : digits) out.push_back(id_of(std::string(1, c)));
    return out;
  }

  static const std::vector<std::string>& variable_names() {
    static const std::vector<std::string> names = {"x", "y", "z", "u", "v", "w"};
    return names;
  }

 private:
  void build() {
    auto add = [this](const std::string& t) {
      index_[t] = static_cast<Token>(tokens_.size());
      tokens_.push_back(t);
    };
    add("<q>");
    add("<a>");
    add("<sep>");
    add("<eos>");
    q_start_ = 0;
    a_start_ = 1;
    delim_ = 2;
    eos_ = 3;
    for (char c = '0'; c <= '9'; ++c) add(std::string(1, c));
    for (const char* op : {"+", "-", "*", "/", "=", ";", "?"}) add(op);
    for (const auto& v : variable_names()) add(v);
    for (const char* w : {"so", "the", "answer", "is"}) add(w);
  }

  std::vector<std::string> tokens_;
  std::unordered_map<std::string, Token> index_;
  Token q_start_ = 0, a_start_ = 0, delim_ = 0, eos_ = 0;
};

}  // namespace rpo
