#pragma once

#include <cstddef>
#include <string>
#include <string_view>
#include <unordered_map>
#include <vector>

#include <nlohmann/json.hpp>

namespace oscar {

/// Lowercased alphanumeric runs; whitespace and punctuation separate tokens.
/// No stemming.
std::vector<std::string> tokenize(std::string_view text);

std::string join(const std::vector<std::string>& tokens, std::string_view sep = " ");
std::string trim(std::string_view s);

namespace special {
inline constexpr std::string_view kPad = "[PAD]";
inline constexpr std::string_view kUnk = "[UNK]";
inline constexpr std::string_view kRule = "[RULE]";
inline constexpr std::string_view kCls = "[CLS]";
inline constexpr std::string_view kSep = "[SEP]";
inline constexpr std::string_view kBos = "[BOS]";
inline constexpr std::string_view kEos = "[EOS]";
}  // namespace special

/// Token <-> id map. Ids 0..6 are the special tokens in the order
/// PAD, UNK, RULE, CLS, SEP, BOS, EOS.
class Vocabulary {
 public:
  static constexpr std::size_t kPad = 0, kUnk = 1, kRule = 2, kCls = 3, kSep = 4, kBos = 5,
                               kEos = 6;

  Vocabulary();

  std::size_t add(const std::string& token);
  void add_text(std::string_view text);
  std::size_t id(const std::string& token) const;  // kUnk when absent
  const std::string& token(std::size_t id) const { return tokens_.at(id); }
  bool contains(const std::string& token) const { return ids_.contains(token); }
  std::size_t size() const { return tokens_.size(); }

  std::vector<std::size_t> encode(std::string_view text) const;
  std::vector<std::size_t> encode(const std::vector<std::string>& tokens) const;
  /// Drops special tokens.
  std::vector<std::string> decode(const std::vector<std::size_t>& ids) const;

  nlohmann::json to_json() const;
  static Vocabulary from_json(const nlohmann::json& j);

 private:
  std::vector<std::string> tokens_;
  std::unordered_map<std::string, std::size_t> ids_;
};

}  // namespace oscar
