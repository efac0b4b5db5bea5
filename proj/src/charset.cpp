#include "lpv/charset.hpp"

#include <algorithm>

#include "lpv/errors.hpp"

namespace lpv::inline LPV_NS {

Charset::Charset(std::string symbols) : symbols_(std::move(symbols)) {
  if (symbols_.empty()) throw ConfigError("charset must not be empty");
  std::string sorted = symbols_;
  std::sort(sorted.begin(), sorted.end());
  if (std::adjacent_find(sorted.begin(), sorted.end()) != sorted.end()) {
    throw ConfigError("charset symbols must be unique: \"" + symbols_ + "\"");
  }
}

int Charset::index_of(char c) const {
  auto pos = symbols_.find(c);
  if (pos == std::string::npos) throw ConfigError(std::string("symbol '") + c + "' is not in the charset");
  return static_cast<int>(pos);
}

std::vector<int> Charset::encode(std::string_view text, std::size_t t_max) const {
  if (text.size() + 1 > t_max) {
    throw ConfigError("text \"" + std::string(text) + "\" does not fit " + std::to_string(t_max) + " slots with [EOS]");
  }
  std::vector<int> out(t_max, pad());
  for (std::size_t i = 0; i < text.size(); ++i) out[i] = index_of(text[i]);
  out[text.size()] = eos();
  return out;
}

std::string Charset::decode(const std::vector<int>& classes) const {
  std::string out;
  for (int c : classes) {
    if (c == eos()) break;
    if (c < 0 || c >= static_cast<int>(symbols_.size())) continue;
    out.push_back(symbols_[static_cast<std::size_t>(c)]);
  }
  return out;
}

}  // namespace lpv::inline LPV_NS
