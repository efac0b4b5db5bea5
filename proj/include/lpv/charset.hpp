#pragma once

#include <string>
#include <string_view>
#include <vector>

#include "lpv/real.hpp"

namespace lpv::inline LPV_NS {

// Ordered symbol list followed by the [EOS] and [PAD] classes.
class Charset {
 public:
  Charset() = default;
  explicit Charset(std::string symbols);

  const std::string& symbols() const { return symbols_; }
  std::size_t classes() const { return symbols_.size() + 2; }
  int eos() const { return static_cast<int>(symbols_.size()); }
  int pad() const { return static_cast<int>(symbols_.size()) + 1; }
  bool contains(char c) const { return symbols_.find(c) != std::string::npos; }
  int index_of(char c) const;

  // text + [EOS] + [PAD]... to length t_max; needs text.size() <= t_max - 1.
  std::vector<int> encode(std::string_view text, std::size_t t_max) const;
  // Symbols up to the first [EOS]; [PAD] is skipped.
  std::string decode(const std::vector<int>& classes) const;

 private:
  std::string symbols_;
};

}  // namespace lpv::inline LPV_NS
