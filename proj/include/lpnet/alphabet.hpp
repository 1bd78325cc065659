#pragma once

// The 37-class label inventory: 26 capital letters, 10 digits, and the blank
// (non-character) class at the last index.

#include <string>
#include <vector>

#include "lpnet/tensor.hpp"

namespace lpnet {

struct Alphabet {
  static constexpr int kNumClasses = 37;
  static constexpr int kBlank = 36;

  static const std::string& symbols() {
    static const std::string s = "ABCDEFGHIJKLMNOPQRSTUVWXYZ0123456789";
    return s;
  }

  static int index_of(char c) {
    if (c >= 'A' && c <= 'Z') return c - 'A';
    if (c >= '0' && c <= '9') return 26 + (c - '0');
    return -1;
  }

  static char symbol(int index) {
    check_arg(index >= 0 && index < int(symbols().size()),
              "alphabet: index " + std::to_string(index) + " out of range");
    return symbols()[size_t(index)];
  }

  static std::vector<int> encode(const std::string& label) {
    std::vector<int> out;
    out.reserve(label.size());
    for (char c : label) {
      int idx = index_of(c);
      check_arg(idx >= 0, std::string("alphabet: symbol '") + c + "' not in inventory");
      out.push_back(idx);
    }
    return out;
  }

  static std::string decode(const std::vector<int>& indices) {
    std::string out;
    out.reserve(indices.size());
    for (int i : indices) out.push_back(symbol(i));
    return out;
  }
};

// The collapse operator: merge consecutive repeats, then drop blanks.
// Equivalently, emit a symbol when it is non-blank and differs from the
// previous path element.
inline std::vector<int> collapse_repeats_and_blanks(const std::vector<int>& path,
                                                    int blank) {
  std::vector<int> out;
  int prev = -1;
  for (int p : path) {
    if (p != blank && p != prev) out.push_back(p);
    prev = p;
  }
  return out;
}

}  // namespace lpnet
