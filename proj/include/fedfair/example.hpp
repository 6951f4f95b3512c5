#pragma once

#include <string>
#include <vector>

#include "fedfair/common.hpp"

namespace fedfair {

// One labeled observation with its sensitive-group id.
// Group 0 is the unprivileged group, group 1 the privileged one.
struct Example {
  std::vector<double> features;
  int label = 0;
  int group = 1;

  bool operator==(const Example &o) const = default;
};

// The five task concepts. 'A' is the base concept; the others label-swap
// one class pair for group-0 examples.
enum class ConceptId : int { A = 0, B = 1, C = 2, D = 3, E = 4 };

inline char concept_symbol(ConceptId c) {
  return static_cast<char>('A' + static_cast<int>(c));
}

inline ConceptId parse_concept(char symbol) {
  if (symbol < 'A' || symbol > 'E') {
    throw ParseError(std::string("unknown concept symbol '") + symbol + "'");
  }
  return static_cast<ConceptId>(symbol - 'A');
}

}  // namespace fedfair
