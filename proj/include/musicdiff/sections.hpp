#pragma once

#include <vector>

#include "musicdiff/common.hpp"

namespace musicdiff {

constexpr int kSectionClasses = 10;  // intro, verse, chorus, bridge, outro + 5 more

// A labelled span of the piece on the semiquaver grid, end exclusive.
struct SectionAnnotation {
  int start = 0;
  int end = 0;
  int label = 0;  // 0..9

  friend bool operator==(const SectionAnnotation&, const SectionAnnotation&) = default;
};

// Throws unless the annotations are sorted, disjoint, and well-formed.
void validate_sections(const std::vector<SectionAnnotation>& sections);

// Index of the annotation containing `pos`, or -1.
int section_at(const std::vector<SectionAnnotation>& sections, int pos);

}  // namespace musicdiff
