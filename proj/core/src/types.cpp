#include "imagine/types.hpp"

#include <cmath>
#include <unordered_set>

#include "imagine/text.hpp"

namespace imagine {

const char* to_string(SourceTag tag) {
  switch (tag) {
    case SourceTag::AbsAT: return "AbsAT";
    case SourceTag::VCR: return "VCR";
    case SourceTag::Sherlock: return "Sherlock";
    case SourceTag::Eval: return "Eval";
    case SourceTag::Synthetic: return "Synthetic";
  }
  return "Synthetic";
}

SourceTag source_tag_from_string(const std::string& s) {
  if (s == "AbsAT") return SourceTag::AbsAT;
  if (s == "VCR") return SourceTag::VCR;
  if (s == "Sherlock") return SourceTag::Sherlock;
  if (s == "Eval") return SourceTag::Eval;
  if (s == "Synthetic") return SourceTag::Synthetic;
  throw DataError("unknown source_tag: " + s);
}

void VisualFeatureSet::validate() const {
  if (patches.rows < 1) throw DataError("VisualFeatureSet: P must be >= 1");
  for (double v : patches.a) {
    if (!std::isfinite(v)) throw NumericError("VisualFeatureSet: non-finite entry");
  }
}

void QAPair::validate() const {
  if (candidates.size() < 2) throw DataError("QAPair " + id + ": needs at least 2 candidates");
  if (gold_index < 0 || gold_index >= n()) {
    throw DataError("QAPair " + id + ": gold_index " + std::to_string(gold_index) +
                    " out of range [0, " + std::to_string(n()) + ")");
  }
  std::unordered_set<std::string> seen;
  for (const auto& c : candidates) {
    if (!seen.insert(normalize_text(c)).second) {
      throw DataError("QAPair " + id + ": duplicate candidate after normalization: \"" + c + "\"");
    }
  }
}

std::string VQAInstance::effective_question() const {
  if (caption && !caption->empty()) return *caption + qa.question;
  return qa.question;
}

int ScoreSet::n() const {
  if (has_lm) return static_cast<int>(s_lm.size());
  if (has_itm) return static_cast<int>(s_itm.size());
  return static_cast<int>(s_joint.size());
}

}  // namespace imagine
