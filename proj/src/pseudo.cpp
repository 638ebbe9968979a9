#include "stylemt/pseudo.hpp"

#include <cstdio>
#include <fstream>

#include "stylemt/error.hpp"

namespace stylemt {

std::string provenance_name(Provenance p) {
  switch (p) {
    case Provenance::smt: return "smt";
    case Provenance::back_translated: return "back_translated";
    case Provenance::self_sample: return "self_sample";
  }
  return "unknown";
}

void save_pseudo(const std::filesystem::path& dir, const PseudoCorpus& corpus, const Vocabulary& vocab,
                 bool with_weights) {
  std::filesystem::create_directories(dir);
  const std::string stem = "pseudo." + direction_name(corpus.from);
  std::ofstream src(dir / (stem + ".src"), std::ios::trunc);
  std::ofstream tgt(dir / (stem + ".tgt"), std::ios::trunc);
  if (!src || !tgt) throw DataError("cannot write pseudo corpus into " + dir.string());
  std::ofstream weights;
  if (with_weights) weights.open(dir / (stem + ".weight"), std::ios::trunc);
  char buf[64];
  for (const auto& p : corpus.pairs) {
    src << detokenize(decode(p.input, vocab)) << '\n';
    tgt << detokenize(decode(p.output, vocab)) << '\n';
    if (with_weights) {
      std::snprintf(buf, sizeof(buf), "%.17g", p.weight);
      weights << buf << '\t' << provenance_name(p.provenance) << '\n';
    }
  }
}

PseudoCorpus load_pseudo(const std::filesystem::path& dir, Style from, const Vocabulary& vocab) {
  const std::string stem = "pseudo." + direction_name(from);
  std::ifstream src(dir / (stem + ".src"));
  std::ifstream tgt(dir / (stem + ".tgt"));
  if (!src || !tgt) throw DataError("pseudo corpus missing in " + dir.string());
  PseudoCorpus c;
  c.from = from;
  std::string a, b;
  while (std::getline(src, a)) {
    if (!std::getline(tgt, b)) throw DataError("pseudo corpus sides are not line-aligned");
    c.pairs.push_back({encode_line(tokenize(a, false), vocab), encode_line(tokenize(b, false), vocab), 1.0,
                       Provenance::smt});
  }
  if (std::getline(tgt, b)) throw DataError("pseudo corpus sides are not line-aligned");
  return c;
}

}  // namespace stylemt
