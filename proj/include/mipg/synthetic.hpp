#pragma once

#include <filesystem>
#include <fstream>
#include <string>
#include <vector>

#include "mipg/datapipe.hpp"

namespace mipg {

/**
 * Planted corpus for desk-scale runs. Concept k is realized by the single
 * character 2 + k; the remaining ids are filler. Each image carries a few
 * concepts and a feature grid built from per-concept prototypes plus noise,
 * and owns one poem whose every line plants `keyword_chars_per_line` of the
 * image's concept characters among random filler.
 */
struct SyntheticSpec {
  std::size_t images = 50;
  std::size_t concepts = 8;
  std::size_t concepts_per_image = 3;
  std::size_t keyword_chars_per_line = 2;
  std::size_t vocab_size = 24;
  std::size_t visual_count = 4;
  std::size_t visual_dim = 6;
  std::size_t lines_per_poem = 4;
  std::size_t chars_per_line = 5;
  double feature_noise = 0.1;
  std::uint64_t seed = 1;
};

struct SyntheticCorpus {
  SyntheticSpec spec;
  Corpus corpus;  // image i owns poem i
  ConceptLexicon lexicon;
  std::vector<Tensor> features;  // by image index
};

inline SyntheticCorpus make_synthetic_corpus(const SyntheticSpec& spec) {
  if (spec.vocab_size < 2 + spec.concepts + 1) throw ConfigError("synthetic vocab too small for its concepts");
  if (spec.concepts_per_image == 0 || spec.concepts_per_image > spec.concepts)
    throw ConfigError("concepts_per_image must lie in [1, concepts]");
  if (spec.keyword_chars_per_line > spec.chars_per_line)
    throw ConfigError("keyword_chars_per_line exceeds chars_per_line");
  Rng rng(spec.seed);
  SyntheticCorpus out;
  out.spec = spec;
  for (std::size_t k = 0; k < spec.concepts; ++k)
    out.lexicon.realizations["concept" + std::to_string(k)] = {{static_cast<CharId>(2 + k)}};
  const CharId filler_lo = static_cast<CharId>(2 + spec.concepts);
  const auto filler_n = spec.vocab_size - 2 - spec.concepts;

  std::vector<Tensor> prototypes;
  for (std::size_t k = 0; k < spec.concepts; ++k)
    prototypes.push_back(Tensor::uniform({spec.visual_dim}, rng, -1.0, 1.0));

  for (std::size_t i = 0; i < spec.images; ++i) {
    std::vector<std::size_t> all(spec.concepts);
    std::iota(all.begin(), all.end(), std::size_t{0});
    rng.shuffle(std::span<std::size_t>(all));
    std::vector<std::size_t> mine(all.begin(), all.begin() + static_cast<std::ptrdiff_t>(spec.concepts_per_image));
    std::sort(mine.begin(), mine.end());

    ImageRecord im;
    im.image_id = "img" + std::to_string(i);
    im.feature_path = "features/" + im.image_id + ".feat";
    for (std::size_t k : mine) im.concepts.push_back("concept" + std::to_string(k));
    Tensor grid({spec.visual_count, spec.visual_dim});
    for (std::size_t b = 0; b < spec.visual_count; ++b)
      for (std::size_t d = 0; d < spec.visual_dim; ++d)
        grid.at(b, d) = prototypes[mine[b % mine.size()]][d] + rng.uniform(-spec.feature_noise, spec.feature_noise);
    out.corpus.images.push_back(std::move(im));
    out.features.push_back(std::move(grid));

    PoemRecord poem;
    poem.poem_id = "poem" + std::to_string(i);
    std::size_t cursor = rng.below(mine.size());
    for (std::size_t l = 0; l < spec.lines_per_poem; ++l) {
      Line line(spec.chars_per_line);
      for (auto& c : line) c = filler_lo + static_cast<CharId>(rng.below(filler_n));
      std::vector<std::size_t> slots(spec.chars_per_line);
      std::iota(slots.begin(), slots.end(), std::size_t{0});
      rng.shuffle(std::span<std::size_t>(slots));
      for (std::size_t j = 0; j < spec.keyword_chars_per_line; ++j)
        line[slots[j]] = static_cast<CharId>(2 + mine[(cursor++) % mine.size()]);
      poem.lines.push_back(std::move(line));
    }
    out.corpus.poems.push_back(std::move(poem));
  }
  return out;
}

/// Samples pairing each image only with its own poem.
inline std::vector<TrainSample> planted_samples(const SyntheticCorpus& sc) {
  std::vector<TrainSample> out;
  for (std::size_t i = 0; i < sc.corpus.images.size(); ++i) {
    const auto& im = sc.corpus.images[i];
    const auto keywords = image_keywords(im, sc.lexicon);
    std::vector<CharId> preceding;
    for (const auto& line : sc.corpus.poems[i].lines) {
      out.push_back({im.image_id, im.feature_path, sc.features[i], keywords, preceding, line});
      preceding.insert(preceding.end(), line.begin(), line.end());
    }
  }
  return out;
}

/// Writes corpus.jsonl, concepts.tsv and features/*.feat under `dir`.
inline void write_synthetic_corpus(const SyntheticCorpus& sc, const std::filesystem::path& dir) {
  std::filesystem::create_directories(dir / "features");
  for (std::size_t i = 0; i < sc.features.size(); ++i)
    write_features(dir / sc.corpus.images[i].feature_path, sc.features[i]);
  std::ofstream corpus(dir / "corpus.jsonl");
  write_corpus(corpus, sc.corpus);
  std::ofstream lex(dir / "concepts.tsv");
  write_concept_lexicon(lex, sc.lexicon);
  if (!corpus || !lex) throw InputError("cannot write synthetic corpus under " + dir.string());
}

}  // namespace mipg
