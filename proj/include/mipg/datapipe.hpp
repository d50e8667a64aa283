#pragma once

#include <algorithm>
#include <bit>
#include <cmath>
#include <cstdint>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <functional>
#include <map>
#include <set>
#include <span>
#include <sstream>
#include <string>
#include <vector>

#include <json.hpp>

#include "mipg/poetics.hpp"
#include "mipg/training.hpp"

namespace mipg {

/// Concept label → character sequences realizing it.
struct ConceptLexicon {
  std::map<std::string, std::vector<std::vector<CharId>>> realizations;

  const std::vector<std::vector<CharId>>* find(const std::string& label) const {
    auto it = realizations.find(label);
    return it == realizations.end() ? nullptr : &it->second;
  }
};

/// Lines "label<TAB>r1,r2,..." where each realization is character ids joined by '+'.
inline ConceptLexicon parse_concept_lexicon(std::istream& in) {
  ConceptLexicon lex;
  std::string line;
  std::size_t lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line.empty() || line[0] == '#') continue;
    const auto tab = line.find('\t');
    if (tab == std::string::npos || tab == 0)
      throw InputError("concept lexicon line " + std::to_string(lineno) + ": expected label<TAB>realizations");
    auto& out = lex.realizations[line.substr(0, tab)];
    std::istringstream alts(line.substr(tab + 1));
    std::string alt;
    while (std::getline(alts, alt, ',')) {
      std::vector<CharId> chars;
      std::istringstream ids(alt);
      std::string id;
      while (std::getline(ids, id, '+')) {
        try {
          std::size_t used = 0;
          const long v = std::stol(id, &used);
          if (used != id.size() || v < 0) throw std::invalid_argument(id);
          chars.push_back(static_cast<CharId>(v));
        } catch (const std::exception&) {
          throw InputError("concept lexicon line " + std::to_string(lineno) + ": bad character id '" + id + "'");
        }
      }
      if (chars.empty()) throw InputError("concept lexicon line " + std::to_string(lineno) + ": empty realization");
      out.push_back(std::move(chars));
    }
    if (out.empty()) throw InputError("concept lexicon line " + std::to_string(lineno) + ": no realizations");
  }
  return lex;
}

inline ConceptLexicon load_concept_lexicon(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw InputError("cannot open concept lexicon " + path.string());
  return parse_concept_lexicon(in);
}

inline void write_concept_lexicon(std::ostream& out, const ConceptLexicon& lex) {
  for (const auto& [label, alts] : lex.realizations) {
    out << label << '\t';
    for (std::size_t a = 0; a < alts.size(); ++a) {
      if (a) out << ',';
      for (std::size_t i = 0; i < alts[a].size(); ++i) out << (i ? "+" : "") << alts[a][i];
    }
    out << '\n';
  }
}

// ---- feature files ------------------------------------------------------------
//
//   bytes "MIPGFEAT", u32 version (1), u32 B, u32 D_v, B·D_v × f32 row-major,
//   all little-endian.

inline constexpr std::string_view kFeatureMagic = "MIPGFEAT";
inline constexpr std::uint32_t kFeatureVersion = 1;

inline void write_features(const std::filesystem::path& path, const Tensor& features) {
  if (features.rank() != 2) throw DimensionError("feature grid must be B × D_v");
  std::string bytes(kFeatureMagic);
  auto put = [&bytes](std::uint32_t v) {
    for (int i = 0; i < 4; ++i) bytes.push_back(static_cast<char>((v >> (8 * i)) & 0xff));
  };
  put(kFeatureVersion);
  put(static_cast<std::uint32_t>(features.shape()[0]));
  put(static_cast<std::uint32_t>(features.shape()[1]));
  for (double v : features.values()) put(std::bit_cast<std::uint32_t>(static_cast<float>(v)));
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw InputError("cannot write feature file " + path.string());
  out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
}

inline Tensor read_features(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw InputError("cannot open feature file " + path.string());
  const std::string bytes((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
  std::size_t pos = 0;
  auto get = [&]() -> std::uint32_t {
    if (bytes.size() - pos < 4) throw InputError("feature file truncated: " + path.string());
    std::uint32_t v = 0;
    for (int i = 0; i < 4; ++i) v |= static_cast<std::uint32_t>(static_cast<unsigned char>(bytes[pos + i])) << (8 * i);
    pos += 4;
    return v;
  };
  if (bytes.compare(0, kFeatureMagic.size(), kFeatureMagic) != 0)
    throw InputError("not a feature file (bad magic): " + path.string());
  pos = kFeatureMagic.size();
  if (get() != kFeatureVersion) throw InputError("unsupported feature file version: " + path.string());
  const std::size_t b = get(), d = get();
  if (b == 0 || d == 0) throw InputError("feature file has empty grid: " + path.string());
  if (bytes.size() - pos != b * d * 4) throw InputError("feature file size does not match its header: " + path.string());
  Tensor t({b, d});
  for (double& v : t.values()) v = static_cast<double>(std::bit_cast<float>(get()));
  return t;
}

// ---- corpus ---------------------------------------------------------------------

struct ImageRecord {
  std::string image_id;
  std::string feature_path;           // relative paths resolve against the corpus directory
  std::vector<std::string> concepts;  // stand-in for the external keyword extractor
};

struct PoemRecord {
  std::string poem_id;
  Poem lines;
};

struct Corpus {
  std::vector<ImageRecord> images;
  std::vector<PoemRecord> poems;
  std::filesystem::path base_dir;  // directory relative feature paths resolve against

  std::filesystem::path resolve(const std::string& feature_path) const {
    std::filesystem::path p(feature_path);
    return p.is_absolute() || base_dir.empty() ? p : base_dir / p;
  }
};

/// JSON Lines: {"image_id","feature_path","concepts"} or {"poem_id","lines"}.
inline Corpus parse_corpus(std::istream& in, std::filesystem::path base_dir = {}) {
  Corpus c;
  c.base_dir = std::move(base_dir);
  std::string line;
  std::size_t lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
    try {
      const auto j = nlohmann::json::parse(line);
      if (j.contains("image_id")) {
        c.images.push_back({j.at("image_id").get<std::string>(), j.at("feature_path").get<std::string>(),
                            j.value("concepts", std::vector<std::string>{})});
      } else if (j.contains("poem_id")) {
        c.poems.push_back({j.at("poem_id").get<std::string>(), j.at("lines").get<Poem>()});
      } else {
        throw InputError("record has neither image_id nor poem_id");
      }
    } catch (const nlohmann::json::exception& e) {
      throw InputError("corpus line " + std::to_string(lineno) + ": " + e.what());
    } catch (const InputError& e) {
      throw InputError("corpus line " + std::to_string(lineno) + ": " + e.what());
    }
  }
  return c;
}

inline Corpus load_corpus(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw InputError("cannot open corpus " + path.string());
  return parse_corpus(in, path.parent_path());
}

inline void write_corpus(std::ostream& out, const Corpus& c) {
  for (const auto& im : c.images)
    out << nlohmann::json{{"image_id", im.image_id}, {"feature_path", im.feature_path}, {"concepts", im.concepts}}.dump()
        << '\n';
  for (const auto& p : c.poems) out << nlohmann::json{{"poem_id", p.poem_id}, {"lines", p.lines}}.dump() << '\n';
}

// ---- concepts and matching ----------------------------------------------------------

inline bool contains_run(std::span<const CharId> haystack, std::span<const CharId> needle) {
  if (needle.empty()) return false;
  return std::search(haystack.begin(), haystack.end(), needle.begin(), needle.end()) != haystack.end();
}

/// Labels with at least one realization occurring contiguously in `line`.
inline std::set<std::string> extract_concepts(std::span<const CharId> line, const ConceptLexicon& lex) {
  std::set<std::string> out;
  for (const auto& [label, alts] : lex.realizations)
    for (const auto& alt : alts)
      if (contains_run(line, alt)) {
        out.insert(label);
        break;
      }
  return out;
}

struct Match {
  std::string image_id;
  std::string poem_id;
  std::size_t line_index = 0;  // 0-based

  friend bool operator==(const Match&, const Match&) = default;
  friend auto operator<=>(const Match&, const Match&) = default;
};

/// (image, poem, line) triples whose concept sets intersect, sorted.
inline std::vector<Match> match_pairs(std::span<const ImageRecord> images, std::span<const PoemRecord> poems,
                                      const ConceptLexicon& lex) {
  std::vector<std::vector<std::set<std::string>>> line_concepts;
  for (const auto& p : poems) {
    auto& per_line = line_concepts.emplace_back();
    for (const auto& l : p.lines) per_line.push_back(extract_concepts(l, lex));
  }
  std::vector<Match> out;
  for (const auto& im : images) {
    const std::set<std::string> mine(im.concepts.begin(), im.concepts.end());
    for (std::size_t p = 0; p < poems.size(); ++p)
      for (std::size_t l = 0; l < poems[p].lines.size(); ++l) {
        const auto& theirs = line_concepts[p][l];
        const bool hit = std::any_of(theirs.begin(), theirs.end(), [&](const auto& c) { return mine.count(c) > 0; });
        if (hit) out.push_back({im.image_id, poems[p].poem_id, l});
      }
  }
  std::sort(out.begin(), out.end());
  return out;
}

/// Keyword set K for an image: every realization of its concepts, in label order, deduplicated.
inline std::vector<Keyword> image_keywords(const ImageRecord& image, const ConceptLexicon& lex) {
  std::vector<Keyword> out;
  std::set<std::string> labels(image.concepts.begin(), image.concepts.end());
  for (const auto& label : labels)
    if (const auto* alts = lex.find(label))
      for (const auto& alt : *alts)
        if (std::find(out.begin(), out.end(), alt) == out.end()) out.push_back(alt);
  return out;
}

using FeatureLoader = std::function<Tensor(const ImageRecord&)>;

/**
 * One sample per line for every matched (image, poem) pair: sample i has the
 * poem's lines 1..i−1 as preceding context and line i as target.
 */
inline std::vector<TrainSample> build_samples(std::span<const Match> matches, std::span<const ImageRecord> images,
                                              std::span<const PoemRecord> poems, const ConceptLexicon& lex,
                                              const FeatureLoader& load) {
  std::map<std::string, const ImageRecord*> by_image;
  for (const auto& im : images) by_image[im.image_id] = &im;
  std::map<std::string, const PoemRecord*> by_poem;
  for (const auto& p : poems) by_poem[p.poem_id] = &p;
  std::set<std::pair<std::string, std::string>> pairs;
  for (const auto& m : matches) pairs.emplace(m.image_id, m.poem_id);
  std::map<std::string, Tensor> features;
  std::vector<TrainSample> out;
  for (const auto& [image_id, poem_id] : pairs) {
    const auto ii = by_image.find(image_id);
    const auto pi = by_poem.find(poem_id);
    if (ii == by_image.end()) throw InputError("match refers to unknown image " + image_id);
    if (pi == by_poem.end()) throw InputError("match refers to unknown poem " + poem_id);
    const ImageRecord& im = *ii->second;
    auto fit = features.find(image_id);
    if (fit == features.end()) {
      try {
        fit = features.emplace(image_id, load(im)).first;
      } catch (const InputError& e) {
        throw InputError("features for image " + image_id + ": " + e.what());
      }
    }
    const auto keywords = image_keywords(im, lex);
    std::vector<CharId> preceding;
    for (const auto& line : pi->second->lines) {
      out.push_back({image_id, im.feature_path, fit->second, keywords, preceding, line});
      preceding.insert(preceding.end(), line.begin(), line.end());
    }
  }
  return out;
}

inline FeatureLoader file_feature_loader(const Corpus& corpus) {
  return [base = corpus.base_dir](const ImageRecord& im) {
    std::filesystem::path p(im.feature_path);
    if (!p.is_absolute() && !base.empty()) p = base / p;
    if (!std::filesystem::exists(p)) throw InputError("missing feature file " + p.string());
    return read_features(p);
  };
}

/// Fraction of concepts with a realization occurring contiguously in the poem's character sequence.
inline double keyword_recall(const Poem& poem, std::span<const std::string> concepts, const ConceptLexicon& lex) {
  if (concepts.empty()) throw DomainError("keyword_recall: empty concept set");
  std::vector<CharId> flat;
  for (const auto& l : poem) flat.insert(flat.end(), l.begin(), l.end());
  std::size_t hit = 0;
  for (const auto& c : concepts) {
    const auto* alts = lex.find(c);
    if (!alts) continue;
    if (std::any_of(alts->begin(), alts->end(), [&](const auto& a) { return contains_run(flat, a); })) ++hit;
  }
  return static_cast<double>(hit) / static_cast<double>(concepts.size());
}

struct Pools {
  std::vector<TrainSample> train, valid, test;
};

/**
 * Seeded shuffle, then |valid| = ⌊n·f_valid⌋ and |test| = ⌊n·f_test⌋ with the
 * remainder going to train.
 */
inline Pools split_pool(std::vector<TrainSample> samples, double train_fraction, double valid_fraction,
                        double test_fraction, std::uint64_t seed) {
  for (double f : {train_fraction, valid_fraction, test_fraction})
    if (!(f >= 0.0 && f <= 1.0)) throw ConfigError("split fractions must lie in [0, 1]");
  if (std::abs(train_fraction + valid_fraction + test_fraction - 1.0) > 1e-9)
    throw ConfigError("split fractions must sum to 1");
  Rng rng(seed);
  rng.shuffle(std::span<TrainSample>(samples));
  const double n = static_cast<double>(samples.size());
  const auto n_valid = static_cast<std::size_t>(std::floor(n * valid_fraction + 1e-9));
  const auto n_test = static_cast<std::size_t>(std::floor(n * test_fraction + 1e-9));
  Pools p;
  auto it = std::make_move_iterator(samples.begin());
  p.valid.assign(it, it + static_cast<std::ptrdiff_t>(n_valid));
  it += static_cast<std::ptrdiff_t>(n_valid);
  p.test.assign(it, it + static_cast<std::ptrdiff_t>(n_test));
  it += static_cast<std::ptrdiff_t>(n_test);
  p.train.assign(it, std::make_move_iterator(samples.end()));
  return p;
}

// ---- sample files ---------------------------------------------------------------
//
// JSON Lines, one sample per line: {"image_id","feature_path","keywords",
// "preceding","target"}. Features are reloaded from feature_path.

inline void write_samples(std::ostream& out, std::span<const TrainSample> samples) {
  for (const auto& s : samples)
    out << nlohmann::json{{"image_id", s.image_id},
                          {"feature_path", s.feature_path},
                          {"keywords", s.keywords},
                          {"preceding", s.preceding},
                          {"target", s.target}}
               .dump()
        << '\n';
}

inline std::vector<TrainSample> read_samples(std::istream& in, const FeatureLoader& load) {
  std::vector<TrainSample> out;
  std::map<std::string, Tensor> cache;
  std::string line;
  while (std::getline(in, line)) {
    if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
    TrainSample s;
    try {
      const auto j = nlohmann::json::parse(line);
      s.image_id = j.at("image_id").get<std::string>();
      s.feature_path = j.at("feature_path").get<std::string>();
      s.keywords = j.at("keywords").get<std::vector<Keyword>>();
      s.preceding = j.at("preceding").get<std::vector<CharId>>();
      s.target = j.at("target").get<std::vector<CharId>>();
    } catch (const nlohmann::json::exception& e) {
      throw InputError(std::string("sample file: ") + e.what());
    }
    auto it = cache.find(s.feature_path);
    if (it == cache.end()) it = cache.emplace(s.feature_path, load({s.image_id, s.feature_path, {}})).first;
    s.visual = it->second;
    out.push_back(std::move(s));
  }
  return out;
}

}  // namespace mipg
