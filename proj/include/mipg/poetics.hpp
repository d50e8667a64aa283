#pragma once

#include <algorithm>
#include <filesystem>
#include <fstream>
#include <istream>
#include <optional>
#include <span>
#include <sstream>
#include <string>
#include <unordered_map>
#include <vector>

#include "mipg/errors.hpp"
#include "mipg/layers.hpp"

namespace mipg {

using Line = std::vector<CharId>;
using Poem = std::vector<Line>;

enum class Tone { Ping, Ze, Either };

/// Character → tone and character → rhyme category.
struct PoeticLexicon {
  std::unordered_map<CharId, Tone> tones;
  std::unordered_map<CharId, int> rhymes;

  std::optional<Tone> tone(CharId c) const {
    if (auto it = tones.find(c); it != tones.end()) return it->second;
    return std::nullopt;
  }
  std::optional<int> rhyme(CharId c) const {
    if (auto it = rhymes.find(c); it != rhymes.end()) return it->second;
    return std::nullopt;
  }
};

/// Lines "char_id<TAB>tone<TAB>rhyme_category", tone in {P,Z,E}, category an integer or "-".
inline PoeticLexicon parse_poetic_lexicon(std::istream& in) {
  PoeticLexicon lex;
  std::string line;
  std::size_t lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line.empty() || line[0] == '#') continue;
    std::istringstream fields(line);
    std::string id, tone, rhyme;
    if (!std::getline(fields, id, '\t') || !std::getline(fields, tone, '\t') || !std::getline(fields, rhyme, '\t'))
      throw InputError("lexicon line " + std::to_string(lineno) + ": expected three tab-separated fields");
    CharId c = 0;
    try {
      c = static_cast<CharId>(std::stol(id));
    } catch (const std::exception&) {
      throw InputError("lexicon line " + std::to_string(lineno) + ": bad character id '" + id + "'");
    }
    if (tone == "P")
      lex.tones[c] = Tone::Ping;
    else if (tone == "Z")
      lex.tones[c] = Tone::Ze;
    else if (tone == "E")
      lex.tones[c] = Tone::Either;
    else
      throw InputError("lexicon line " + std::to_string(lineno) + ": tone must be P, Z or E");
    if (rhyme != "-") {
      try {
        const int cat = std::stoi(rhyme);
        if (cat < 0) throw std::out_of_range("negative");
        lex.rhymes[c] = cat;
      } catch (const std::exception&) {
        throw InputError("lexicon line " + std::to_string(lineno) + ": rhyme category must be >= 0 or '-'");
      }
    }
  }
  return lex;
}

inline PoeticLexicon load_poetic_lexicon(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw InputError("cannot open lexicon " + path.string());
  return parse_poetic_lexicon(in);
}

/// Tone requirement of one position.
enum class ToneSlot { Ping, Ze, Any };

/// L × G grid over {P, Z, *}.
struct TonalPattern {
  std::vector<std::vector<ToneSlot>> cells;

  std::size_t lines() const { return cells.size(); }

  static TonalPattern parse(std::istream& in) {
    TonalPattern p;
    std::string line;
    while (std::getline(in, line)) {
      if (!line.empty() && line.back() == '\r') line.pop_back();
      if (line.empty()) continue;
      std::vector<ToneSlot> row;
      for (char ch : line) {
        if (ch == 'P')
          row.push_back(ToneSlot::Ping);
        else if (ch == 'Z')
          row.push_back(ToneSlot::Ze);
        else if (ch == '*')
          row.push_back(ToneSlot::Any);
        else if (ch != ' ' && ch != '\t')
          throw InputError(std::string("tonal pattern: unexpected symbol '") + ch + "'");
      }
      p.cells.push_back(std::move(row));
    }
    if (p.cells.empty()) throw InputError("tonal pattern: no rows");
    return p;
  }

  static TonalPattern parse(const std::string& text) {
    std::istringstream in(text);
    return parse(in);
  }

  static TonalPattern wildcard(std::size_t lines, std::size_t chars) {
    return {std::vector<std::vector<ToneSlot>>(lines, std::vector<ToneSlot>(chars, ToneSlot::Any))};
  }
};

inline TonalPattern load_tonal_pattern(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw InputError("cannot open tonal pattern " + path.string());
  return TonalPattern::parse(in);
}

enum class Rule { LineCount, LineLength, PatternShape, UnknownTone, ToneMismatch, UnknownRhyme, RhymeMismatch };

inline const char* rule_name(Rule r) {
  switch (r) {
    case Rule::LineCount: return "line-count";
    case Rule::LineLength: return "line-length";
    case Rule::PatternShape: return "pattern-shape";
    case Rule::UnknownTone: return "unknown-tone";
    case Rule::ToneMismatch: return "tone-mismatch";
    case Rule::UnknownRhyme: return "unknown-rhyme";
    case Rule::RhymeMismatch: return "rhyme-mismatch";
  }
  return "?";
}

/// 1-based line and position; position 0 means the whole line (or poem, when line is 0).
struct Violation {
  std::size_t line = 0;
  std::size_t position = 0;
  Rule rule = Rule::LineCount;

  friend bool operator==(const Violation&, const Violation&) = default;
};

struct FormReport {
  bool structure_ok = true;
  bool tone_ok = true;
  bool rhyme_ok = true;
  std::vector<Violation> violations;

  bool ok() const { return structure_ok && tone_ok && rhyme_ok; }
};

inline std::vector<Violation> validate_structure(const Poem& poem, std::size_t lines, std::size_t chars) {
  std::vector<Violation> out;
  if (poem.size() != lines) out.push_back({0, 0, Rule::LineCount});
  for (std::size_t i = 0; i < poem.size(); ++i)
    if (poem[i].size() != chars) out.push_back({i + 1, 0, Rule::LineLength});
  return out;
}

inline bool tone_matches(ToneSlot slot, Tone tone) {
  return slot == ToneSlot::Any || tone == Tone::Either || (slot == ToneSlot::Ping && tone == Tone::Ping) ||
         (slot == ToneSlot::Ze && tone == Tone::Ze);
}

/// Unknown characters are violations even under a wildcard cell.
inline std::vector<Violation> validate_tones(const Poem& poem, const TonalPattern& pattern, const PoeticLexicon& lex) {
  std::vector<Violation> out;
  if (pattern.lines() != poem.size()) {
    out.push_back({0, 0, Rule::PatternShape});
    return out;
  }
  for (std::size_t i = 0; i < poem.size(); ++i) {
    if (pattern.cells[i].size() != poem[i].size()) {
      out.push_back({i + 1, 0, Rule::PatternShape});
      continue;
    }
    for (std::size_t j = 0; j < poem[i].size(); ++j) {
      const auto tone = lex.tone(poem[i][j]);
      if (!tone)
        out.push_back({i + 1, j + 1, Rule::UnknownTone});
      else if (!tone_matches(pattern.cells[i][j], *tone))
        out.push_back({i + 1, j + 1, Rule::ToneMismatch});
    }
  }
  return out;
}

/**
 * Final characters of lines 2 and 4 must share a rhyme category. Line 1 must
 * match them too unless `first_line_optional`, in which case it is exempt.
 */
inline std::vector<Violation> validate_rhyme(const Poem& poem, const PoeticLexicon& lex, bool first_line_optional) {
  std::vector<Violation> out;
  if (poem.size() < 4) {
    out.push_back({0, 0, Rule::LineCount});
    return out;
  }
  auto last_category = [&](std::size_t line) -> std::optional<int> {
    if (poem[line].empty()) return std::nullopt;
    return lex.rhyme(poem[line].back());
  };
  auto last_pos = [&](std::size_t line) { return poem[line].size(); };
  const auto second = last_category(1);
  const auto fourth = last_category(3);
  if (!second) out.push_back({2, last_pos(1), Rule::UnknownRhyme});
  if (!fourth) out.push_back({4, last_pos(3), Rule::UnknownRhyme});
  if (second && fourth && *second != *fourth) out.push_back({4, last_pos(3), Rule::RhymeMismatch});
  if (!first_line_optional) {
    const auto first = last_category(0);
    if (!first)
      out.push_back({1, last_pos(0), Rule::UnknownRhyme});
    else if (second && *first != *second)
      out.push_back({1, last_pos(0), Rule::RhymeMismatch});
  }
  return out;
}

/// Structure, tone and rhyme checks combined; tone and rhyme run only on a well-formed poem.
inline FormReport validate_form(const Poem& poem, std::size_t lines, std::size_t chars, const TonalPattern& pattern,
                                const PoeticLexicon& lex, bool first_line_optional = true) {
  FormReport r;
  auto append = [&](const std::vector<Violation>& v) { r.violations.insert(r.violations.end(), v.begin(), v.end()); };
  const auto s = validate_structure(poem, lines, chars);
  r.structure_ok = s.empty();
  append(s);
  if (!r.structure_ok) {
    r.tone_ok = r.rhyme_ok = false;
    return r;
  }
  const auto t = validate_tones(poem, pattern, lex);
  r.tone_ok = t.empty();
  append(t);
  const auto h = validate_rhyme(poem, lex, first_line_optional);
  r.rhyme_ok = h.empty();
  append(h);
  return r;
}

inline std::string format_report(const FormReport& r) {
  std::ostringstream os;
  os << "structure " << (r.structure_ok ? "ok" : "fail") << "\n";
  os << "tone " << (r.tone_ok ? "ok" : "fail") << "\n";
  os << "rhyme " << (r.rhyme_ok ? "ok" : "fail") << "\n";
  for (const auto& v : r.violations)
    os << "violation line " << v.line << " position " << v.position << " " << rule_name(v.rule) << "\n";
  return os.str();
}

inline Line reverse_line(std::span<const CharId> chars) { return {chars.rbegin(), chars.rend()}; }

}  // namespace mipg
