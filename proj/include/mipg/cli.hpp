#pragma once

#include <filesystem>
#include <fstream>
#include <iomanip>
#include <iostream>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include <CLI11.hpp>

#include "mipg/checkpoint.hpp"
#include "mipg/datapipe.hpp"
#include "mipg/poetics.hpp"
#include "mipg/synthetic.hpp"
#include "mipg/training.hpp"
#include "mipg/verify.hpp"

namespace mipg::cli {

enum ExitCode : int { kOk = 0, kUsage = 1, kInput = 2, kNumerical = 3 };

/// Keyword file: one keyword per line, character ids joined by '+' or whitespace.
inline std::vector<Keyword> load_keywords(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw InputError("cannot open keyword file " + path.string());
  std::vector<Keyword> out;
  std::string line;
  while (std::getline(in, line)) {
    for (char& ch : line)
      if (ch == '+') ch = ' ';
    std::istringstream ids(line);
    Keyword kw;
    long v = 0;
    while (ids >> v) kw.push_back(static_cast<CharId>(v));
    if (!ids.eof()) throw InputError("keyword file " + path.string() + ": non-numeric id");
    if (!kw.empty()) out.push_back(std::move(kw));
  }
  return out;
}

/// Poem file: one line of whitespace-separated character ids per poem line.
inline Poem load_poem(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw InputError("cannot open poem file " + path.string());
  Poem poem;
  std::string text;
  while (std::getline(in, text)) {
    std::istringstream ids(text);
    Line line;
    long v = 0;
    while (ids >> v) line.push_back(static_cast<CharId>(v));
    if (!ids.eof()) throw InputError("poem file " + path.string() + ": non-numeric id");
    if (!line.empty()) poem.push_back(std::move(line));
  }
  return poem;
}

/// Charset file: glyph on line k is character id k.
inline std::vector<std::string> load_charset(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw InputError("cannot open charset " + path.string());
  std::vector<std::string> glyphs;
  std::string g;
  while (std::getline(in, g)) glyphs.push_back(g);
  return glyphs;
}

inline void print_poem(std::ostream& out, const Poem& poem, bool machine, const std::vector<std::string>& charset) {
  for (const auto& line : poem) {
    for (std::size_t i = 0; i < line.size(); ++i) {
      const auto id = static_cast<std::size_t>(line[i]);
      if (!machine && id < charset.size())
        out << charset[id];
      else
        out << (i ? " " : "") << line[i];
    }
    out << '\n';
  }
}

struct Options {
  std::string corpus, concepts, features, keywords, lexicon, pattern, checkpoint, out, log, poem, charset;
  std::uint64_t seed = 0;
  std::optional<double> lambda;
  std::size_t hidden = 512, vocab = 6000, batch = 128, epochs = 10;
  double valid_fraction = 0.1;
  bool validate = false, machine = false, strict_first_line = false;
  bool no_keywords = false, no_visual = false, corrupt_gradient = false;
  std::size_t synth_images = 50;
};

inline int cmd_train(const Options& o, std::ostream& out) {
  const auto corpus = load_corpus(o.corpus);
  const auto lex = load_concept_lexicon(o.concepts);
  const auto matches = match_pairs(corpus.images, corpus.poems, lex);
  auto samples = build_samples(matches, corpus.images, corpus.poems, lex, file_feature_loader(corpus));
  if (samples.empty()) throw InputError("corpus yields no matched samples");

  MipgConfig cfg;
  cfg.vocab_size = o.vocab;
  cfg.hidden_dim = cfg.memory_dim = o.hidden;
  cfg.lambda = o.lambda.value_or(cfg.lambda);
  cfg.visual_count = samples.front().visual.shape()[0];
  cfg.visual_dim = samples.front().visual.shape()[1];
  cfg.chars_per_line = samples.front().target.size();
  cfg.lines_per_poem = corpus.poems.front().lines.size();
  cfg.validate();

  auto pools = split_pool(std::move(samples), 1.0 - o.valid_fraction, o.valid_fraction, 0.0, o.seed);
  TrainConfig tc;
  tc.batch_size = o.batch;
  tc.max_epochs = o.epochs;
  tc.seed = o.seed;
  tc.threads = default_threads();
  Rng rng(o.seed);
  MipgModel model = init_params(cfg, rng);

  std::ostringstream log;
  const auto result = train(model, pools.train, pools.valid, tc, &log);
  out << log.str();
  if (!o.log.empty()) {
    std::ofstream log_file(o.log);
    if (!(log_file << log.str())) throw InputError("cannot write log " + o.log);
  }
  save_checkpoint(result.best, o.out);
  out << "best_epoch " << result.best_epoch << " valid " << result.best_valid_loss << '\n';
  return kOk;
}

inline int cmd_generate(const Options& o, std::ostream& out) {
  MipgModel model = load_checkpoint(o.checkpoint);
  if (!std::filesystem::exists(o.features)) throw InputError("missing feature file " + o.features);
  const Tensor visual = read_features(o.features);
  if (visual.shape() != Shape{model.config.visual_count, model.config.visual_dim})
    throw InputError("feature grid " + shape_string(visual.shape()) + " does not match checkpoint " +
                     shape_string({model.config.visual_count, model.config.visual_dim}));
  const auto keywords = o.keywords.empty() ? std::vector<Keyword>{} : load_keywords(o.keywords);
  if (o.lambda) model.config.lambda = *o.lambda;
  model.config.validate();
  const auto poem = generate_poem(model, visual, keywords, {o.no_keywords, o.no_visual});
  const auto charset = o.charset.empty() ? std::vector<std::string>{} : load_charset(o.charset);
  print_poem(out, poem, o.machine, charset);
  if (o.validate) {
    const auto lex = load_poetic_lexicon(o.lexicon);
    const auto pattern = o.pattern.empty()
                             ? TonalPattern::wildcard(model.config.lines_per_poem, model.config.chars_per_line)
                             : load_tonal_pattern(o.pattern);
    out << format_report(validate_form(poem, model.config.lines_per_poem, model.config.chars_per_line, pattern, lex,
                                       !o.strict_first_line));
  }
  return kOk;
}

inline int cmd_eval(const Options& o, std::ostream& out) {
  MipgModel model = load_checkpoint(o.checkpoint);
  if (o.lambda) model.config.lambda = *o.lambda;
  model.config.validate();
  const auto corpus = load_corpus(o.corpus);
  const auto lex = load_concept_lexicon(o.concepts);
  std::size_t n = 0;
  double total = 0.0;
  const auto load = file_feature_loader(corpus);
  for (const auto& im : corpus.images) {
    if (im.concepts.empty()) continue;
    const Tensor visual = load(im);
    const auto keywords = image_keywords(im, lex);
    const auto poem = generate_poem(model, visual, keywords, {o.no_keywords, o.no_visual});
    const double r = keyword_recall(poem, im.concepts, lex);
    out << "sample " << im.image_id << " recall " << r << '\n';
    total += r;
    ++n;
  }
  if (n == 0) throw InputError("evaluation pool is empty");
  out << "mean_recall " << total / static_cast<double>(n) << '\n';
  return kOk;
}

inline int cmd_check(const Options& o, std::ostream& out) {
  const MipgConfig cfg = toy_config();
  Rng rng(o.seed);
  const MipgModel model = init_params(cfg, rng);
  std::vector<TrainSample> batch{random_sample(cfg, rng, 2, 0), random_sample(cfg, rng, 2, 1)};
  std::vector<CheckOutcome> checks;
  const auto grad = check_gradients(model, batch, 1e-5, o.corrupt_gradient);
  out << "max_relative_gradient_error " << std::setprecision(3) << std::scientific << grad.max_relative_error
      << " (" << grad.worst_parameter << ", " << grad.checked << " entries)" << std::defaultfloat << '\n';
  checks.push_back({"gradient check", grad.max_relative_error < 1e-5, grad.worst_parameter});
  checks.push_back(check_distributions(model, rng, 1000));
  checks.push_back(check_ablations(model, rng, 20));
  bool all = true;
  for (const auto& c : checks) {
    out << (c.passed ? "PASS " : "FAIL ") << c.name << ": " << c.detail << '\n';
    all = all && c.passed;
  }
  return all ? kOk : kNumerical;
}

inline int cmd_validate(const Options& o, std::ostream& out) {
  const auto poem = load_poem(o.poem);
  const auto lex = load_poetic_lexicon(o.lexicon);
  const std::size_t lines = 4, chars = poem.empty() ? 7 : poem.front().size();
  const auto pattern = o.pattern.empty() ? TonalPattern::wildcard(lines, chars) : load_tonal_pattern(o.pattern);
  const auto chars_expected = pattern.cells.empty() ? chars : pattern.cells.front().size();
  const auto report = validate_form(poem, pattern.lines(), chars_expected, pattern, lex, !o.strict_first_line);
  out << format_report(report);
  return report.ok() ? kOk : kInput;
}

inline int cmd_synth(const Options& o, std::ostream& out) {
  SyntheticSpec spec;
  spec.images = o.synth_images;
  spec.seed = o.seed;
  const auto sc = make_synthetic_corpus(spec);
  write_synthetic_corpus(sc, o.out);
  out << "wrote " << sc.corpus.images.size() << " images and " << sc.corpus.poems.size() << " poems to " << o.out
      << '\n';
  return kOk;
}

/// Entry point shared by the executable and the tests. Returns the process exit code.
inline int run(std::vector<std::string> args, std::ostream& out, std::ostream& err) {
  CLI::App app{"Image-to-quatrain generator with a keyword topic memory"};
  app.name("mipg");
  app.require_subcommand(1);
  Options o;

  auto add_model_flags = [&](CLI::App* s) {
    s->add_option("--seed", o.seed, "random seed");
    s->add_option("--lambda", o.lambda, "topic-bias weight")->check(CLI::Range(0.0, 1.0));
  };

  auto* train = app.add_subcommand("train", "train a model on a corpus");
  train->add_option("--corpus", o.corpus, "corpus JSON Lines file")->required();
  train->add_option("--concepts", o.concepts, "concept lexicon")->required();
  train->add_option("--out", o.out, "checkpoint to write")->required();
  train->add_option("--log", o.log, "loss-curve log file");
  train->add_option("--hidden", o.hidden, "hidden / memory width")->check(CLI::PositiveNumber);
  train->add_option("--vocab", o.vocab, "generic vocabulary size")->check(CLI::Range(3, 1 << 20));
  train->add_option("--batch", o.batch, "batch size")->check(CLI::PositiveNumber);
  train->add_option("--epochs", o.epochs, "epochs")->check(CLI::PositiveNumber);
  train->add_option("--valid-fraction", o.valid_fraction, "validation share")->check(CLI::Range(0.0, 1.0));
  add_model_flags(train);

  auto* gen = app.add_subcommand("generate", "generate a poem from features and keywords");
  gen->add_option("--checkpoint", o.checkpoint, "trained checkpoint")->required();
  gen->add_option("--features", o.features, "feature grid file")->required();
  gen->add_option("--keywords", o.keywords, "keyword file");
  gen->add_option("--lexicon", o.lexicon, "tone/rhyme lexicon (with --validate)");
  gen->add_option("--pattern", o.pattern, "tonal pattern (with --validate)");
  gen->add_option("--charset", o.charset, "glyph per character id");
  gen->add_flag("--validate", o.validate, "append a form report");
  gen->add_flag("--machine", o.machine, "print character ids");
  gen->add_flag("--strict-first-line", o.strict_first_line, "require line 1 to rhyme");
  gen->add_flag("--no-keywords", o.no_keywords, "zero the keyword memories");
  gen->add_flag("--no-visual", o.no_visual, "zero the visual features");
  add_model_flags(gen);

  auto* eval = app.add_subcommand("eval", "keyword recall over a corpus's images");
  eval->add_option("--checkpoint", o.checkpoint, "trained checkpoint")->required();
  eval->add_option("--corpus", o.corpus, "evaluation corpus")->required();
  eval->add_option("--concepts", o.concepts, "concept lexicon")->required();
  eval->add_flag("--no-keywords", o.no_keywords, "zero the keyword memories");
  eval->add_flag("--no-visual", o.no_visual, "zero the visual features");
  add_model_flags(eval);

  auto* check = app.add_subcommand("check", "gradient and invariant self-check at toy dimensions");
  check->add_option("--seed", o.seed, "random seed");
  check->add_flag("--corrupt-gradient", o.corrupt_gradient, "negative control")->group("");

  auto* validate = app.add_subcommand("validate", "check a poem's structure, tones and rhyme");
  validate->add_option("--poem", o.poem, "poem file of character ids")->required();
  validate->add_option("--lexicon", o.lexicon, "tone/rhyme lexicon")->required();
  validate->add_option("--pattern", o.pattern, "tonal pattern");
  validate->add_flag("--strict-first-line", o.strict_first_line, "require line 1 to rhyme");

  auto* synth = app.add_subcommand("synth", "write a planted synthetic corpus");
  synth->add_option("--out", o.out, "output directory")->required();
  synth->add_option("--images", o.synth_images, "image count")->check(CLI::PositiveNumber);
  synth->add_option("--seed", o.seed, "random seed");

  std::reverse(args.begin(), args.end());
  try {
    app.parse(args);
  } catch (const CLI::ParseError& e) {
    return app.exit(e, out, err) == 0 ? kOk : kUsage;
  }

  try {
    if (*train) return cmd_train(o, out);
    if (*gen) return cmd_generate(o, out);
    if (*eval) return cmd_eval(o, out);
    if (*check) return cmd_check(o, out);
    if (*validate) return cmd_validate(o, out);
    if (*synth) return cmd_synth(o, out);
  } catch (const ConfigError& e) {
    err << "error: " << e.what() << '\n';
    return kUsage;
  } catch (const NumericalError& e) {
    err << "numerical failure: " << e.what() << '\n';
    return kNumerical;
  } catch (const std::exception& e) {
    err << "error: " << e.what() << '\n';
    return kInput;
  }
  return kUsage;
}

}  // namespace mipg::cli
