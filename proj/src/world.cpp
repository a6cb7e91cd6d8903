#include "edif/world.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <json.hpp>
#include <set>
#include <stdexcept>

#include "edif/align.hpp"
#include "edif/error.hpp"

namespace edif {

namespace {

std::vector<std::string> split_spaces(const std::string& s) { return split_words(s); }

void check_inventory(const std::vector<std::string>& items, const char* what) {
  if (items.empty()) throw std::invalid_argument(std::string("world spec: empty ") + what + " inventory");
}

nlohmann::json example_to_json(const WorldSpec& spec, const Example& ex) {
  nlohmann::json facts = nlohmann::json::array();
  for (const auto& f : ex.scene.facts) {
    facts.push_back({spec.entities[f.entity], spec.attributes[f.attribute], spec.relations[f.relation]});
  }
  nlohmann::json row;
  row["scene_id"] = ex.scene.scene_id;
  row["facts"] = std::move(facts);
  row["condition"] = ex.condition;
  row["caption"] = ex.caption;
  return row;
}

std::size_t index_of(const std::vector<std::string>& items, const std::string& word, const char* what) {
  auto it = std::find(items.begin(), items.end(), word);
  if (it == items.end()) throw FormatError(std::string("unknown ") + what + " '" + word + "' in corpus");
  return static_cast<std::size_t>(it - items.begin());
}

std::vector<Example> read_split(const WorldSpec& spec, const Vocabulary& vocab, const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot open corpus split " + path.string());
  std::vector<Example> out;
  std::string line;
  int lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    if (line.empty()) continue;
    try {
      const auto row = nlohmann::json::parse(line);
      Example ex;
      ex.scene.scene_id = row.at("scene_id").get<int>();
      for (const auto& f : row.at("facts")) {
        ex.scene.facts.push_back({index_of(spec.entities, f.at(0).get<std::string>(), "entity"),
                                  index_of(spec.attributes, f.at(1).get<std::string>(), "attribute"),
                                  index_of(spec.relations, f.at(2).get<std::string>(), "relation")});
      }
      ex.condition = row.at("condition").get<std::vector<TokenId>>();
      ex.caption = row.at("caption").get<std::vector<TokenId>>();
      for (auto id : ex.caption) {
        if (!vocab.contains(id) || vocab.is_special(id)) throw FormatError("caption id outside vocabulary");
      }
      if (ex.condition != condition_tokens(spec, ex.scene)) throw FormatError("condition does not match facts");
      out.push_back(std::move(ex));
    } catch (const nlohmann::json::exception& e) {
      throw FormatError(path.string() + ":" + std::to_string(lineno) + ": " + e.what());
    } catch (const FormatError& e) {
      throw FormatError(path.string() + ":" + std::to_string(lineno) + ": " + e.what());
    }
  }
  return out;
}

}  // namespace

WorldSpec WorldSpec::defaults() {
  WorldSpec spec;
  spec.entities = {"cat",    "dog",   "horse",    "cow",    "sheep",  "bird",   "man",      "woman",
                   "boy",    "girl",  "bear",     "zebra",  "giraffe", "elephant", "duck",   "goat",
                   "pig",    "fox",   "wolf",     "deer",   "rabbit", "mouse",  "lion",     "tiger",
                   "monkey", "owl",   "frog",     "chicken", "camel", "donkey", "panda",    "turtle",
                   "snake",  "squirrel", "kitten", "puppy", "lamb",   "bench"};
  spec.attributes = {"red",    "blue",   "green",   "yellow", "black",  "white", "brown",  "gray",
                     "orange", "pink",   "purple",  "small",  "big",    "tall",  "short",  "young",
                     "old",    "happy",  "sad",     "sleepy", "hungry", "wet",   "dry",    "fluffy",
                     "spotted", "striped", "tiny",  "huge",   "angry",  "calm",  "shy",    "brave",
                     "lazy",   "quick",  "slow",    "quiet",  "noisy",  "dirty"};
  spec.relations = {"near",     "behind",   "beside",   "under",    "above",    "with",     "chasing",
                    "watching", "facing",   "following", "leading", "feeding",  "carrying", "holding",
                    "pushing",  "pulling",  "greeting", "helping",  "ignoring", "approaching", "touching",
                    "hugging",  "biting",   "licking",  "sniffing", "guarding", "visiting", "meeting",
                    "passing",  "avoiding", "against",  "around",   "across",   "along",    "among",
                    "beneath",  "below",    "over"};
  return spec;
}

WorldSpec WorldSpec::from_config(const KeyValueConfig& cfg) {
  WorldSpec spec = defaults();
  spec.entities = cfg.get_list("entities", spec.entities);
  spec.attributes = cfg.get_list("attributes", spec.attributes);
  spec.relations = cfg.get_list("relations", spec.relations);
  if (auto p = cfg.get("prefix")) spec.prefix = split_spaces(*p);
  if (auto s = cfg.get("suffix")) spec.suffix = split_spaces(*s);
  spec.min_facts = static_cast<std::size_t>(cfg.get_int("min_facts", static_cast<long>(spec.min_facts)));
  spec.max_facts = static_cast<std::size_t>(cfg.get_int("max_facts", static_cast<long>(spec.max_facts)));
  spec.min_len = static_cast<std::size_t>(cfg.get_int("min_len", static_cast<long>(spec.min_len)));
  spec.max_len = static_cast<std::size_t>(cfg.get_int("max_len", static_cast<long>(spec.max_len)));
  spec.seed = static_cast<std::uint64_t>(cfg.get_int("seed", static_cast<long>(spec.seed)));
  spec.validate();
  return spec;
}

KeyValueConfig WorldSpec::to_config() const {
  KeyValueConfig cfg;
  cfg.set("entities", join(entities, ","));
  cfg.set("attributes", join(attributes, ","));
  cfg.set("relations", join(relations, ","));
  cfg.set("prefix", join(prefix, " "));
  cfg.set("suffix", join(suffix, " "));
  cfg.set("min_facts", std::to_string(min_facts));
  cfg.set("max_facts", std::to_string(max_facts));
  cfg.set("min_len", std::to_string(min_len));
  cfg.set("max_len", std::to_string(max_len));
  cfg.set("seed", std::to_string(seed));
  return cfg;
}

void WorldSpec::validate() const {
  check_inventory(entities, "entity");
  check_inventory(attributes, "attribute");
  check_inventory(relations, "relation");
  if (min_facts < 1 || max_facts < min_facts) throw std::invalid_argument("world spec: need 1 <= min_facts <= max_facts");
  const auto all = words();
  std::set<std::string> unique(all.begin(), all.end());
  if (unique.size() != all.size()) throw std::invalid_argument("world spec: inventories and templates must not share words");
  for (const auto& w : all) {
    if (w == kStartToken || w == kPadToken) throw std::invalid_argument("world spec: special token used as a word");
  }
  const std::size_t fixed = prefix.size() + suffix.size();
  if (fixed + 3 * min_facts < min_len || fixed + 3 * max_facts > max_len) {
    throw std::invalid_argument("world spec: grammar produces captions outside [min_len, max_len]");
  }
}

std::vector<std::string> WorldSpec::words() const {
  std::vector<std::string> out;
  out.insert(out.end(), entities.begin(), entities.end());
  out.insert(out.end(), attributes.begin(), attributes.end());
  out.insert(out.end(), relations.begin(), relations.end());
  out.insert(out.end(), prefix.begin(), prefix.end());
  out.insert(out.end(), suffix.begin(), suffix.end());
  return out;
}

Vocabulary world_vocabulary(const WorldSpec& spec) {
  const auto words = spec.words();
  return Vocabulary::build(words);
}

Scene generate_scene(const WorldSpec& spec, Rng& rng) {
  Scene scene;
  const std::size_t n = spec.min_facts + uniform_index(rng, spec.max_facts - spec.min_facts + 1);
  for (std::size_t i = 0; i < n; ++i) {
    Fact f;
    f.entity = uniform_index(rng, spec.entities.size());
    f.attribute = uniform_index(rng, spec.attributes.size());
    f.relation = uniform_index(rng, spec.relations.size());
    scene.facts.push_back(f);
  }
  return scene;
}

std::vector<std::string> render_words(const WorldSpec& spec, const Scene& scene) {
  std::vector<std::string> out(spec.prefix);
  for (const auto& f : scene.facts) {
    out.push_back(spec.attributes.at(f.attribute));
    out.push_back(spec.entities.at(f.entity));
    out.push_back(spec.relations.at(f.relation));
  }
  out.insert(out.end(), spec.suffix.begin(), spec.suffix.end());
  return out;
}

std::vector<TokenId> render_caption(const WorldSpec& spec, const Vocabulary& vocab, const Scene& scene) {
  std::vector<TokenId> ids;
  for (const auto& w : render_words(spec, scene)) ids.push_back(vocab.encode(w));
  return ids;
}

std::vector<TokenId> condition_tokens(const WorldSpec& spec, const Scene& scene) {
  const auto n_ent = static_cast<TokenId>(spec.entities.size());
  const auto n_attr = static_cast<TokenId>(spec.attributes.size());
  std::vector<TokenId> ids;
  for (const auto& f : scene.facts) {
    ids.push_back(static_cast<TokenId>(f.entity));
    ids.push_back(n_ent + static_cast<TokenId>(f.attribute));
    ids.push_back(n_ent + n_attr + static_cast<TokenId>(f.relation));
  }
  return ids;
}

std::vector<std::string> condition_vocabulary(const WorldSpec& spec) {
  std::vector<std::string> out;
  for (const auto& e : spec.entities) out.push_back("E:" + e);
  for (const auto& a : spec.attributes) out.push_back("A:" + a);
  for (const auto& r : spec.relations) out.push_back("R:" + r);
  return out;
}

const Example* Corpus::find_scene(int scene_id) const {
  for (const auto* part : {&train, &val, &test}) {
    for (const auto& ex : *part)
      if (ex.scene.scene_id == scene_id) return &ex;
  }
  return nullptr;
}

const std::vector<Example>& Corpus::split(const std::string& name) const {
  if (name == "train") return train;
  if (name == "val") return val;
  if (name == "test") return test;
  throw std::invalid_argument("unknown split '" + name + "' (train, val, test)");
}

std::uint64_t corpus_hash(const Corpus& corpus) {
  Fnv1a h;
  h.update_str(corpus.spec.to_config().to_string());
  for (const auto& t : corpus.vocab.tokens()) h.update_str(t);
  for (const auto* part : {&corpus.train, &corpus.val, &corpus.test}) {
    const std::uint64_t count = part->size();
    h.update(&count, sizeof count);
    for (const auto& ex : *part) {
      h.update(&ex.scene.scene_id, sizeof ex.scene.scene_id);
      h.update(ex.condition.data(), ex.condition.size() * sizeof(TokenId));
      h.update_str(std::string("|"));
      h.update(ex.caption.data(), ex.caption.size() * sizeof(TokenId));
      h.update_str(std::string("|"));
    }
  }
  return h.digest();
}

Corpus make_corpus(const WorldSpec& spec, std::size_t n, std::uint64_t seed) {
  spec.validate();
  if (n < 3) throw std::invalid_argument("corpus needs at least 3 scenes");
  // Upper bound on distinct scenes, saturating.
  double possible = 0;
  const double per_fact = static_cast<double>(spec.entities.size() * spec.attributes.size() * spec.relations.size());
  for (std::size_t f = spec.min_facts; f <= spec.max_facts; ++f) possible += std::pow(per_fact, static_cast<double>(f));
  if (static_cast<double>(n) > possible) {
    throw std::invalid_argument("world admits only " + std::to_string(static_cast<long long>(possible)) +
                                " distinct scenes, " + std::to_string(n) + " requested");
  }

  Corpus corpus{spec, world_vocabulary(spec), {}, {}, {}, seed, 0};
  Rng rng = make_rng(seed, 0x776f726c64ULL);
  std::set<std::vector<Fact>> seen;
  std::vector<Example> all;
  const std::size_t max_attempts = 1000 * n;
  for (std::size_t attempt = 0; all.size() < n; ++attempt) {
    if (attempt >= max_attempts) throw std::invalid_argument("could not draw enough unique scenes");
    Scene scene = generate_scene(spec, rng);
    if (!seen.insert(scene.facts).second) continue;
    scene.scene_id = static_cast<int>(all.size());
    Example ex;
    ex.condition = condition_tokens(spec, scene);
    ex.caption = render_caption(spec, corpus.vocab, scene);
    ex.scene = std::move(scene);
    all.push_back(std::move(ex));
  }

  const std::size_t n_val = std::max<std::size_t>(1, n / 10);
  const std::size_t n_test = std::max<std::size_t>(1, n / 10);
  const std::size_t n_train = n - n_val - n_test;
  auto begin = std::make_move_iterator(all.begin());
  corpus.train.assign(begin, begin + static_cast<std::ptrdiff_t>(n_train));
  corpus.val.assign(begin + static_cast<std::ptrdiff_t>(n_train), begin + static_cast<std::ptrdiff_t>(n_train + n_val));
  corpus.test.assign(begin + static_cast<std::ptrdiff_t>(n_train + n_val), std::make_move_iterator(all.end()));
  corpus.hash = corpus_hash(corpus);
  return corpus;
}

void save_corpus(const Corpus& corpus, const std::filesystem::path& dir) {
  std::error_code ec;
  std::filesystem::create_directories(dir, ec);
  if (ec) throw IoError("cannot create corpus directory " + dir.string() + ": " + ec.message());
  const std::pair<const char*, const std::vector<Example>*> parts[] = {
      {"train.jsonl", &corpus.train}, {"val.jsonl", &corpus.val}, {"test.jsonl", &corpus.test}};
  for (const auto& [name, examples] : parts) {
    std::ofstream out(dir / name);
    if (!out) throw IoError("cannot write " + (dir / name).string());
    for (const auto& ex : *examples) out << example_to_json(corpus.spec, ex).dump() << '\n';
  }
  corpus.vocab.save(dir / "vocab.txt");
  {
    std::ofstream out(dir / "cond_vocab.txt");
    if (!out) throw IoError("cannot write cond_vocab.txt");
    for (const auto& w : condition_vocabulary(corpus.spec)) out << w << '\n';
  }
  corpus.spec.to_config().save(dir / "world.cfg");
  nlohmann::json manifest;
  manifest["seed"] = corpus.seed;
  manifest["hash"] = corpus.hash;
  manifest["train"] = corpus.train.size();
  manifest["val"] = corpus.val.size();
  manifest["test"] = corpus.test.size();
  manifest["vocab_size"] = corpus.vocab.size();
  manifest["cond_vocab_size"] = corpus.spec.cond_vocab_size();
  std::ofstream out(dir / "manifest.json");
  if (!out) throw IoError("cannot write manifest.json");
  out << manifest.dump(2) << '\n';
}

Corpus load_corpus(const std::filesystem::path& dir) {
  if (!std::filesystem::is_directory(dir)) throw IoError("corpus directory " + dir.string() + " not found");
  WorldSpec spec = [&] {
    try {
      return WorldSpec::from_config(KeyValueConfig::load(dir / "world.cfg"));
    } catch (const std::invalid_argument& e) {
      throw FormatError(std::string("world.cfg: ") + e.what());
    }
  }();
  Vocabulary vocab = Vocabulary::load(dir / "vocab.txt");
  if (vocab.tokens() != world_vocabulary(spec).tokens()) throw FormatError("vocab.txt does not match world.cfg");

  Corpus corpus{spec, vocab, {}, {}, {}, 0, 0};
  corpus.train = read_split(spec, vocab, dir / "train.jsonl");
  corpus.val = read_split(spec, vocab, dir / "val.jsonl");
  corpus.test = read_split(spec, vocab, dir / "test.jsonl");
  corpus.hash = corpus_hash(corpus);

  std::ifstream in(dir / "manifest.json");
  if (!in) throw IoError("cannot open " + (dir / "manifest.json").string());
  try {
    const auto manifest = nlohmann::json::parse(in);
    corpus.seed = manifest.at("seed").get<std::uint64_t>();
    if (manifest.at("hash").get<std::uint64_t>() != corpus.hash) throw FormatError("corpus hash mismatch; files were modified");
  } catch (const nlohmann::json::exception& e) {
    throw FormatError(std::string("manifest.json: ") + e.what());
  }
  return corpus;
}

std::vector<TokenId> corrupt_to_ratio(std::span<const TokenId> x0, double r, const Vocabulary& vocab, Rng& rng) {
  if (!(r >= 0.0 && r <= 1.0)) throw std::invalid_argument("target ratio must lie in [0, 1]");
  if (x0.empty()) throw std::invalid_argument("cannot corrupt an empty caption");
  const std::size_t n = x0.size();
  const auto j = static_cast<std::size_t>(std::llround(static_cast<double>(n) * (1.0 - r)));

  std::vector<TokenId> outside;
  for (TokenId id = static_cast<TokenId>(kNumSpecials); static_cast<std::size_t>(id) < vocab.size(); ++id) {
    if (std::find(x0.begin(), x0.end(), id) == x0.end()) outside.push_back(id);
  }

  std::vector<std::size_t> positions(n);
  for (std::size_t i = 0; i < n; ++i) positions[i] = i;
  const double want = 1.0 - static_cast<double>(j) / static_cast<double>(n);
  std::vector<TokenId> best;
  double best_gap = 2.0;
  for (int attempt = 0; attempt < 100; ++attempt) {
    std::shuffle(positions.begin(), positions.end(), rng);
    std::vector<TokenId> out(x0.begin(), x0.end());
    for (std::size_t k = 0; k < j; ++k) {
      const auto pos = positions[k];
      if (!outside.empty()) {
        out[pos] = outside[uniform_index(rng, outside.size())];
      } else {
        if (vocab.num_words() < 2) throw std::invalid_argument("vocabulary too small to corrupt");
        do {
          out[pos] = vocab.sample_random_word(rng);
        } while (out[pos] == x0[pos]);
      }
    }
    const double gap = std::abs(lev_ratio(out, x0) - want);
    if (gap < best_gap) {
      best_gap = gap;
      best = std::move(out);
    }
    if (best_gap == 0.0) break;
  }
  return best;
}

}  // namespace edif
