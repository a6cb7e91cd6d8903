#pragma once

#include <cstdint>
#include <filesystem>
#include <span>
#include <string>
#include <vector>

#include "edif/config.hpp"
#include "edif/random.hpp"
#include "edif/vocab.hpp"

namespace edif {

struct Fact {
  std::size_t entity = 0;
  std::size_t attribute = 0;
  std::size_t relation = 0;

  friend auto operator<=>(const Fact&, const Fact&) = default;
};

struct Scene {
  int scene_id = 0;
  std::vector<Fact> facts;
};

/// Inventories and grammar of the synthetic world. A scene with facts
/// f1..fn renders as  prefix  a1 e1 r1  a2 e2 r2 ...  suffix.
struct WorldSpec {
  std::vector<std::string> entities;
  std::vector<std::string> attributes;
  std::vector<std::string> relations;
  std::vector<std::string> prefix{"a"};
  std::vector<std::string> suffix{"the", "camera"};
  std::size_t min_facts = 1;
  std::size_t max_facts = 3;
  std::size_t min_len = 6;
  std::size_t max_len = 12;
  std::uint64_t seed = 7;

  static WorldSpec defaults();
  static WorldSpec from_config(const KeyValueConfig& cfg);
  KeyValueConfig to_config() const;
  void validate() const;

  /// Every word a rendering can produce.
  std::vector<std::string> words() const;
  std::size_t cond_vocab_size() const { return entities.size() + attributes.size() + relations.size(); }
};

Vocabulary world_vocabulary(const WorldSpec& spec);

/// Draws facts only; the caller assigns scene_id.
Scene generate_scene(const WorldSpec& spec, Rng& rng);
std::vector<std::string> render_words(const WorldSpec& spec, const Scene& scene);
std::vector<TokenId> render_caption(const WorldSpec& spec, const Vocabulary& vocab, const Scene& scene);
/// (entity, attribute, relation) per fact, in ids of the condition vocabulary
/// where entities come first, then attributes, then relations.
std::vector<TokenId> condition_tokens(const WorldSpec& spec, const Scene& scene);
std::vector<std::string> condition_vocabulary(const WorldSpec& spec);

struct Example {
  Scene scene;
  std::vector<TokenId> condition;
  std::vector<TokenId> caption;
};

struct Corpus {
  WorldSpec spec;
  Vocabulary vocab;
  std::vector<Example> train;
  std::vector<Example> val;
  std::vector<Example> test;
  std::uint64_t seed = 0;
  std::uint64_t hash = 0;

  const Example* find_scene(int scene_id) const;
  const std::vector<Example>& split(const std::string& name) const;
};

/// n distinct scenes split 80/10/10 (val and test get at least one each).
Corpus make_corpus(const WorldSpec& spec, std::size_t n, std::uint64_t seed);
std::uint64_t corpus_hash(const Corpus& corpus);

/// Writes train/val/test.jsonl, vocab.txt, cond_vocab.txt, world.cfg and manifest.json.
void save_corpus(const Corpus& corpus, const std::filesystem::path& dir);
Corpus load_corpus(const std::filesystem::path& dir);

/// Replaces round(n * (1 - r)) distinct positions of `x0` with random words
/// so that lev_ratio(result, x0) = 1 - j/n. Replacement words are drawn from
/// outside x0 when the vocabulary allows it, which rules out accidental matches.
std::vector<TokenId> corrupt_to_ratio(std::span<const TokenId> x0, double r, const Vocabulary& vocab, Rng& rng);

}  // namespace edif
