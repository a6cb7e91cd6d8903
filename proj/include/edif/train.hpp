#pragma once

#include <cstdint>
#include <functional>
#include <span>
#include <vector>

#include "edif/edit.hpp"
#include "edif/model.hpp"
#include "edif/world.hpp"

namespace edif {

struct TrainHyper {
  double lr = 3e-3;
  int epochs = 30;
  std::size_t batch = 32;
  double warmup_frac = 0.05;
  std::uint64_t seed = 1;
  /// Fresh noising draws per training caption per epoch.
  std::size_t samples_per_example = 24;
  /// Held-out exact match after each epoch uses at most this many val scenes (0 = skip).
  std::size_t val_limit = 100;
  std::size_t val_random_len = 10;
};

struct TrainLogRow {
  int epoch = 0;
  double edit_loss = 0.0;
  double language_loss = 0.0;
  double val_exact_match = 0.0;
  double lr = 0.0;
  double seconds = 0.0;
};

struct TrainResult {
  DenoiserModel model;
  CheckpointMeta meta;
  std::vector<TrainLogRow> log;
};

using TrainProgress = std::function<void(const TrainLogRow&)>;

/// Linear warmup then linear decay to zero over `total` optimizer steps.
double learning_rate_at(const TrainHyper& hyper, long step, long total);

/// For each batch: sample (x_t, t) per caption, supervise with align(x_t, x_0),
/// and take one Adam step on the mean loss. Single-threaded and deterministic
/// for a fixed seed. `cfg.vocab_size`, `cond_vocab_size` and `max_T` are taken
/// from the corpus and schedule.
TrainResult train(const Corpus& corpus, const NoiseSchedule& sch, ModelConfig cfg, const TrainHyper& hyper,
                  const TrainProgress& progress = {});

/// Mean denoising loss over a fixed set of noised samples drawn with `seed`.
double probe_loss(const DenoiserModel& model, std::span<const Example> examples, const NoiseSchedule& sch,
                  const Vocabulary& vocab, std::uint64_t seed);

/// Fraction of `examples` regenerated exactly from `random_len` random words
/// in `steps` denoising steps.
double generation_exact_match(const DenoiserModel& model, std::span<const Example> examples, const Vocabulary& vocab,
                              std::size_t random_len, int steps, std::uint64_t seed);

}  // namespace edif
