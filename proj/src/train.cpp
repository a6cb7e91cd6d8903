#include "edif/train.hpp"

#include <chrono>
#include <cmath>
#include <numeric>
#include <sstream>

#include "edif/align.hpp"
#include "edif/diffusion.hpp"
#include "edif/error.hpp"

namespace edif {

namespace {

// Resample when noising grows a caption past what the model accepts.
TrainingExample sample_fitting(const Example& ex, const NoiseSchedule& sch, const Vocabulary& vocab,
                               std::size_t max_caption, Rng& rng) {
  for (int attempt = 0;; ++attempt) {
    auto sample = sample_training_example(ex.caption, sch, vocab, rng);
    if (sample.xt.size() <= max_caption || attempt >= 100) return sample;
  }
}

}  // namespace

double learning_rate_at(const TrainHyper& hyper, long step, long total) {
  const long warmup = std::max(1L, std::lround(hyper.warmup_frac * static_cast<double>(total)));
  if (step < warmup) return hyper.lr * static_cast<double>(step + 1) / static_cast<double>(warmup);
  const long remaining = std::max(1L, total - warmup);
  return hyper.lr * std::max(0.0, static_cast<double>(total - step) / static_cast<double>(remaining));
}

double probe_loss(const DenoiserModel& model, std::span<const Example> examples, const NoiseSchedule& sch,
                  const Vocabulary& vocab, std::uint64_t seed) {
  tensor::NoGradGuard no_grad;
  Rng rng = make_rng(seed, 0x70726f6265ULL);
  double total = 0.0;
  const std::size_t max_caption = model.config().max_seq_len - 1;
  for (const auto& ex : examples) {
    const auto sample = sample_fitting(ex, sch, vocab, max_caption - ex.condition.size(), rng);
    const auto gt = align(sample.xt, ex.caption);
    const auto out = model.forward(ex.condition, sample.xt.ids(), sample.t);
    total += denoising_loss(out, gt).total.item();
  }
  return examples.empty() ? 0.0 : total / static_cast<double>(examples.size());
}

double generation_exact_match(const DenoiserModel& model, std::span<const Example> examples, const Vocabulary& vocab,
                              std::size_t random_len, int steps, std::uint64_t seed) {
  if (examples.empty()) return 0.0;
  std::size_t hits = 0;
  for (std::size_t i = 0; i < examples.size(); ++i) {
    Rng rng = make_rng(seed, i);
    auto start = make_random_sequence(random_len, vocab, steps, rng);
    auto result = denoise_loop(model, examples[i].condition, std::move(start), steps);
    hits += result.caption.ids() == examples[i].caption ? 1 : 0;
  }
  return static_cast<double>(hits) / static_cast<double>(examples.size());
}

TrainResult train(const Corpus& corpus, const NoiseSchedule& sch, ModelConfig cfg, const TrainHyper& hyper,
                  const TrainProgress& progress) {
  if (corpus.train.empty()) throw std::invalid_argument("training corpus is empty");
  if (hyper.epochs < 1 || hyper.batch < 1 || hyper.samples_per_example < 1) {
    throw std::invalid_argument("epochs, batch and samples_per_example must be positive");
  }
  tensor::retain_freed_memory();
  cfg.vocab_size = corpus.vocab.size();
  cfg.cond_vocab_size = corpus.spec.cond_vocab_size();
  cfg.max_T = sch.steps();

  TrainResult result{DenoiserModel(cfg), {}, {}};
  DenoiserModel& model = result.model;
  auto& params = model.parameters();
  tensor::AdamState adam;
  adam.lr = hyper.lr;

  Rng rng = make_rng(hyper.seed, 0x747261696eULL);
  std::vector<std::size_t> order;
  for (std::size_t i = 0; i < corpus.train.size(); ++i)
    for (std::size_t k = 0; k < hyper.samples_per_example; ++k) order.push_back(i);
  const long batches_per_epoch = static_cast<long>((order.size() + hyper.batch - 1) / hyper.batch);
  const long total_steps = batches_per_epoch * hyper.epochs;
  const std::size_t val_count = std::min(hyper.val_limit, corpus.val.size());

  long step = 0;
  for (int epoch = 1; epoch <= hyper.epochs; ++epoch) {
    const auto started = std::chrono::steady_clock::now();
    std::shuffle(order.begin(), order.end(), rng);
    double edit_sum = 0.0, lang_sum = 0.0;
    for (std::size_t b = 0; b < order.size(); b += hyper.batch) {
      const std::size_t end = std::min(order.size(), b + hyper.batch);
      const double weight = 1.0 / static_cast<double>(end - b);
      for (std::size_t k = b; k < end; ++k) {
        const Example& ex = corpus.train[order[k]];
        const auto sample =
            sample_fitting(ex, sch, corpus.vocab, cfg.max_seq_len - 1 - ex.condition.size(), rng);
        const auto gt = align(sample.xt, ex.caption);
        const auto out = model.forward(ex.condition, sample.xt.ids(), sample.t, 0, &rng);
        const auto loss = denoising_loss(out, gt);
        if (!std::isfinite(loss.edit) || !std::isfinite(loss.language)) {
          std::ostringstream msg;
          msg << "non-finite loss at epoch " << epoch << ", step " << step << ", scene " << ex.scene.scene_id
              << ", t=" << sample.t << ": edit=" << loss.edit << " language=" << loss.language;
          throw NumericError(msg.str());
        }
        edit_sum += loss.edit;
        lang_sum += loss.language;
        tensor::backward(tensor::scale(loss.total, weight));
      }
      adam.lr = learning_rate_at(hyper, step, total_steps);
      tensor::adam_step(adam, params);
      ++step;
    }

    TrainLogRow row;
    row.epoch = epoch;
    row.edit_loss = edit_sum / static_cast<double>(order.size());
    row.language_loss = lang_sum / static_cast<double>(order.size());
    row.lr = adam.lr;
    if (val_count > 0) {
      row.val_exact_match = generation_exact_match(model, std::span(corpus.val).first(val_count), corpus.vocab,
                                                   hyper.val_random_len, sch.steps(), hyper.seed);
    }
    row.seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - started).count();
    result.log.push_back(row);
    if (progress) progress(row);
  }

  auto& meta = result.meta;
  meta.epochs = static_cast<std::uint32_t>(hyper.epochs);
  meta.train_seed = hyper.seed;
  meta.corpus_hash = corpus.hash;
  meta.vocab_fingerprint = corpus.vocab.fingerprint();
  meta.schedule_T = sch.steps();
  meta.w_replace = sch.weights().replace;
  meta.w_delete = sch.weights().del;
  meta.w_insert = sch.weights().insert;
  meta.target_len = sch.target_len();
  meta.clamp_lo = sch.clamp_lo();
  meta.clamp_hi = sch.clamp_hi();
  return result;
}

}  // namespace edif
