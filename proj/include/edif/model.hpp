#pragma once

#include <cstdint>
#include <filesystem>
#include <span>
#include <string>
#include <vector>

#include "edif/diffusion.hpp"
#include "edif/edit.hpp"
#include "edif/random.hpp"
#include "edif/tensor.hpp"

namespace edif {

struct ModelConfig {
  std::size_t embed_dim = 64;
  std::size_t num_layers = 2;
  std::size_t num_heads = 4;
  std::size_t ffn_dim = 128;
  int max_T = 10;
  std::size_t vocab_size = 0;
  std::size_t cond_vocab_size = 0;
  std::size_t max_seq_len = 48;
  double dropout = 0.0;
  std::uint64_t seed = 1;

  void validate() const;
};

/// Everything recorded next to the weights; not needed for inference.
struct CheckpointMeta {
  std::uint32_t epochs = 0;
  std::uint64_t train_seed = 0;
  std::uint64_t corpus_hash = 0;
  std::uint64_t vocab_fingerprint = 0;
  int schedule_T = 10;
  double w_replace = 0.5;
  double w_delete = 0.25;
  double w_insert = 0.25;
  int target_len = 10;
  double clamp_lo = 0.5;
  double clamp_hi = 2.0;
};

struct ForwardOutput {
  tensor::Tensor op_logits;    // (l+1) x 4
  tensor::Tensor word_logits;  // (l+1) x K
};

struct LossParts {
  tensor::Tensor total;
  double edit = 0.0;
  double language = 0.0;
};

/// Sinusoidal encoding of the diffusion step, same construction as position encodings.
std::vector<double> time_embedding(int t, std::size_t dim);

/// Conditional transformer encoder with an edit head (4-way) and a language
/// head (K-way) reading the hidden states of [START] and each caption token.
///
/// Input layout: [condition tokens] [START] [caption tokens] [PAD ...].
/// Condition rows carry segment 0, the rest segment 1; the time embedding is
/// added to the [START]/caption rows only.
class DenoiserModel final : public ScriptPredictor {
 public:
  explicit DenoiserModel(const ModelConfig& cfg);
  // Parameters are shared handles; a copy would alias them.
  DenoiserModel(const DenoiserModel&) = delete;
  DenoiserModel& operator=(const DenoiserModel&) = delete;
  DenoiserModel(DenoiserModel&&) = default;
  DenoiserModel& operator=(DenoiserModel&&) = default;

  const ModelConfig& config() const { return cfg_; }

  /// `pad_to` > 0 appends PAD rows up to that caption length; they are masked
  /// out of attention and dropped from the outputs. `train_rng` enables dropout.
  ForwardOutput forward(std::span<const TokenId> condition, std::span<const TokenId> caption, int t,
                        std::size_t pad_to = 0, Rng* train_rng = nullptr) const;

  /// Greedy script; trailing INSERTs that would grow the caption past max_seq_len become KEEP.
  EditScript predict_script(std::span<const TokenId> condition, const CaptionState& c, int t) const override;
  std::size_t vocab_size() const override { return cfg_.vocab_size; }
  int max_step() const override { return cfg_.max_T; }

  std::vector<tensor::Tensor>& parameters() { return params_; }
  const std::vector<tensor::Tensor>& parameters() const { return params_; }
  const std::vector<std::string>& parameter_names() const { return names_; }
  std::size_t parameter_count() const;

  void save(const std::filesystem::path& path, const CheckpointMeta& meta) const;
  static DenoiserModel load(const std::filesystem::path& path, CheckpointMeta* meta = nullptr);

 private:
  struct Layer {
    tensor::Tensor ln1_gain, ln1_bias;
    tensor::Tensor wq, bq, wk, wv, bv, wo, bo;
    tensor::Tensor ln2_gain, ln2_bias;
    tensor::Tensor w_ff1, b_ff1, w_ff2, b_ff2;
  };

  tensor::Tensor& add_param(const std::string& name, std::size_t rows, std::size_t cols);
  void bind();

  ModelConfig cfg_;
  std::vector<tensor::Tensor> params_;
  std::vector<std::string> names_;

  tensor::Tensor word_embed_, cond_embed_, pos_embed_, seg_embed_;
  std::vector<Layer> layers_;
  tensor::Tensor final_gain_, final_bias_;
  tensor::Tensor edit_w_, edit_b_, lang_w_, lang_b_;
};

/// L = L_edit + L_language. The language term averages only over rows whose
/// ground-truth op is INSERT or REPLACE and is 0 when there are none.
LossParts denoising_loss(const ForwardOutput& out, const EditScript& gt);

/// Greedy decoding of both heads. Content words exclude the special ids and
/// are attached only to INSERT/REPLACE rows. Ties go to the lowest index.
EditScript decode_script(const ForwardOutput& out);

}  // namespace edif
