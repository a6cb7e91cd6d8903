#include "edif/model.hpp"

#include <bit>
#include <cmath>
#include <cstring>
#include <fstream>
#include <limits>
#include <stdexcept>

#include "edif/error.hpp"

namespace edif {

using tensor::Tensor;

namespace {

constexpr char kMagic[5] = {'E', 'D', 'I', 'F', '1'};
constexpr std::uint32_t kFormatVersion = 1;

static_assert(std::endian::native == std::endian::little, "checkpoint I/O assumes a little-endian host");

class BinaryWriter {
 public:
  explicit BinaryWriter(std::ostream& out) : out_(out) {}
  void bytes(const void* p, std::size_t n) { out_.write(static_cast<const char*>(p), static_cast<std::streamsize>(n)); }
  void u32(std::uint32_t v) { bytes(&v, sizeof v); }
  void u64(std::uint64_t v) { bytes(&v, sizeof v); }
  void i32(std::int32_t v) { bytes(&v, sizeof v); }
  void f64(double v) { bytes(&v, sizeof v); }
  void str(const std::string& s) {
    u32(static_cast<std::uint32_t>(s.size()));
    bytes(s.data(), s.size());
  }

 private:
  std::ostream& out_;
};

class BinaryReader {
 public:
  explicit BinaryReader(std::istream& in) : in_(in) {}
  void bytes(void* p, std::size_t n) {
    in_.read(static_cast<char*>(p), static_cast<std::streamsize>(n));
    if (!in_) throw FormatError("checkpoint truncated");
  }
  std::uint32_t u32() { return get<std::uint32_t>(); }
  std::uint64_t u64() { return get<std::uint64_t>(); }
  std::int32_t i32() { return get<std::int32_t>(); }
  double f64() { return get<double>(); }
  std::string str() {
    const auto n = u32();
    if (n > (1u << 16)) throw FormatError("checkpoint string too long");
    std::string s(n, '\0');
    bytes(s.data(), n);
    return s;
  }

 private:
  template <class T>
  T get() {
    T v{};
    bytes(&v, sizeof v);
    return v;
  }
  std::istream& in_;
};

void fill_normal(Tensor& t, double stddev, Rng& rng) {
  std::normal_distribution<double> dist(0.0, stddev);
  for (auto& v : t.values()) v = dist(rng);
}

}  // namespace

void ModelConfig::validate() const {
  if (embed_dim == 0 || num_layers == 0 || num_heads == 0 || ffn_dim == 0) {
    throw std::invalid_argument("model dimensions must be positive");
  }
  if (embed_dim % num_heads != 0) throw std::invalid_argument("embed_dim must be divisible by num_heads");
  if (max_T < 1) throw std::invalid_argument("max_T must be at least 1");
  if (vocab_size <= kNumSpecials) throw std::invalid_argument("vocab_size must exceed the special tokens");
  if (cond_vocab_size == 0) throw std::invalid_argument("cond_vocab_size must be positive");
  if (max_seq_len < 2) throw std::invalid_argument("max_seq_len too small");
  if (!(dropout >= 0.0 && dropout < 1.0)) throw std::invalid_argument("dropout must lie in [0, 1)");
}

std::vector<double> time_embedding(int t, std::size_t dim) {
  std::vector<double> out(dim);
  for (std::size_t i = 0; i < dim; i += 2) {
    const double freq = std::pow(10000.0, -static_cast<double>(i) / static_cast<double>(dim));
    out[i] = std::sin(t * freq);
    if (i + 1 < dim) out[i + 1] = std::cos(t * freq);
  }
  return out;
}

Tensor& DenoiserModel::add_param(const std::string& name, std::size_t rows, std::size_t cols) {
  names_.push_back(name);
  params_.push_back(Tensor::zeros(rows, cols, /*requires_grad=*/true));
  return params_.back();
}

DenoiserModel::DenoiserModel(const ModelConfig& cfg) : cfg_(cfg) {
  cfg_.validate();
  const std::size_t d = cfg_.embed_dim;
  Rng rng = make_rng(cfg_.seed, 0x6d6f64656cULL);
  const double lin = 1.0 / std::sqrt(static_cast<double>(d));
  const double resid = lin / std::sqrt(2.0 * static_cast<double>(cfg_.num_layers));

  fill_normal(add_param("word_embed", cfg_.vocab_size, d), 1.0, rng);
  fill_normal(add_param("cond_embed", cfg_.cond_vocab_size, d), 1.0, rng);
  fill_normal(add_param("pos_embed", cfg_.max_seq_len, d), 0.5, rng);
  fill_normal(add_param("seg_embed", 2, d), 0.5, rng);
  for (std::size_t l = 0; l < cfg_.num_layers; ++l) {
    const std::string p = "layer" + std::to_string(l) + ".";
    for (auto& v : add_param(p + "ln1_gain", 1, d).values()) v = 1.0;
    add_param(p + "ln1_bias", 1, d);
    fill_normal(add_param(p + "wq", d, d), lin, rng);
    add_param(p + "bq", 1, d);
    // No key bias: it shifts every score in a row equally and softmax cancels it.
    fill_normal(add_param(p + "wk", d, d), lin, rng);
    fill_normal(add_param(p + "wv", d, d), lin, rng);
    add_param(p + "bv", 1, d);
    fill_normal(add_param(p + "wo", d, d), resid, rng);
    add_param(p + "bo", 1, d);
    for (auto& v : add_param(p + "ln2_gain", 1, d).values()) v = 1.0;
    add_param(p + "ln2_bias", 1, d);
    fill_normal(add_param(p + "w_ff1", d, cfg_.ffn_dim), lin, rng);
    add_param(p + "b_ff1", 1, cfg_.ffn_dim);
    fill_normal(add_param(p + "w_ff2", cfg_.ffn_dim, d),
                resid * std::sqrt(static_cast<double>(d) / static_cast<double>(cfg_.ffn_dim)), rng);
    add_param(p + "b_ff2", 1, d);
  }
  for (auto& v : add_param("final_gain", 1, d).values()) v = 1.0;
  add_param("final_bias", 1, d);
  fill_normal(add_param("edit_w", d, kNumEditOps), lin, rng);
  add_param("edit_b", 1, kNumEditOps);
  fill_normal(add_param("lang_w", d, cfg_.vocab_size), lin, rng);
  add_param("lang_b", 1, cfg_.vocab_size);
  bind();
}

void DenoiserModel::bind() {
  std::size_t k = 0;
  auto next = [&]() -> Tensor& { return params_.at(k++); };
  word_embed_ = next();
  cond_embed_ = next();
  pos_embed_ = next();
  seg_embed_ = next();
  layers_.assign(cfg_.num_layers, Layer{});
  for (auto& layer : layers_) {
    layer.ln1_gain = next();
    layer.ln1_bias = next();
    layer.wq = next();
    layer.bq = next();
    layer.wk = next();
    layer.wv = next();
    layer.bv = next();
    layer.wo = next();
    layer.bo = next();
    layer.ln2_gain = next();
    layer.ln2_bias = next();
    layer.w_ff1 = next();
    layer.b_ff1 = next();
    layer.w_ff2 = next();
    layer.b_ff2 = next();
  }
  final_gain_ = next();
  final_bias_ = next();
  edit_w_ = next();
  edit_b_ = next();
  lang_w_ = next();
  lang_b_ = next();
}

std::size_t DenoiserModel::parameter_count() const {
  std::size_t n = 0;
  for (const auto& p : params_) n += p.size();
  return n;
}

ForwardOutput DenoiserModel::forward(std::span<const TokenId> condition, std::span<const TokenId> caption, int t,
                                     std::size_t pad_to, Rng* train_rng) const {
  using namespace tensor;
  if (t < 1 || t > cfg_.max_T) {
    throw std::out_of_range("time step " + std::to_string(t) + " outside [1, " + std::to_string(cfg_.max_T) + "]");
  }
  const std::size_t cond_len = condition.size();
  const std::size_t cap_len = caption.size();
  const std::size_t padded = std::max(pad_to, cap_len);
  const std::size_t n = cond_len + 1 + padded;
  if (n > cfg_.max_seq_len) {
    throw std::invalid_argument("input of " + std::to_string(n) + " tokens exceeds max_seq_len " +
                                std::to_string(cfg_.max_seq_len));
  }
  const std::size_t d = cfg_.embed_dim;

  std::vector<int> cond_ids(condition.begin(), condition.end());
  for (auto id : cond_ids) {
    if (id < 0 || static_cast<std::size_t>(id) >= cfg_.cond_vocab_size) {
      throw std::invalid_argument("condition token " + std::to_string(id) + " outside condition vocabulary");
    }
  }
  std::vector<int> word_ids;
  word_ids.reserve(1 + padded);
  word_ids.push_back(kStartId);
  word_ids.insert(word_ids.end(), caption.begin(), caption.end());
  word_ids.resize(1 + padded, kPadId);

  std::vector<int> positions(n), segments(n);
  for (std::size_t i = 0; i < n; ++i) {
    // Caption positions restart at [START] so they do not shift with the condition length.
    positions[i] = static_cast<int>(i < cond_len ? i : i - cond_len);
    segments[i] = i < cond_len ? 0 : 1;
  }

  const auto time = time_embedding(t, d);
  std::vector<double> time_rows(n * d, 0.0);
  for (std::size_t i = cond_len; i < n; ++i) std::copy(time.begin(), time.end(), time_rows.begin() + static_cast<std::ptrdiff_t>(i * d));

  std::vector<Tensor> pieces;
  if (cond_len > 0) pieces.push_back(embedding(cond_embed_, cond_ids));
  pieces.push_back(embedding(word_embed_, word_ids));
  Tensor x = concat_rows(pieces);
  x = add(x, embedding(pos_embed_, positions));
  x = add(x, embedding(seg_embed_, segments));
  x = add(x, Tensor::from(n, d, std::move(time_rows)));

  Tensor key_mask;
  if (padded > cap_len) {
    std::vector<double> mask(n * n, 0.0);
    for (std::size_t i = 0; i < n; ++i)
      for (std::size_t j = cond_len + 1 + cap_len; j < n; ++j) mask[i * n + j] = -std::numeric_limits<double>::infinity();
    key_mask = Tensor::from(n, n, std::move(mask));
  }

  const double p_drop = train_rng ? cfg_.dropout : 0.0;
  const std::size_t heads = cfg_.num_heads;
  const std::size_t dh = d / heads;
  const double inv_sqrt = 1.0 / std::sqrt(static_cast<double>(dh));
  for (const auto& layer : layers_) {
    Tensor h = layer_norm(x, layer.ln1_gain, layer.ln1_bias);
    Tensor q = add(matmul(h, layer.wq), layer.bq);
    Tensor k = matmul(h, layer.wk);
    Tensor v = add(matmul(h, layer.wv), layer.bv);
    std::vector<Tensor> head_out;
    head_out.reserve(heads);
    for (std::size_t hd = 0; hd < heads; ++hd) {
      Tensor qh = slice_cols(q, hd * dh, dh);
      Tensor kh = slice_cols(k, hd * dh, dh);
      Tensor vh = slice_cols(v, hd * dh, dh);
      Tensor scores = scale(matmul(qh, transpose(kh)), inv_sqrt);
      if (key_mask.defined()) scores = add(scores, key_mask);
      head_out.push_back(matmul(softmax_rows(scores), vh));
    }
    Tensor attn = add(matmul(concat_cols(head_out), layer.wo), layer.bo);
    if (p_drop > 0) attn = dropout(attn, p_drop, *train_rng);
    x = add(x, attn);

    Tensor h2 = layer_norm(x, layer.ln2_gain, layer.ln2_bias);
    Tensor ff = add(matmul(relu(add(matmul(h2, layer.w_ff1), layer.b_ff1)), layer.w_ff2), layer.b_ff2);
    if (p_drop > 0) ff = dropout(ff, p_drop, *train_rng);
    x = add(x, ff);
  }
  x = layer_norm(x, final_gain_, final_bias_);

  Tensor rows = slice_rows(x, cond_len, 1 + cap_len);
  std::vector<double> sentinel_mask((1 + cap_len) * kNumEditOps, 0.0);
  sentinel_mask[static_cast<std::size_t>(EditOp::Replace)] = -std::numeric_limits<double>::infinity();
  sentinel_mask[static_cast<std::size_t>(EditOp::Delete)] = -std::numeric_limits<double>::infinity();

  ForwardOutput out;
  out.op_logits = add(add(matmul(rows, edit_w_), edit_b_), Tensor::from(1 + cap_len, kNumEditOps, std::move(sentinel_mask)));
  out.word_logits = add(matmul(rows, lang_w_), lang_b_);
  return out;
}

LossParts denoising_loss(const ForwardOutput& out, const EditScript& gt) {
  using namespace tensor;
  const std::size_t rows = out.op_logits.rows();
  if (gt.size() != rows || out.word_logits.rows() != rows) {
    throw std::invalid_argument("ground-truth script has " + std::to_string(gt.size()) + " slots for " +
                                std::to_string(rows) + " logit rows");
  }
  std::vector<int> ops(rows), words(rows, 0);
  std::vector<unsigned char> all(rows, 1), content(rows, 0);
  for (std::size_t i = 0; i < rows; ++i) {
    ops[i] = static_cast<int>(gt.slots[i].op);
    if (carries_content(gt.slots[i].op)) {
      content[i] = 1;
      words[i] = *gt.slots[i].content;
    }
  }
  Tensor edit = cross_entropy(out.op_logits, ops, all);
  Tensor language = cross_entropy(out.word_logits, words, content);
  LossParts parts;
  parts.edit = edit.item();
  parts.language = language.item();
  parts.total = add(edit, language);
  return parts;
}

EditScript decode_script(const ForwardOutput& out) {
  const std::size_t rows = out.op_logits.rows();
  const std::size_t k = out.word_logits.cols();
  EditScript script = EditScript::all_keep(rows - 1);
  for (std::size_t i = 0; i < rows; ++i) {
    std::size_t best_op = 0;
    for (std::size_t j = 1; j < kNumEditOps; ++j)
      if (out.op_logits.at(i, j) > out.op_logits.at(i, best_op)) best_op = j;
    auto& slot = script.slots[i];
    slot.op = static_cast<EditOp>(best_op);
    if (i == 0 && !(slot.op == EditOp::Keep || slot.op == EditOp::Insert)) slot.op = EditOp::Keep;
    if (carries_content(slot.op)) {
      std::size_t best_word = kNumSpecials;
      for (std::size_t j = kNumSpecials + 1; j < k; ++j)
        if (out.word_logits.at(i, j) > out.word_logits.at(i, best_word)) best_word = j;
      slot.content = static_cast<TokenId>(best_word);
    }
  }
  return script;
}

EditScript DenoiserModel::predict_script(std::span<const TokenId> condition, const CaptionState& c, int t) const {
  tensor::NoGradGuard no_grad;
  const auto ids = c.ids();
  EditScript s = decode_script(forward(condition, ids, t));
  const std::size_t capacity = cfg_.max_seq_len - std::min(cfg_.max_seq_len, condition.size() + 1);
  std::size_t out_len = 0;
  for (std::size_t i = 0; i < s.size(); ++i) {
    const EditOp op = s.slots[i].op;
    if (i > 0 && op != EditOp::Delete) ++out_len;
    if (op == EditOp::Insert) ++out_len;
  }
  for (std::size_t i = s.size(); i-- > 0 && out_len > capacity;) {
    if (s.slots[i].op != EditOp::Insert) continue;
    s.slots[i] = EditSlot{};
    --out_len;
  }
  return s;
}

void DenoiserModel::save(const std::filesystem::path& path, const CheckpointMeta& meta) const {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw IoError("cannot write checkpoint " + path.string());
  BinaryWriter w(out);
  w.bytes(kMagic, sizeof kMagic);
  w.u32(kFormatVersion);

  w.u32(static_cast<std::uint32_t>(cfg_.embed_dim));
  w.u32(static_cast<std::uint32_t>(cfg_.num_layers));
  w.u32(static_cast<std::uint32_t>(cfg_.num_heads));
  w.u32(static_cast<std::uint32_t>(cfg_.ffn_dim));
  w.i32(cfg_.max_T);
  w.u32(static_cast<std::uint32_t>(cfg_.vocab_size));
  w.u32(static_cast<std::uint32_t>(cfg_.cond_vocab_size));
  w.u32(static_cast<std::uint32_t>(cfg_.max_seq_len));
  w.f64(cfg_.dropout);
  w.u64(cfg_.seed);

  w.u32(meta.epochs);
  w.u64(meta.train_seed);
  w.u64(meta.corpus_hash);
  w.u64(meta.vocab_fingerprint);
  w.i32(meta.schedule_T);
  w.f64(meta.w_replace);
  w.f64(meta.w_delete);
  w.f64(meta.w_insert);
  w.i32(meta.target_len);
  w.f64(meta.clamp_lo);
  w.f64(meta.clamp_hi);

  w.u32(static_cast<std::uint32_t>(params_.size()));
  for (std::size_t k = 0; k < params_.size(); ++k) {
    w.str(names_[k]);
    w.u64(params_[k].size());
    w.bytes(params_[k].values().data(), params_[k].size() * sizeof(double));
  }
  if (!out) throw IoError("failed writing checkpoint " + path.string());
}

DenoiserModel DenoiserModel::load(const std::filesystem::path& path, CheckpointMeta* meta) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open checkpoint " + path.string());
  BinaryReader r(in);
  char magic[sizeof kMagic];
  r.bytes(magic, sizeof magic);
  if (std::memcmp(magic, kMagic, sizeof kMagic) != 0) throw FormatError(path.string() + " is not an EDIF1 checkpoint");
  const auto version = r.u32();
  if (version != kFormatVersion) {
    throw FormatError("checkpoint version " + std::to_string(version) + " unsupported (expected " +
                      std::to_string(kFormatVersion) + ")");
  }

  ModelConfig cfg;
  cfg.embed_dim = r.u32();
  cfg.num_layers = r.u32();
  cfg.num_heads = r.u32();
  cfg.ffn_dim = r.u32();
  cfg.max_T = r.i32();
  cfg.vocab_size = r.u32();
  cfg.cond_vocab_size = r.u32();
  cfg.max_seq_len = r.u32();
  cfg.dropout = r.f64();
  cfg.seed = r.u64();

  CheckpointMeta m;
  m.epochs = r.u32();
  m.train_seed = r.u64();
  m.corpus_hash = r.u64();
  m.vocab_fingerprint = r.u64();
  m.schedule_T = r.i32();
  m.w_replace = r.f64();
  m.w_delete = r.f64();
  m.w_insert = r.f64();
  m.target_len = r.i32();
  m.clamp_lo = r.f64();
  m.clamp_hi = r.f64();

  DenoiserModel model = [&] {
    try {
      return DenoiserModel(cfg);
    } catch (const std::invalid_argument& e) {
      throw FormatError(std::string("checkpoint config invalid: ") + e.what());
    }
  }();
  const auto count = r.u32();
  if (count != model.params_.size()) throw FormatError("checkpoint parameter count mismatch");
  for (std::size_t k = 0; k < count; ++k) {
    const auto name = r.str();
    const auto len = r.u64();
    if (name != model.names_[k] || len != model.params_[k].size()) {
      throw FormatError("checkpoint parameter '" + name + "' does not match '" + model.names_[k] + "'");
    }
    r.bytes(model.params_[k].values().data(), len * sizeof(double));
  }
  if (meta) *meta = m;
  return model;
}

}  // namespace edif
