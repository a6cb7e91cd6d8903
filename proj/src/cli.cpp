#include "edif/cli.hpp"

#include <unistd.h>

#include <cstdio>
#include <cstdlib>
#include <deque>
#include <filesystem>
#include <fstream>
#include <functional>
#include <iostream>
#include <optional>
#include <sstream>

#include <CLI11.hpp>
#include <json.hpp>

#include "edif/align.hpp"
#include "edif/config.hpp"
#include "edif/diffusion.hpp"
#include "edif/error.hpp"
#include "edif/metrics.hpp"
#include "edif/model.hpp"
#include "edif/train.hpp"
#include "edif/world.hpp"

namespace edif::cli {

namespace fs = std::filesystem;

namespace {

struct UsageError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

// String-valued options whose final value comes from the flag, then the
// --config file, then the built-in default.
class Settings {
 public:
  explicit Settings(CLI::App* app) : app_(app) {
    app_->add_option("--config", config_path_, "key=value settings file (flags take precedence)");
  }

  void add(const std::string& flag, std::string fallback, const std::string& help, bool required = false) {
    std::string key = flag;
    std::replace(key.begin(), key.end(), '-', '_');
    auto& item = items_.emplace_back(Item{key, std::move(fallback), "", required, nullptr});
    item.opt = app_->add_option("--" + flag, item.flag_value, help);
    if (is_number_list(item.fallback)) item.opt->check(number_list());
  }

  /// Registers a positional argument; it never comes from the config file.
  void positional(const std::string& name, const std::string& help) {
    auto& item = items_.emplace_back(Item{name, "", "", true, nullptr});
    item.opt = app_->add_option(name, item.flag_value, help);
  }

  KeyValueConfig resolve() const {
    KeyValueConfig file;
    if (!config_path_.empty()) file = KeyValueConfig::load(config_path_);
    KeyValueConfig eff;
    for (const auto& item : items_) {
      std::string v = item.fallback;
      if (item.opt->count() > 0) {
        v = item.flag_value;
      } else if (auto f = file.get(item.key)) {
        v = *f;
      }
      if (item.required && v.empty()) throw UsageError("missing required setting --" + item.key);
      eff.set(item.key, v);
    }
    return eff;
  }

 private:
  static bool is_number_list(const std::string& text) {
    if (text.empty()) return false;
    std::stringstream ss(text);
    std::string part;
    while (std::getline(ss, part, ',')) {
      char* end = nullptr;
      std::strtod(part.c_str(), &end);
      if (part.empty() || end != part.c_str() + part.size()) return false;
    }
    return text.back() != ',';
  }

  static CLI::Validator number_list() {
    return CLI::Validator(
        [](std::string& v) { return is_number_list(v) ? std::string() : "expected a number, got '" + v + "'"; },
        "NUMBER");
  }

  struct Item {
    std::string key;
    std::string fallback;
    std::string flag_value;
    bool required;
    CLI::Option* opt;
  };
  CLI::App* app_;
  std::string config_path_;
  std::deque<Item> items_;
};

using Handler = std::function<void(const KeyValueConfig&, std::ostream&, std::ostream&)>;

struct Command {
  CLI::App* app;
  std::unique_ptr<Settings> settings;
  Handler handler;
};

void add_schedule_settings(Settings& s) {
  s.add("T", "10", "noising steps");
  s.add("w-replace", "0.5", "REPLACE weight");
  s.add("w-delete", "0.25", "DELETE weight");
  s.add("w-insert", "0.25", "INSERT weight");
  s.add("target-len", "10", "length the INSERT/DELETE tilt steers toward");
  s.add("clamp-lo", "0.5", "lower clamp of the length tilt");
  s.add("clamp-hi", "2.0", "upper clamp of the length tilt");
}

NoiseSchedule schedule_from(const KeyValueConfig& cfg) {
  EditWeights w{cfg.get_double("w_replace", 0.5), cfg.get_double("w_delete", 0.25),
                cfg.get_double("w_insert", 0.25)};
  return NoiseSchedule(static_cast<int>(cfg.get_int("T", 10)), w, static_cast<int>(cfg.get_int("target_len", 10)),
                       cfg.get_double("clamp_lo", 0.5), cfg.get_double("clamp_hi", 2.0));
}

NoiseSchedule schedule_from(const CheckpointMeta& m) {
  return NoiseSchedule(m.schedule_T, EditWeights{m.w_replace, m.w_delete, m.w_insert}, m.target_len, m.clamp_lo,
                       m.clamp_hi);
}

void add_train_settings(Settings& s) {
  s.add("epochs", "30", "training epochs");
  s.add("batch", "32", "captions per optimizer step");
  s.add("lr", "0.003", "peak learning rate");
  s.add("warmup", "0.05", "warmup fraction of all steps");
  s.add("samples-per-example", "24", "noised draws per caption per epoch");
  s.add("val-limit", "100", "validation scenes for the per-epoch exact match (0 = skip)");
  s.add("seed", "1", "training seed");
  s.add("embed-dim", "64", "model width");
  s.add("layers", "2", "encoder layers");
  s.add("heads", "4", "attention heads");
  s.add("ffn-dim", "128", "feed-forward width");
  s.add("max-seq-len", "48", "longest condition + [START] + caption input");
  s.add("dropout", "0", "dropout probability");
  s.add("model-seed", "1", "parameter init seed");
}

ModelConfig model_config_from(const KeyValueConfig& cfg) {
  ModelConfig m;
  m.embed_dim = static_cast<std::size_t>(cfg.get_int("embed_dim", 64));
  m.num_layers = static_cast<std::size_t>(cfg.get_int("layers", 2));
  m.num_heads = static_cast<std::size_t>(cfg.get_int("heads", 4));
  m.ffn_dim = static_cast<std::size_t>(cfg.get_int("ffn_dim", 128));
  m.max_seq_len = static_cast<std::size_t>(cfg.get_int("max_seq_len", 48));
  m.dropout = cfg.get_double("dropout", 0.0);
  m.seed = static_cast<std::uint64_t>(cfg.get_int("model_seed", 1));
  return m;
}

TrainHyper hyper_from(const KeyValueConfig& cfg) {
  TrainHyper h;
  h.epochs = static_cast<int>(cfg.get_int("epochs", 30));
  h.batch = static_cast<std::size_t>(cfg.get_int("batch", 32));
  h.lr = cfg.get_double("lr", 3e-3);
  h.warmup_frac = cfg.get_double("warmup", 0.05);
  h.samples_per_example = static_cast<std::size_t>(cfg.get_int("samples_per_example", 24));
  h.val_limit = static_cast<std::size_t>(cfg.get_int("val_limit", 100));
  h.seed = static_cast<std::uint64_t>(cfg.get_int("seed", 1));
  return h;
}

int positive_int(const KeyValueConfig& cfg, const std::string& key, long fallback) {
  const long v = cfg.get_int(key, fallback);
  if (v < 1) throw UsageError("--" + key + " must be >= 1");
  return static_cast<int>(v);
}

std::ofstream open_out(const fs::path& path) {
  if (path.has_parent_path()) fs::create_directories(path.parent_path());
  std::ofstream f(path, std::ios::binary);
  if (!f) throw IoError("cannot write " + path.string());
  return f;
}

void write_config(const KeyValueConfig& cfg, const fs::path& path) {
  auto f = open_out(path);
  f << cfg.to_string();
  if (!f) throw IoError("cannot write " + path.string());
}

struct Loaded {
  Corpus corpus;
  std::optional<DenoiserModel> model;
  CheckpointMeta meta;
};

Loaded load_artifacts(const KeyValueConfig& cfg) {
  Loaded l{load_corpus(cfg.get_string("corpus", "")), std::nullopt, {}};
  l.model.emplace(DenoiserModel::load(cfg.get_string("ckpt", ""), &l.meta));
  if (l.meta.vocab_fingerprint != l.corpus.vocab.fingerprint() || l.model->vocab_size() != l.corpus.vocab.size())
    throw FormatError("checkpoint was trained on a different vocabulary");
  if (l.model->config().cond_vocab_size != l.corpus.spec.cond_vocab_size())
    throw FormatError("checkpoint condition vocabulary does not match the corpus");
  return l;
}

const Example& scene_of(const Corpus& corpus, const KeyValueConfig& cfg) {
  const long id = cfg.get_int("scene", -1);
  const Example* ex = corpus.find_scene(static_cast<int>(id));
  if (!ex) throw UsageError("no scene with id " + std::to_string(id));
  return *ex;
}

void maybe_trace(const KeyValueConfig& cfg, const DenoiseResult& result, const Vocabulary& vocab) {
  const auto path = cfg.get_string("trace", "");
  if (path.empty()) return;
  auto f = open_out(path);
  write_trace_jsonl(f, result.trace, vocab);
  if (!f) throw IoError("cannot write " + path);
}

// ---- synth

void cmd_synth(const KeyValueConfig& cfg, std::ostream& out, std::ostream&) {
  WorldSpec spec = WorldSpec::defaults();
  const auto spec_path = cfg.get_string("spec", "");
  if (!spec_path.empty()) spec = WorldSpec::from_config(KeyValueConfig::load(spec_path));
  const auto n = cfg.get_int("n", 2000);
  if (n < 3) throw UsageError("--n must be >= 3");
  const fs::path dir = cfg.get_string("out", "");
  auto corpus = make_corpus(spec, static_cast<std::size_t>(n), static_cast<std::uint64_t>(cfg.get_int("seed", 1)));
  save_corpus(corpus, dir);
  write_config(cfg, dir / "synth.cfg");
  out << "wrote " << corpus.train.size() << "/" << corpus.val.size() << "/" << corpus.test.size()
      << " train/val/test scenes, vocabulary " << corpus.vocab.size() << ", to " << dir.string() << '\n';
}

// ---- noise-demo

const char* op_color(EditOp op) {
  switch (op) {
    case EditOp::Keep: return "\x1b[0m";
    case EditOp::Replace: return "\x1b[33m";
    case EditOp::Insert: return "\x1b[32m";
    case EditOp::Delete: return "\x1b[31m";
  }
  return "";
}

std::string render_colored(const EditScript& s, const Vocabulary& vocab, bool color) {
  std::string line;
  for (std::size_t i = 0; i < s.slots.size(); ++i) {
    const auto& slot = s.slots[i];
    if (i) line += ' ';
    if (color) line += op_color(slot.op);
    line += op_letter(slot.op);
    if (slot.content) line += "(" + vocab.decode(*slot.content) + ")";
    if (color) line += "\x1b[0m";
  }
  return line;
}

std::string render_state(const CaptionState& c, const Vocabulary& vocab, bool color) {
  std::string line;
  for (std::size_t i = 0; i < c.tokens.size(); ++i) {
    if (i) line += ' ';
    const bool absorbed = c.tokens[i].origin == Origin::RandomWord;
    if (color && absorbed) line += "\x1b[2m";
    line += vocab.decode(c.tokens[i].id);
    if (!color && absorbed) line += '*';
    if (color && absorbed) line += "\x1b[0m";
  }
  return line;
}

void cmd_noise_demo(const KeyValueConfig& cfg, std::ostream& out, std::ostream&) {
  const auto caption = cfg.get_string("caption", "");
  const auto corpus_dir = cfg.get_string("corpus", "");
  std::vector<std::string> words = corpus_dir.empty() ? WorldSpec::defaults().words()
                                                      : load_corpus(corpus_dir).spec.words();
  for (auto& w : split_words(caption)) words.push_back(w);
  const auto vocab = Vocabulary::build(words);
  const auto x0 = vocab.encode_text(caption);
  if (x0.empty()) throw UsageError("--caption is empty");
  const auto sch = schedule_from(cfg);
  const auto mode = cfg.get_string("color", "auto");
  if (mode != "auto" && mode != "always" && mode != "never") throw UsageError("--color must be auto, always or never");
  const bool color = mode == "always" || (mode == "auto" && &out == &std::cout && isatty(STDOUT_FILENO));

  Rng rng = make_rng(static_cast<std::uint64_t>(cfg.get_int("seed", 1)), 0);
  CaptionState c = CaptionState::from_ids(x0);
  c.gt_len_hint = x0.size();
  out << "legend: K keep, R replace, I insert, D delete; " << (color ? "dim" : "*") << " marks random words\n";
  out << "t=0   " << render_state(c, vocab, color) << '\n';
  for (int t = 1; t <= sch.steps(); ++t) {
    auto step = sample_noising_step(c, sch, t, vocab, rng);
    out << "      " << render_colored(step.script, vocab, color) << '\n';
    c = std::move(step.next);
    out << "t=" << t << (t < 10 ? "   " : "  ") << render_state(c, vocab, color) << '\n';
  }
}

// ---- train

void cmd_train(const KeyValueConfig& cfg, std::ostream& out, std::ostream& err) {
  const auto corpus = load_corpus(cfg.get_string("corpus", ""));
  const fs::path ckpt = cfg.get_string("out", "");
  const auto sch = schedule_from(cfg);
  auto mcfg = model_config_from(cfg);
  const auto hyper = hyper_from(cfg);
  fs::path log_path = cfg.get_string("log", "");
  if (log_path.empty()) log_path = ckpt.string() + ".log.csv";
  auto log = open_out(log_path);
  log << "epoch,edit_loss,language_loss,val_exact_match,lr\n";
  auto result = train(corpus, sch, mcfg, hyper, [&](const TrainLogRow& r) {
    log << r.epoch << ',' << format_double(r.edit_loss) << ',' << format_double(r.language_loss) << ','
        << format_double(r.val_exact_match) << ',' << format_double(r.lr) << '\n';
    err << "epoch " << r.epoch << "  edit " << r.edit_loss << "  lang " << r.language_loss << "  val_em "
        << r.val_exact_match << "  (" << r.seconds << " s)\n";
  });
  result.model.save(ckpt, result.meta);
  write_config(cfg, ckpt.string() + ".cfg");
  out << "saved " << ckpt.string() << " (" << result.model.parameter_count() << " parameters)\n";
}

// ---- edit / generate / control

void print_result(std::ostream& out, const DenoiseResult& r, const Vocabulary& vocab) {
  out << vocab.decode_text(r.caption.ids()) << '\n';
}

void cmd_edit(const KeyValueConfig& cfg, std::ostream& out, std::ostream&) {
  auto l = load_artifacts(cfg);
  const auto& ex = scene_of(l.corpus, cfg);
  const int steps = positive_int(cfg, "steps", 10);
  const auto ref = l.corpus.vocab.encode_text(cfg.get_string("ref", ""));
  auto start = CaptionState::from_ids(ref, Origin::RandomWord, steps);
  auto r = denoise_loop(*l.model, ex.condition, std::move(start), steps);
  maybe_trace(cfg, r, l.corpus.vocab);
  print_result(out, r, l.corpus.vocab);
}

void cmd_generate(const KeyValueConfig& cfg, std::ostream& out, std::ostream&) {
  auto l = load_artifacts(cfg);
  const auto& ex = scene_of(l.corpus, cfg);
  const int steps = positive_int(cfg, "steps", 10);
  const int len = positive_int(cfg, "len", 10);
  Rng rng = make_rng(static_cast<std::uint64_t>(cfg.get_int("seed", 1)), static_cast<std::uint64_t>(ex.scene.scene_id));
  auto start = make_random_sequence(static_cast<std::size_t>(len), l.corpus.vocab, steps, rng);
  auto r = denoise_loop(*l.model, ex.condition, std::move(start), steps);
  maybe_trace(cfg, r, l.corpus.vocab);
  print_result(out, r, l.corpus.vocab);
}

PinMap parse_pins(const std::string& text, std::size_t len, const Vocabulary& vocab) {
  PinMap pins;
  for (const auto& item : KeyValueConfig::parse("p=" + text).get_list("p", {})) {
    const auto eq = item.find('=');
    if (eq == std::string::npos) throw UsageError("pin '" + item + "' is not POS=WORD");
    std::size_t pos = 0;
    try {
      pos = std::stoul(item.substr(0, eq));
    } catch (const std::exception&) {
      throw UsageError("pin '" + item + "' has a bad position");
    }
    if (pos >= len) throw UsageError("pin position " + std::to_string(pos) + " is past --len");
    const auto word = vocab.find(item.substr(eq + 1));
    if (!word || vocab.is_special(*word)) throw UsageError("pin word '" + item.substr(eq + 1) + "' is not in the vocabulary");
    if (!pins.emplace(pos, *word).second) throw UsageError("position pinned twice: " + std::to_string(pos));
  }
  if (pins.empty()) throw UsageError("--pins is empty");
  return pins;
}

PinMode parse_pin_mode(const std::string& s) {
  if (s == "hard") return PinMode::Hard;
  if (s == "soft") return PinMode::Soft;
  throw UsageError("--mode must be hard or soft");
}

void cmd_control(const KeyValueConfig& cfg, std::ostream& out, std::ostream& err) {
  auto l = load_artifacts(cfg);
  const auto& ex = scene_of(l.corpus, cfg);
  const int steps = positive_int(cfg, "steps", 10);
  const auto len = static_cast<std::size_t>(positive_int(cfg, "len", 10));
  const auto pins = parse_pins(cfg.get_string("pins", ""), len, l.corpus.vocab);
  const auto mode = parse_pin_mode(cfg.get_string("mode", "hard"));
  Rng rng = make_rng(static_cast<std::uint64_t>(cfg.get_int("seed", 1)), static_cast<std::uint64_t>(ex.scene.scene_id));
  auto start = make_random_sequence(len, l.corpus.vocab, steps, rng);
  auto r = denoise_loop(*l.model, ex.condition, std::move(start), steps, pins, mode);
  maybe_trace(cfg, r, l.corpus.vocab);
  print_result(out, r, l.corpus.vocab);
  std::vector<TokenId> order;
  for (const auto& [pos, id] : pins) order.push_back(id);
  err << "pins retained in order: " << (retains_in_order(r.caption.ids(), order) ? "yes" : "no") << '\n';
}

// ---- eval

EvalOptions eval_options(const KeyValueConfig& cfg, const CheckpointMeta& meta) {
  EvalOptions o;
  o.mode = parse_eval_mode(cfg.get_string("mode", "random"));
  o.seed = static_cast<std::uint64_t>(cfg.get_int("seed", 1));
  o.random_len = static_cast<std::size_t>(positive_int(cfg, "len", 10));
  o.num_pins = static_cast<std::size_t>(positive_int(cfg, "pins", 2));
  o.pin_mode = parse_pin_mode(cfg.get_string("pin_mode", "hard"));
  o.limit = static_cast<std::size_t>(std::max(0L, cfg.get_int("limit", 0)));
  o.threads = static_cast<unsigned>(positive_int(cfg, "threads", 1));
  o.schedule = schedule_from(meta);
  return o;
}

std::vector<int> int_list(const KeyValueConfig& cfg, const std::string& key) {
  std::vector<int> v;
  for (const auto& s : cfg.get_list(key, {})) {
    try {
      v.push_back(std::stoi(s));
    } catch (const std::exception&) {
      throw UsageError("--" + key + ": '" + s + "' is not an integer");
    }
    if (v.back() < 1) throw UsageError("--" + key + " values must be >= 1");
  }
  if (v.empty()) throw UsageError("--" + key + " is empty");
  return v;
}

std::vector<double> double_list(const KeyValueConfig& cfg, const std::string& key) {
  std::vector<double> v;
  for (const auto& s : cfg.get_list(key, {})) {
    try {
      v.push_back(std::stod(s));
    } catch (const std::exception&) {
      throw UsageError("--" + key + ": '" + s + "' is not a number");
    }
  }
  if (v.empty()) throw UsageError("--" + key + " is empty");
  return v;
}

void write_reports(const fs::path& path, const std::vector<Report>& reports, const Vocabulary& vocab,
                   const std::vector<std::string>& label_names, const std::vector<std::vector<std::string>>& labels) {
  nlohmann::json j = nlohmann::json::array();
  for (const auto& r : reports) j.push_back(report_json(r, vocab));
  {
    auto f = open_out(path);
    f << nlohmann::json{{"reports", j}}.dump(1) << '\n';
    if (!f) throw IoError("cannot write " + path.string());
  }
  fs::path csv = path;
  csv.replace_extension(".csv");
  auto f = open_out(csv);
  write_aggregates_csv(f, reports, label_names, labels);
  if (!f) throw IoError("cannot write " + csv.string());
}

std::string summary_value(double v) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.4f", v);
  return buf;
}

void print_summary(std::ostream& out, const std::string& label, const Report& r) {
  out << label << "  em " << summary_value(r.aggregate("exact_match")) << "  ratio "
      << summary_value(r.aggregate("ratio")) << "  bleu4 " << summary_value(r.aggregate("bleu4"))
      << "  (input ratio " << summary_value(r.aggregate("input_ratio")) << ")";
  if (label.find("control") != std::string::npos) out << "  retention " << summary_value(r.aggregate("retention"));
  out << '\n';
}

void cmd_eval(const KeyValueConfig& cfg, std::ostream& out, std::ostream&) {
  auto l = load_artifacts(cfg);
  const auto& examples = l.corpus.split(cfg.get_string("split", "test"));
  auto opts = eval_options(cfg, l.meta);
  const auto steps = int_list(cfg, "steps");
  const auto ratios = opts.mode == EvalMode::Ood ? double_list(cfg, "ratio") : std::vector<double>{0.0};
  std::vector<Report> reports;
  std::vector<std::vector<std::string>> labels;
  for (double r : ratios) {
    for (int s : steps) {
      opts.steps = s;
      opts.ratio = r;
      reports.push_back(evaluate(*l.model, examples, l.corpus.vocab, opts));
      labels.push_back({std::to_string(s), format_double(r)});
      print_summary(out, eval_mode_name(opts.mode) + " S=" + std::to_string(s) +
                             (opts.mode == EvalMode::Ood ? " r=" + format_double(r) : ""),
                    reports.back());
    }
  }
  const fs::path path = cfg.get_string("out", "");
  write_reports(path, reports, l.corpus.vocab, {"steps", "ratio"}, labels);
  write_config(cfg, path.string() + ".cfg");
}

// ---- ablate

struct Distribution {
  const char* name;
  EditWeights weights;
};

const Distribution kDistributions[] = {
    {"replace-heavy", {0.5, 0.25, 0.25}},
    {"even", {1.0 / 3.0, 1.0 / 3.0, 1.0 / 3.0}},
    {"replace-only", {1.0, 0.0, 0.0}},
};

bool same_weights(const CheckpointMeta& m, const EditWeights& w) {
  auto close = [](double a, double b) { return std::abs(a - b) < 1e-9; };
  return close(m.w_replace, w.replace) && close(m.w_delete, w.del) && close(m.w_insert, w.insert);
}

void cmd_ablate(const KeyValueConfig& cfg, std::ostream& out, std::ostream& err) {
  const auto which = cfg.get_string("which", "");
  const fs::path dir = cfg.get_string("ckpt_dir", "");
  const auto corpus = load_corpus(cfg.get_string("corpus", ""));
  const auto& examples = corpus.split(cfg.get_string("split", "test"));
  const fs::path path = cfg.get_string("out", "");

  EvalOptions base;
  base.mode = EvalMode::RandomRef;
  base.steps = positive_int(cfg, "steps", 10);
  base.seed = static_cast<std::uint64_t>(cfg.get_int("eval_seed", 1));
  base.limit = static_cast<std::size_t>(std::max(0L, cfg.get_int("limit", 0)));
  base.threads = static_cast<unsigned>(positive_int(cfg, "threads", 1));

  std::vector<Report> reports;
  std::vector<std::vector<std::string>> labels;
  std::vector<std::string> label_names;

  auto check = [&](const DenoiserModel& m, const CheckpointMeta& meta) {
    if (meta.vocab_fingerprint != corpus.vocab.fingerprint() || m.vocab_size() != corpus.vocab.size())
      throw FormatError("checkpoint was trained on a different vocabulary");
  };

  if (which == "rw-count") {
    auto ckpt = cfg.get_string("ckpt", "");
    if (ckpt.empty()) ckpt = (dir / "replace-heavy.ckpt").string();
    CheckpointMeta meta;
    auto model = DenoiserModel::load(ckpt, &meta);
    check(model, meta);
    label_names = {"random_len"};
    for (std::size_t n = 8; n <= 12; ++n) {
      auto o = base;
      o.random_len = n;
      reports.push_back(evaluate(model, examples, corpus.vocab, o));
      labels.push_back({std::to_string(n)});
      print_summary(out, "random_len=" + std::to_string(n), reports.back());
    }
  } else if (which == "edit-dist") {
    label_names = {"distribution", "w_replace", "w_delete", "w_insert"};
    for (const auto& d : kDistributions) {
      const fs::path ckpt = dir / (std::string(d.name) + ".ckpt");
      CheckpointMeta meta;
      std::optional<DenoiserModel> model;
      if (fs::exists(ckpt)) {
        model.emplace(DenoiserModel::load(ckpt, &meta));
        if (!same_weights(meta, d.weights) || meta.corpus_hash != corpus.hash) {
          err << ckpt.string() << " was trained differently; retraining\n";
          model.reset();
        }
      }
      if (!model) {
        auto sch_cfg = cfg;
        sch_cfg.set("w_replace", format_double(d.weights.replace));
        sch_cfg.set("w_delete", format_double(d.weights.del));
        sch_cfg.set("w_insert", format_double(d.weights.insert));
        err << "training " << d.name << '\n';
        auto result = train(corpus, schedule_from(sch_cfg), model_config_from(cfg), hyper_from(cfg),
                            [&](const TrainLogRow& r) {
                              err << "  epoch " << r.epoch << "  val_em " << r.val_exact_match << '\n';
                            });
        result.model.save(ckpt, result.meta);
        meta = result.meta;
        model.emplace(std::move(result.model));
      }
      check(*model, meta);
      reports.push_back(evaluate(*model, examples, corpus.vocab, base));
      labels.push_back({d.name, format_double(d.weights.replace), format_double(d.weights.del),
                        format_double(d.weights.insert)});
      print_summary(out, d.name, reports.back());
    }
    const double a = reports[0].aggregate("exact_match");
    const double b = reports[1].aggregate("exact_match");
    const double c = reports[2].aggregate("exact_match");
    out << "replace-heavy >= even >= replace-only on exact match: " << (a >= b && b >= c ? "yes" : "no")
        << " (informational)\n";
  } else {
    throw UsageError("--which must be rw-count or edit-dist");
  }

  auto f = open_out(path);
  write_aggregates_csv(f, reports, label_names, labels);
  if (!f) throw IoError("cannot write " + path.string());
  write_config(cfg, path.string() + ".cfg");
}

// ---- ratio

void cmd_ratio(const KeyValueConfig& cfg, std::ostream& out, std::ostream&) {
  const auto a = split_words(cfg.get_string("A", ""));
  const auto b = split_words(cfg.get_string("B", ""));
  std::map<std::string, TokenId> ids;
  auto encode = [&](const std::vector<std::string>& words) {
    std::vector<TokenId> v;
    for (const auto& w : words) v.push_back(ids.emplace(w, static_cast<TokenId>(ids.size())).first->second);
    return v;
  };
  const auto ia = encode(a);
  const auto ib = encode(b);
  out << format_double(lev_ratio(ia, ib)) << '\n';
}

void add_model_io(Settings& s) {
  s.add("ckpt", "", "checkpoint file", true);
  s.add("corpus", "", "corpus directory", true);
}

}  // namespace

int run(const std::vector<std::string>& args, std::ostream& out, std::ostream& err) {
  tensor::retain_freed_memory();
  CLI::App app{"Edit-based discrete diffusion for caption editing on a synthetic world", "edif"};
  app.require_subcommand(1);
  std::vector<Command> commands;
  auto add = [&](const std::string& name, const std::string& help, Handler h) -> Settings& {
    auto* sub = app.add_subcommand(name, help);
    commands.push_back(Command{sub, std::make_unique<Settings>(sub), std::move(h)});
    return *commands.back().settings;
  };

  {
    auto& s = add("synth", "generate a synthetic corpus", cmd_synth);
    s.add("spec", "", "world spec (key=value); built-in world if omitted");
    s.add("n", "2000", "number of scenes");
    s.add("seed", "1", "corpus seed");
    s.add("out", "", "output directory", true);
  }
  {
    auto& s = add("noise-demo", "print a forward noising trajectory", cmd_noise_demo);
    s.add("caption", "", "caption text", true);
    s.add("seed", "1", "noising seed");
    s.add("corpus", "", "draw random words from this corpus vocabulary instead of the built-in world");
    s.add("color", "auto", "auto, always or never");
    add_schedule_settings(s);
  }
  {
    auto& s = add("train", "train a denoiser", cmd_train);
    s.add("corpus", "", "corpus directory", true);
    s.add("out", "", "checkpoint path", true);
    s.add("log", "", "per-epoch CSV (default <out>.log.csv)");
    add_train_settings(s);
    add_schedule_settings(s);
  }
  {
    auto& s = add("edit", "denoise a given reference caption", cmd_edit);
    add_model_io(s);
    s.add("ref", "", "reference caption", true);
    s.add("scene", "", "scene id", true);
    s.add("steps", "10", "denoising steps");
    s.add("trace", "", "write one JSON line per step here");
  }
  {
    auto& s = add("generate", "caption a scene from random words", cmd_generate);
    add_model_io(s);
    s.add("scene", "", "scene id", true);
    s.add("len", "10", "random word count");
    s.add("steps", "10", "denoising steps");
    s.add("seed", "1", "random word seed");
    s.add("trace", "", "write one JSON line per step here");
  }
  {
    auto& s = add("control", "generate with pinned control words", cmd_control);
    add_model_io(s);
    s.add("scene", "", "scene id", true);
    s.add("pins", "", "POS=WORD,...", true);
    s.add("mode", "hard", "hard or soft");
    s.add("len", "10", "random word count");
    s.add("steps", "10", "denoising steps");
    s.add("seed", "1", "random word seed");
    s.add("trace", "", "write one JSON line per step here");
  }
  {
    auto& s = add("eval", "evaluate a checkpoint", cmd_eval);
    add_model_io(s);
    s.add("mode", "random", "indomain, ood, random or control");
    s.add("steps", "10", "denoising steps (comma list for a sweep)");
    s.add("out", "", "report JSON; aggregates go to the same path with .csv", true);
    s.add("split", "test", "train, val or test");
    s.add("seed", "1", "evaluation seed");
    s.add("ratio", "0.5", "ood corruption ratio (comma list for a sweep)");
    s.add("len", "10", "random reference length");
    s.add("pins", "2", "control words per example");
    s.add("pin-mode", "hard", "hard or soft");
    s.add("limit", "0", "evaluate at most this many examples (0 = all)");
    s.add("threads", "1", "worker threads");
  }
  {
    auto& s = add("ablate", "random-word count or edit distribution ablation", cmd_ablate);
    s.add("which", "", "rw-count or edit-dist", true);
    s.add("ckpt-dir", "", "checkpoint directory", true);
    s.add("ckpt", "", "rw-count checkpoint (default <ckpt-dir>/replace-heavy.ckpt)");
    s.add("corpus", "", "corpus directory", true);
    s.add("out", "", "CSV path", true);
    s.add("split", "test", "train, val or test");
    s.add("steps", "10", "denoising steps");
    s.add("eval-seed", "1", "evaluation seed");
    s.add("limit", "0", "evaluate at most this many examples (0 = all)");
    s.add("threads", "1", "worker threads");
    add_train_settings(s);
    s.add("T", "10", "noising steps");
    s.add("target-len", "10", "length the INSERT/DELETE tilt steers toward");
    s.add("clamp-lo", "0.5", "lower clamp of the length tilt");
    s.add("clamp-hi", "2.0", "upper clamp of the length tilt");
  }
  {
    auto& s = add("ratio", "print the Levenshtein ratio of two texts", cmd_ratio);
    s.positional("A", "first text");
    s.positional("B", "second text");
  }

  std::vector<std::string> reversed(args.rbegin(), args.rend());
  try {
    app.parse(reversed);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e, out, err);
    return code == 0 ? kOk : kUsage;
  }

  for (const auto& c : commands) {
    if (!c.app->parsed()) continue;
    try {
      const auto cfg = c.settings->resolve();
      err << "# " << c.app->get_name() << " effective config\n" << cfg.to_string();
      c.handler(cfg, out, err);
      return kOk;
    } catch (const UsageError& e) {
      err << "usage error: " << e.what() << '\n';
      return kUsage;
    } catch (const IoError& e) {
      err << "io error: " << e.what() << '\n';
      return kIo;
    } catch (const FormatError& e) {
      err << "format error: " << e.what() << '\n';
      return kFormat;
    } catch (const NumericError& e) {
      err << "numeric error: " << e.what() << '\n';
      return kNumeric;
    } catch (const fs::filesystem_error& e) {
      err << "io error: " << e.what() << '\n';
      return kIo;
    } catch (const std::invalid_argument& e) {
      err << "usage error: " << e.what() << '\n';
      return kUsage;
    } catch (const std::out_of_range& e) {
      err << "usage error: " << e.what() << '\n';
      return kUsage;
    } catch (const std::exception& e) {
      err << "error: " << e.what() << '\n';
      return 1;
    }
  }
  return kUsage;
}

}  // namespace edif::cli
