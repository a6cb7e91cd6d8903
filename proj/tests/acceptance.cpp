// Acceptance run: one PASS/FAIL line per criterion, exit status 0 only if all pass.

#include <chrono>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <functional>
#include <iomanip>
#include <iostream>
#include <set>
#include <sstream>

#include <CLI11.hpp>
#include <json.hpp>

#include "edif/align.hpp"
#include "edif/cli.hpp"
#include "edif/diffusion.hpp"
#include "edif/model.hpp"
#include "edif/world.hpp"
#include "edit_cases.hpp"
#include "oracles.hpp"

namespace fs = std::filesystem;
using namespace edif;
using Clock = std::chrono::steady_clock;

namespace {

struct Outcome {
  bool pass = false;
  std::string detail;
};

double seconds_since(Clock::time_point start) {
  return std::chrono::duration<double>(Clock::now() - start).count();
}

std::string fixed(double v, int digits = 3) {
  std::ostringstream s;
  s << std::fixed << std::setprecision(digits) << v;
  return s.str();
}

std::string slurp(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  return {std::istreambuf_iterator<char>(in), {}};
}

std::string sci(double v) {
  std::ostringstream s;
  s << std::scientific << std::setprecision(2) << v;
  return s.str();
}

nlohmann::json load_json(const fs::path& p) { return nlohmann::json::parse(slurp(p)); }

struct CliError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

std::string edif_cli(const std::vector<std::string>& args) {
  std::ostringstream out, err;
  const int code = cli::run(args, out, err);
  if (code != 0) {
    std::string cmd;
    for (const auto& a : args) cmd += a + " ";
    throw CliError("'" + cmd + "' exited with " + std::to_string(code) + ": " + err.str());
  }
  return out.str();
}

class Workspace {
 public:
  explicit Workspace(fs::path dir) : dir_(std::move(dir)) {}

  const fs::path& dir() const { return dir_; }
  fs::path corpus() const { return dir_ / "corpus"; }
  fs::path ckpt() const { return dir_ / "model.ckpt"; }

  void ensure_corpus() {
    if (fs::exists(corpus() / "manifest.json")) return;
    edif_cli({"synth", "--n", "2000", "--seed", "1", "--out", corpus().string()});
  }

  /// Trains with the CLI defaults unless a checkpoint is already present.
  /// Returns the training wall time, remembered across --reuse runs.
  double ensure_model() {
    ensure_corpus();
    const auto timing = dir_ / "train_seconds.txt";
    if (!fs::exists(ckpt())) {
      const auto start = Clock::now();
      edif_cli({"train", "--corpus", corpus().string(), "--out", ckpt().string()});
      std::ofstream(timing) << seconds_since(start) << '\n';
    }
    std::ifstream in(timing);
    double secs = -1.0;
    in >> secs;
    return secs;
  }

  nlohmann::json eval(const std::string& name, std::vector<std::string> extra) {
    ensure_model();
    const auto out = dir_ / (name + ".json");
    std::vector<std::string> args{"eval", "--ckpt", ckpt().string(), "--corpus", corpus().string(), "--out",
                                  out.string()};
    args.insert(args.end(), extra.begin(), extra.end());
    edif_cli(args);
    return load_json(out);
  }

 private:
  fs::path dir_;
};

// ---- 1

Outcome edit_algebra() {
  const auto start = Clock::now();
  const auto v = cases::case_vocab();
  const auto& table = cases::apply_cases();
  std::size_t passed = 0, throwing = 0, sentinel = 0, empty = 0, all_delete = 0;
  for (const auto& c : table) {
    passed += cases::run_case(c, v) ? 1 : 0;
    throwing += c.expected == nullptr ? 1 : 0;
    if (c.expected != nullptr) {
      const auto s = cases::parse_script(c.script, v);
      sentinel += s.slots.front().op == EditOp::Insert ? 1 : 0;
      empty += std::string(c.expected).empty() ? 1 : 0;
      bool deletes = s.slots.size() > 1;
      for (std::size_t i = 1; i < s.slots.size(); ++i) deletes = deletes && s.slots[i].op == EditOp::Delete;
      all_delete += deletes ? 1 : 0;
    }
  }
  const double secs = seconds_since(start);
  const bool ok = table.size() >= 20 && passed == table.size() && sentinel > 0 && empty > 0 && all_delete > 0 &&
                  secs < 1.0;
  return {ok, std::to_string(passed) + "/" + std::to_string(table.size()) + " cases (" + std::to_string(throwing) +
                  " must-throw, " + std::to_string(sentinel) + " sentinel insert, " + std::to_string(all_delete) +
                  " all-DELETE), " + fixed(secs, 4) + " s"};
}

// ---- 2

Outcome metric_fidelity() {
  const auto start = Clock::now();
  const oracle::AllPairs pairs(4, 5);
  const auto& strings = pairs.strings();
  std::size_t checked = 0, mismatched = 0;
  for (std::size_t i = 0; i < strings.size(); ++i) {
    for (std::size_t j = 0; j < strings.size(); ++j) {
      ++checked;
      if (weighted_ldist(strings[i], strings[j]) != pairs.distance(i, j)) ++mismatched;
    }
  }
  Rng rng = make_rng(2024);
  std::size_t ratio_bad = 0;
  for (int k = 0; k < 1000; ++k) {
    auto draw = [&] {
      oracle::Seq s(uniform_index(rng, 13));
      for (auto& x : s) x = static_cast<TokenId>(uniform_index(rng, 6));
      return s;
    };
    const auto a = draw();
    const auto b = draw();
    if (std::abs(lev_ratio(a, b) - oracle::closed_form_ratio(a, b)) > 1e-12) ++ratio_bad;
  }
  const double secs = seconds_since(start);
  return {mismatched == 0 && ratio_bad == 0 && secs < 120.0,
          std::to_string(checked) + " pairs, " + std::to_string(mismatched) + " distance mismatches; " +
              std::to_string(ratio_bad) + "/1000 ratio mismatches; " + fixed(secs, 1) + " s"};
}

// ---- 3

Outcome oracle_descent() {
  const auto start = Clock::now();
  const auto spec = WorldSpec::defaults();
  const auto vocab = world_vocabulary(spec);
  NoiseSchedule sch;
  Rng rng = make_rng(31);
  std::size_t ok = 0, within_gap_bound = 0;
  int worst_iters = 0;
  for (int k = 0; k < 1000; ++k) {
    Scene scene = generate_scene(spec, rng);
    const auto x0 = render_caption(spec, vocab, scene);
    const auto ex = sample_training_example(x0, sch, vocab, rng);
    std::vector<TokenId> cur = ex.xt.ids();
    int dist = weighted_ldist(cur, x0);
    std::size_t gap = 0;
    {
      std::size_t run = 0;
      for (const auto& step : optimal_path(cur, x0)) {
        run = step.op == EditOp::Insert ? run + 1 : 0;
        gap = std::max(gap, run);
      }
    }
    bool descending = true;
    int iters = 0;
    while (dist > 0 && iters <= static_cast<int>(x0.size())) {
      auto next = apply_script(CaptionState::from_ids(cur, Origin::Original, 1), align(cur, x0), true).ids();
      const int nd = weighted_ldist(next, x0);
      if (nd >= dist) descending = false;
      cur = std::move(next);
      dist = nd;
      ++iters;
      if (!descending) break;
    }
    worst_iters = std::max(worst_iters, iters);
    if (descending && dist == 0 && iters <= static_cast<int>(x0.size())) ++ok;
    if (iters <= static_cast<int>(std::max<std::size_t>(1, gap))) ++within_gap_bound;
  }
  const double secs = seconds_since(start);
  return {ok == 1000 && secs < 60.0,
          std::to_string(ok) + "/1000 pairs descend and converge within |x0| (worst " + std::to_string(worst_iters) +
              " iterations; " + std::to_string(within_gap_bound) + "/1000 within max(1, largest gap)); " +
              fixed(secs, 2) + " s"};
}

// ---- 4

Outcome absorption_law() {
  const auto start = Clock::now();
  const auto v = cases::case_vocab();
  NoiseSchedule sch;
  Rng rng = make_rng(41);
  const auto x0 = v.encode_text("a b c d e x y z w cat");
  const int runs = 10000;
  std::vector<double> survivors(11, 0.0);
  std::size_t terminal_original = 0;
  for (int r = 0; r < runs; ++r) {
    const auto traj = noise_trajectory(x0, sch, v, rng);
    for (std::size_t t = 0; t < traj.size(); ++t) {
      std::size_t orig = 0;
      for (const auto& tok : traj[t].tokens) orig += tok.origin == Origin::Original ? 1 : 0;
      survivors[t] += static_cast<double>(orig) / 10.0;
    }
    for (const auto& tok : traj.back().tokens) terminal_original += tok.origin == Origin::Original ? 1 : 0;
  }
  double worst = 0.0;
  for (int t = 0; t <= 10; ++t) worst = std::max(worst, std::abs(survivors[t] / runs - (1.0 - t / 10.0)));
  const double secs = seconds_since(start);
  return {worst <= 0.03 && terminal_original == 0 && secs < 60.0,
          "max |survival - (1 - t/10)| = " + fixed(worst, 4) + ", Original tokens at t=10: " +
              std::to_string(terminal_original) + "; " + fixed(secs, 2) + " s"};
}

// ---- 5

Outcome gradient_check() {
  const auto start = Clock::now();
  ModelConfig c;
  c.embed_dim = 8;
  c.num_layers = 1;
  c.num_heads = 1;
  c.ffn_dim = 16;
  c.vocab_size = 12;
  c.cond_vocab_size = 5;
  c.max_seq_len = 12;
  DenoiserModel m(c);
  const std::vector<TokenId> cond{1, 3}, cap{4, 5, 6, 7}, x0{4, 9, 6, 2, 11};
  const auto gt = align(cap, x0);
  auto f = [&] { return denoising_loss(m.forward(cond, cap, 3), gt).total; };
  const double err = tensor::grad_check(f, m.parameters());

  auto out = m.forward(cond, cap, 3);
  tensor::backward(denoising_loss(out, gt).total);
  std::size_t masked = 0, leaking = 0;
  for (std::size_t i = 0; i < gt.size(); ++i) {
    if (carries_content(gt.slots[i].op)) continue;
    ++masked;
    for (std::size_t j = 0; j < c.vocab_size; ++j) leaking += out.word_logits.grad()[i * c.vocab_size + j] != 0.0;
  }
  const double secs = seconds_since(start);
  return {err < 1e-4 && masked > 0 && leaking == 0 && secs < 300.0,
          "max relative error " + sci(err) + " over " + std::to_string(m.parameter_count()) +
              " parameters; " + std::to_string(masked) + " masked rows, " + std::to_string(leaking) +
              " nonzero language gradients there; " + fixed(secs, 2) + " s"};
}

// ---- 6

Outcome loss_contract() {
  const auto start = Clock::now();
  ModelConfig c;
  c.embed_dim = 16;
  c.num_layers = 1;
  c.num_heads = 2;
  c.ffn_dim = 16;
  c.vocab_size = 12;
  c.cond_vocab_size = 4;
  c.max_seq_len = 16;
  DenoiserModel m(c);
  const std::vector<TokenId> cond{0, 2}, cap{3, 4, 5};
  const auto keep = denoising_loss(m.forward(cond, cap, 4), EditScript::all_keep(3));

  EditScript gt = EditScript::all_keep(4);
  gt.slots[0] = {EditOp::Insert, 5};
  gt.slots[2] = {EditOp::Replace, 7};
  gt.slots[3] = {EditOp::Delete, std::nullopt};
  std::vector<double> ops(gt.size() * kNumEditOps, 0.0), words(gt.size() * c.vocab_size, 0.0);
  for (std::size_t i = 0; i < gt.size(); ++i) {
    ops[i * kNumEditOps + static_cast<std::size_t>(gt.slots[i].op)] = 100.0;
    if (gt.slots[i].content) words[i * c.vocab_size + static_cast<std::size_t>(*gt.slots[i].content)] = 100.0;
  }
  ForwardOutput perfect{tensor::Tensor::from(gt.size(), kNumEditOps, ops),
                        tensor::Tensor::from(gt.size(), c.vocab_size, words)};
  const double total = denoising_loss(perfect, gt).total.item();
  const double secs = seconds_since(start);
  return {keep.language == 0.0 && total < 1e-10 && secs < 1.0,
          "all-KEEP language loss " + fixed(keep.language, 3) + ", one-hot total loss " + sci(total) + "; " + fixed(secs, 4) + " s"};
}

// ---- 7

Outcome generation(Workspace& ws) {
  ws.ensure_corpus();
  const double train_secs = ws.ensure_model();
  const auto start = Clock::now();
  const auto j = ws.eval("random10", {"--mode", "random", "--len", "10", "--steps", "10", "--threads", "1"});
  const double eval_secs = seconds_since(start);
  const auto& agg = j.at("reports")[0].at("aggregates");
  const double em = agg.at("exact_match");
  const double ratio = agg.at("ratio");
  const double total = train_secs + eval_secs;
  const bool timed = train_secs >= 0.0;
  return {em >= 0.90 && ratio >= 0.95 && timed && total <= 20 * 60.0,
          "held-out exact match " + fixed(em) + ", mean ratio " + fixed(ratio) + "; train " + fixed(train_secs, 0) +
              " s + eval " + fixed(eval_secs, 0) + " s" + (timed ? "" : " (training time unknown)")};
}

// ---- 8

Outcome ood_editing(Workspace& ws) {
  const auto start = Clock::now();
  const auto j = ws.eval("ood", {"--mode", "ood", "--ratio", "0.1,0.2,0.3,0.4,0.5,0.6,0.7,0.8,0.9", "--steps", "10"});
  bool improves = true;
  double gain_half = -1.0;
  std::string table;
  for (const auto& rep : j.at("reports")) {
    const double r = std::stod(rep.at("config").at("ratio").get<std::string>());
    const double in = rep.at("aggregates").at("input_ratio");
    const double outr = rep.at("aggregates").at("ratio");
    improves = improves && outr > in;
    if (std::abs(r - 0.5) < 1e-9) gain_half = outr - in;
    table += " " + fixed(r, 1) + ":" + fixed(in, 2) + "->" + fixed(outr, 2);
  }
  const double secs = seconds_since(start);
  return {improves && gain_half >= 0.25 && secs < 300.0,
          "input->edited ratio" + table + "; gain at 0.5 = " + fixed(gain_half) + "; " + fixed(secs, 0) + " s"};
}

// ---- 9

Outcome step_sweep(Workspace& ws) {
  const auto j = ws.eval("steps", {"--mode", "indomain", "--steps", "1,2,3,4,5,6,7,8,9,10"});
  std::vector<double> ratios;
  for (const auto& rep : j.at("reports")) ratios.push_back(rep.at("aggregates").at("ratio"));
  bool monotone = ratios.size() == 10;
  std::string table;
  for (std::size_t i = 0; i < ratios.size(); ++i) {
    if (i > 0 && ratios[i] < ratios[i - 1] - 0.01) monotone = false;
    table += " " + fixed(ratios[i]);
  }
  return {monotone, "in-domain mean ratio for S=1..10:" + table};
}

// ---- 10

Outcome controllability(Workspace& ws) {
  const auto hard = ws.eval("control_hard", {"--mode", "control", "--pin-mode", "hard"});
  const auto soft = ws.eval("control_soft", {"--mode", "control", "--pin-mode", "soft"});
  const double hr = hard.at("reports")[0].at("aggregates").at("retention");
  const double sr = soft.at("reports")[0].at("aggregates").at("retention");
  const double hem = hard.at("reports")[0].at("aggregates").at("exact_match");
  return {hr == 1.0, "hard retention " + fixed(hr) + " (exact match " + fixed(hem) + "); soft retention " +
                         fixed(sr) + (sr >= 0.80 ? " (>= 0.80)" : " (< 0.80)") + " informational"};
}

// ---- 11

Outcome ablation(Workspace& ws) {
  ws.ensure_model();
  const auto dir = ws.dir() / "ablation";
  fs::create_directories(dir);
  if (!fs::exists(dir / "replace-heavy.ckpt")) fs::copy_file(ws.ckpt(), dir / "replace-heavy.ckpt");
  const auto csv = dir / "edit_dist.csv";
  const auto out = edif_cli({"ablate", "--which", "edit-dist", "--ckpt-dir", dir.string(), "--corpus",
                             ws.corpus().string(), "--out", csv.string()});
  std::istringstream lines(slurp(csv));
  std::string line;
  std::vector<std::string> rows;
  while (std::getline(lines, line)) rows.push_back(line);
  std::string summary;
  for (const auto& l : std::vector<std::string>{"replace-heavy", "even", "replace-only"}) {
    const auto pos = out.find(l);
    if (pos != std::string::npos) summary += out.substr(pos, out.find('\n', pos) - pos) + "; ";
  }
  const auto verdict = out.find("replace-heavy >= even >= replace-only");
  const bool emitted = rows.size() == 4 && verdict != std::string::npos;
  return {emitted, summary + (verdict == std::string::npos ? "" : out.substr(verdict, out.find('\n', verdict) - verdict))};
}

// ---- 12

bool same_tree(const fs::path& a, const fs::path& b, std::string& why) {
  std::set<std::string> names;
  for (const auto& e : fs::directory_iterator(a)) names.insert(e.path().filename().string());
  for (const auto& e : fs::directory_iterator(b)) names.insert(e.path().filename().string());
  for (const auto& n : names) {
    if (n == "synth.cfg") continue;
    if (!fs::exists(a / n) || !fs::exists(b / n) || slurp(a / n) != slurp(b / n)) {
      why = n;
      return false;
    }
  }
  return true;
}

Outcome reproducibility(Workspace& ws) {
  ws.ensure_model();
  const auto dir = ws.dir() / "rerun";
  fs::remove_all(dir);
  fs::create_directories(dir);
  std::vector<std::string> notes;
  bool ok = true;

  edif_cli({"synth", "--config", (ws.corpus() / "synth.cfg").string(), "--out", (dir / "corpus").string()});
  std::string why;
  const bool synth_same = same_tree(ws.corpus(), dir / "corpus", why);
  ok = ok && synth_same;
  notes.push_back(std::string("synth ") + (synth_same ? "identical" : "differs at " + why));

  if (!fs::exists(ws.dir() / "random10.json")) ws.eval("random10", {"--mode", "random", "--threads", "1"});
  edif_cli({"eval", "--config", (ws.dir() / "random10.json.cfg").string(), "--out", (dir / "random10.json").string(),
            "--threads", "1"});
  const bool eval_same = slurp(ws.dir() / "random10.json") == slurp(dir / "random10.json");
  ok = ok && eval_same;
  notes.push_back(std::string("eval ") + (eval_same ? "identical" : "differs"));

  const auto start = Clock::now();
  edif_cli({"train", "--config", (ws.ckpt().string() + ".cfg"), "--out", (dir / "model.ckpt").string(), "--log",
            (dir / "model.ckpt.log.csv").string()});
  const bool ckpt_same = slurp(ws.ckpt()) == slurp(dir / "model.ckpt");
  const bool log_same = slurp(ws.ckpt().string() + ".log.csv") == slurp(dir / "model.ckpt.log.csv");
  ok = ok && ckpt_same && log_same;
  notes.push_back(std::string("train checkpoint ") + (ckpt_same ? "identical" : "differs") + ", log " +
                  (log_same ? "identical" : "differs") + " (" + fixed(seconds_since(start), 0) + " s)");

  std::string detail;
  for (const auto& n : notes) detail += (detail.empty() ? "" : "; ") + n;
  return {ok, detail};
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"acceptance criteria"};
  std::string workdir;
  std::string only;
  bool reuse = false;
  app.add_option("--workdir", workdir, "scratch directory for corpora, checkpoints and reports")->required();
  app.add_option("--only", only, "comma-separated criterion numbers");
  app.add_flag("--reuse", reuse, "keep artifacts from an earlier run in the work directory");
  CLI11_PARSE(app, argc, argv);

  if (!reuse) fs::remove_all(workdir);
  fs::create_directories(workdir);
  Workspace ws(workdir);

  std::set<int> selected;
  {
    std::stringstream ss(only);
    std::string item;
    while (std::getline(ss, item, ',')) selected.insert(std::stoi(item));
  }

  const std::vector<std::pair<std::string, std::function<Outcome()>>> criteria{
      {"edit algebra", edit_algebra},
      {"metric fidelity", metric_fidelity},
      {"oracle descent and convergence", oracle_descent},
      {"absorption law", absorption_law},
      {"gradient check", gradient_check},
      {"loss contract", loss_contract},
      {"generation from random words", [&] { return generation(ws); }},
      {"ood editing", [&] { return ood_editing(ws); }},
      {"step sweep", [&] { return step_sweep(ws); }},
      {"controllability", [&] { return controllability(ws); }},
      {"edit distribution ablation (informational)", [&] { return ablation(ws); }},
      {"reproducibility", [&] { return reproducibility(ws); }},
  };

  int failures = 0;
  for (std::size_t i = 0; i < criteria.size(); ++i) {
    const int id = static_cast<int>(i) + 1;
    if (!selected.empty() && !selected.count(id)) continue;
    Outcome o;
    try {
      o = criteria[i].second();
    } catch (const std::exception& e) {
      o = {false, std::string("error: ") + e.what()};
    }
    failures += o.pass ? 0 : 1;
    std::cout << (o.pass ? "PASS" : "FAIL") << " criterion " << id << " " << criteria[i].first << ": " << o.detail
              << std::endl;
  }
  return failures == 0 ? 0 : 1;
}
