// Command-line front end. Every analysis runs through the shared library's C
// API; this file only turns flags into the config JSON the library consumes
// and prints what comes back.

#include <cstdint>
#include <cstdio>
#include <cstdlib>
#include <fstream>
#include <functional>
#include <sstream>
#include <string>
#include <utility>
#include <vector>

#include <CLI11.hpp>
#include <json.hpp>
#include <plyscope.h>

using nlohmann::json;

namespace {

// Out-parameter strings from the C API, released on scope exit.
struct OwnedString {
  char* ptr = nullptr;
  ~OwnedString() { ply_free(ptr); }
  std::string str() const { return ptr ? ptr : ""; }
};

[[noreturn]] void die(const std::string& msg, int code = 2) {
  std::fprintf(stderr, "plyscope: %s\n", msg.c_str());
  std::exit(code);
}

std::string last_error() {
  const char* msg = ply_last_error();
  return msg && *msg ? msg : "unknown error";
}

// Collects config keys from flags. Only flags the user actually passed make
// it into the JSON, so file-provided values and library defaults survive.
class ConfigFlags {
 public:
  explicit ConfigFlags(CLI::App* cmd) : cmd_(cmd) {}

  template <typename T>
  void option(const std::string& flag, const char* key, T& var, const std::string& desc) {
    auto* opt = cmd_->add_option(flag, var, desc);
    appliers_.emplace_back(opt, [&var, key](json& j) { j[key] = var; });
  }

  void flag(const std::string& flag_name, const char* key, bool& var, const std::string& desc,
            bool value_when_set = true) {
    auto* opt = cmd_->add_flag(flag_name, var, desc);
    appliers_.emplace_back(opt, [&var, key, value_when_set](json& j) {
      j[key] = var ? value_when_set : !value_when_set;
    });
  }

  void apply(json& config) const {
    for (const auto& [opt, fn] : appliers_)
      if (opt->count() > 0) fn(config);
  }

 private:
  CLI::App* cmd_;
  std::vector<std::pair<CLI::Option*, std::function<void(json&)>>> appliers_;
};

json read_config_file(const std::string& path) {
  std::ifstream in(path);
  if (!in) die("cannot open config file '" + path + "'");
  std::stringstream buf;
  buf << in.rdbuf();
  json j = json::parse(buf.str(), nullptr, false);
  if (j.is_discarded() || !j.is_object())
    die("config file '" + path + "' is not a JSON object");
  return j;
}

int run_library_command(const std::string& name, const json& config) {
  OwnedString summary;
  int exit_code = 0;
  const ply_status st =
      ply_run_command(name.c_str(), config.dump().c_str(), &exit_code, &summary.ptr);
  if (st != PLY_OK) die(last_error(), st == PLY_ERR_CONFIG ? 2 : 1);

  if (name == "selfcheck") {
    // One line per check ahead of the summary, like a test runner.
    const json sj = json::parse(summary.str());
    for (const auto& c : sj.at("checks"))
      std::printf("%-28s %s  %s\n", c.at("name").get<std::string>().c_str(),
                  c.at("pass").get<bool>() ? "pass" : "FAIL",
                  c.at("detail").get<std::string>().c_str());
  }
  std::printf("%s\n", summary.str().c_str());
  return exit_code;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Policy-transformer look-ahead analysis"};
  app.require_subcommand(1);
  app.set_version_flag("--version", std::string("plyscope ") + ply_version());

  // ---- analysis commands, all funneled through ply_run_command ----
  struct PendingRun {
    std::string name;
    std::string config_file;
    ConfigFlags flags;
  };
  std::vector<std::unique_ptr<PendingRun>> runs;

  // Shared flag storage; CLI11 writes here, appliers copy into the JSON.
  static std::string weights, weak_weights, dataset, out, probes, results, tags;
  static uint64_t seed = 0;
  static int jobs = 1, limit = 0, min_pv = 3, layer = 12, head = 12;
  static int board_sample = 64, probe_rank = 32, probe_batch = 64, probe_epochs = 5,
             probe_seeds = 5;
  static bool apply_setup_move = false, transpose_qk = false, presoftmax = false;
  static bool no_strong = false, no_weak = false, no_value = false, save_store = false;
  static double weak_threshold = 0.05, strong_threshold = 0.7, opponent_threshold = 0.7;
  static double corrupt_strong_prob = 0.10, corrupt_weak_drop = 0.20, corrupt_value_gain = 0.10;
  static double head_threshold = 0.5, probe_lr = 1e-2, train_frac = 0.7;
  static std::vector<int> streams;

  auto make_run = [&](const std::string& name, const std::string& desc) -> PendingRun& {
    auto* cmd = app.add_subcommand(name, desc);
    runs.push_back(std::make_unique<PendingRun>(PendingRun{name, "", ConfigFlags(cmd)}));
    auto& run = *runs.back();
    cmd->add_option("--config", run.config_file, "JSON config file; flags override its keys");
    run.flags.option("--seed", "seed", seed, "RNG seed");
    run.flags.option("--jobs", "jobs", jobs, "worker threads");
    cmd->callback([&run] {});  // selection recorded via parsed_subcommands
    return run;
  };
  auto core_io = [&](PendingRun& r, bool needs_dataset = true) {
    r.flags.option("--weights", "weights", weights, "strong model archive");
    if (needs_dataset) r.flags.option("--dataset", "dataset", dataset, "puzzle dataset");
    r.flags.option("--out", "out", out, "output directory (must not exist)");
    r.flags.option("--limit", "limit", limit, "use only the first N puzzles (0 = all)");
  };

  {
    auto& r = make_run("filter-puzzles", "Ingest a puzzle CSV and keep model-disagreement cases");
    core_io(r);
    r.flags.option("--weak-weights", "weak_weights", weak_weights, "weak model archive");
    r.flags.flag("--apply-setup-move", "apply_setup_move", apply_setup_move,
                 "advance each puzzle by its setup move before filtering");
    r.flags.option("--min-pv", "min_pv", min_pv, "minimum principal-variation length");
    r.flags.option("--weak-threshold", "weak_threshold", weak_threshold,
                   "max weak-model probability of the solution move");
    r.flags.option("--strong-threshold", "strong_threshold", strong_threshold,
                   "min strong-model probability of the solution move");
    r.flags.option("--opponent-threshold", "opponent_threshold", opponent_threshold,
                   "min strong-model probability on forced opponent replies");
  }
  {
    auto& r = make_run("find-corruptions", "Search a minimal corruption for each puzzle");
    core_io(r);
    r.flags.option("--weak-weights", "weak_weights", weak_weights, "weak model archive");
    r.flags.option("--corrupt-strong-prob", "corrupt_strong_prob", corrupt_strong_prob,
                   "max corrupted strong-model probability of the solution");
    r.flags.option("--corrupt-weak-drop", "corrupt_weak_drop", corrupt_weak_drop,
                   "max weak-model log-odds drop under corruption");
    r.flags.option("--corrupt-value-gain", "corrupt_value_gain", corrupt_value_gain,
                   "max corrupted value gain");
    r.flags.flag("--no-strong-filter", "corrupt_use_strong", no_strong,
                 "disable the strong-probability filter", false);
    r.flags.flag("--no-weak-filter", "corrupt_use_weak", no_weak,
                 "disable the weak-drop filter", false);
    r.flags.flag("--no-value-filter", "corrupt_use_value", no_value,
                 "disable the value-gain filter", false);
  }
  {
    auto& r = make_run("patch-residual", "Activation-patch every residual stream site");
    core_io(r);
  }
  {
    auto& r = make_run("patch-heads", "Activation-patch every attention head output");
    core_io(r);
  }
  {
    auto& r = make_run("ablate-l12h12", "Ablate one head's strongest attention entry per puzzle");
    core_io(r);
    r.flags.option("--layer", "layer", layer, "1-based layer of the head");
    r.flags.option("--head", "head", head, "1-based head index");
    r.flags.flag("--transpose-qk", "transpose_qk", transpose_qk,
                 "swap query/key when locating the entry (control)");
    r.flags.flag("--presoftmax", "presoftmax", presoftmax,
                 "mask pre-softmax (renormalizing) instead of zeroing post-softmax");
  }
  {
    auto& r = make_run("detect-heads", "Score attention heads against piece-movement masks");
    core_io(r);
    r.flags.option("--head-threshold", "head_threshold", head_threshold,
                   "minimum score to tag a head");
    r.flags.option("--board-sample", "board_sample", board_sample,
                   "number of boards used for scoring");
  }
  {
    auto& r = make_run("ablate-piece-heads", "Ablate move-3 entries in piece-matched heads");
    core_io(r);
    r.flags.option("--tags", "tags", tags, "head-tag CSV (from detect-heads); empty = detect");
    r.flags.option("--head-threshold", "head_threshold", head_threshold,
                   "minimum score to tag a head (in-run detection)");
    r.flags.option("--board-sample", "board_sample", board_sample,
                   "number of boards used for in-run detection");
    r.flags.flag("--presoftmax", "presoftmax", presoftmax,
                 "mask pre-softmax (renormalizing) instead of zeroing post-softmax");
  }
  {
    auto& r = make_run("train-probes", "Train bilinear future-move probes per stream");
    core_io(r);
    r.flags.option("--probe-rank", "probe_rank", probe_rank, "bilinear factor rank");
    r.flags.option("--probe-lr", "probe_lr", probe_lr, "Adam learning rate");
    r.flags.option("--probe-batch", "probe_batch", probe_batch, "minibatch size");
    r.flags.option("--probe-epochs", "probe_epochs", probe_epochs, "training epochs");
    r.flags.option("--probe-seeds", "probe_seeds", probe_seeds, "independent seeds per probe");
    r.flags.option("--train-frac", "train_frac", train_frac, "train split fraction");
    r.flags.option("--streams", "streams", streams, "residual streams to probe (default all)");
    r.flags.flag("--save-store", "save_store", save_store,
                 "persist cached activations next to the probes");
  }
  {
    auto& r = make_run("eval-probes", "Evaluate trained probes on the held-out split");
    core_io(r);
    r.flags.option("--probes", "probes", probes, "train-probes output directory");
  }
  {
    auto& r = make_run("subsplit-report", "Re-aggregate a prior run by target-square subsplit");
    core_io(r);
    r.flags.option("--results", "results", results, "prior run output directory");
  }
  {
    auto& r = make_run("selfcheck", "Run the built-in verification suite");
    r.flags.option("--out", "out", out, "optional directory for selfcheck.csv");
  }
  {
    auto& r = make_run("make-fixture", "Write the hand-constructed toy model pair");
    r.flags.option("--out", "out", out, "output directory (must not exist)");
  }

  // ---- board and model utilities, straight C-API calls ----
  std::string util_fen = "startpos";
  std::string util_weights;
  std::string util_moves;
  int util_depth = 1;
  uint64_t util_seed = 0;
  std::string util_out;

  auto* perft_cmd = app.add_subcommand("perft", "Count leaf nodes of the move-generation tree");
  perft_cmd->add_option("--fen", util_fen, "position ('startpos' or FEN)");
  perft_cmd->add_option("--depth", util_depth, "tree depth")->required();

  auto* moves_cmd = app.add_subcommand("moves", "List legal moves, with probabilities if a model is given");
  moves_cmd->add_option("--fen", util_fen, "position ('startpos' or FEN)");
  moves_cmd->add_option("--weights", util_weights, "model archive for probabilities");
  moves_cmd->add_option("--play", util_moves, "space-separated UCI moves applied first");

  auto* info_cmd = app.add_subcommand("info", "Print model architecture and hash");
  info_cmd->add_option("--weights", util_weights, "model archive")->required();

  auto* synth_cmd = app.add_subcommand("write-synthetic", "Write the toy verification model");
  synth_cmd->add_option("--out", util_out, "archive path to write")->required();
  synth_cmd->add_option("--seed", util_seed, "RNG seed");

  auto* commands_cmd = app.add_subcommand("commands", "List the analysis commands");

  CLI11_PARSE(app, argc, argv);

  const auto make_board = [&](const std::string& fen) {
    ply_board* b = nullptr;
    const ply_status st = fen == "startpos" ? ply_board_start(&b)
                                            : ply_board_from_fen(fen.c_str(), &b);
    if (st != PLY_OK) die(last_error());
    return b;
  };

  if (perft_cmd->parsed()) {
    ply_board* b = make_board(util_fen);
    uint64_t nodes = 0;
    if (ply_board_perft(b, util_depth, &nodes) != PLY_OK) die(last_error());
    ply_board_destroy(b);
    std::printf("%llu\n", static_cast<unsigned long long>(nodes));
    return 0;
  }
  if (moves_cmd->parsed()) {
    ply_board* b = make_board(util_fen);
    std::istringstream play(util_moves);
    for (std::string uci; play >> uci;)
      if (ply_board_apply(b, uci.c_str()) != PLY_OK) die(last_error());
    if (util_weights.empty()) {
      OwnedString moves;
      if (ply_board_legal_moves(b, &moves.ptr) != PLY_OK) die(last_error());
      std::printf("%s\n", moves.str().c_str());
    } else {
      ply_model* m = nullptr;
      if (ply_model_load(util_weights.c_str(), &m) != PLY_OK) die(last_error());
      OwnedString fen, probs;
      if (ply_board_fen(b, &fen.ptr) != PLY_OK) die(last_error());
      const ply_status st = ply_model_move_probs(m, fen.ptr, &probs.ptr);
      ply_model_destroy(m);
      if (st != PLY_OK) die(last_error());
      std::printf("%s\n", probs.str().c_str());
    }
    ply_board_destroy(b);
    return 0;
  }
  if (info_cmd->parsed()) {
    ply_model* m = nullptr;
    if (ply_model_load(util_weights.c_str(), &m) != PLY_OK) die(last_error());
    OwnedString info;
    const ply_status st = ply_model_info(m, &info.ptr);
    ply_model_destroy(m);
    if (st != PLY_OK) die(last_error());
    std::printf("%s\n", info.str().c_str());
    return 0;
  }
  if (synth_cmd->parsed()) {
    OwnedString plant;
    if (ply_synthetic_model_write(util_out.c_str(), util_seed, &plant.ptr) != PLY_OK)
      die(last_error());
    std::printf("%s\n", plant.str().c_str());
    return 0;
  }
  if (commands_cmd->parsed()) {
    std::printf("%s\n", ply_commands());
    return 0;
  }

  for (auto& run : runs) {
    auto* cmd = app.get_subcommand(run->name);
    if (!cmd->parsed()) continue;
    json config = run->config_file.empty() ? json::object() : read_config_file(run->config_file);
    run->flags.apply(config);
    return run_library_command(run->name, config);
  }
  die("no command selected");
}
