#include "run/runner.hpp"

#include <algorithm>
#include <array>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <map>
#include <optional>
#include <set>
#include <string>
#include <tuple>
#include <utility>
#include <vector>

#include <json.hpp>

#include "common/error.hpp"
#include "common/hash.hpp"
#include "corrupt/corruption.hpp"
#include "data/puzzles.hpp"
#include "heads/heads.hpp"
#include "nn/model.hpp"
#include "nn/synthetic.hpp"
#include "patch/patching.hpp"
#include "probe/probes.hpp"
#include "run/config.hpp"
#include "run/output.hpp"
#include "stats/stats.hpp"

namespace ply::run {
namespace {

namespace fs = std::filesystem;
using chess::Board;
using chess::PieceKind;
using chess::Square;
using nlohmann::json;

const std::string& require_flag(const std::string& value, const std::string& flag) {
  if (value.empty()) fail(ErrorKind::Config, "this command requires " + flag);
  return value;
}

struct CommandIo {
  const RunConfig& cfg;
  OutputDir* out = nullptr;
  json* manifest = nullptr;
};

OutputDir& out_dir(const CommandIo& io) {
  if (!io.out) fail(ErrorKind::Config, "this command requires --out");
  return *io.out;
}

void record_input(const CommandIo& io, const std::string& key, const std::string& path,
                  const std::string& hash) {
  (*io.manifest)["inputs"][key] = {{"path", path}, {"fnv1a64", hash}};
}

nn::Model load_model_arg(const CommandIo& io, const std::string& path, const std::string& flag,
                         const std::string& key) {
  nn::Model model = nn::Model::load(require_flag(path, flag));
  record_input(io, key, path, model.hash());
  return model;
}

std::vector<data::PuzzleRecord> load_records(const CommandIo& io, bool apply_limit = true) {
  require_flag(io.cfg.dataset, "--dataset");
  auto records = data::load_dataset(io.cfg.dataset);
  record_input(io, "dataset", io.cfg.dataset, file_hash_hex(io.cfg.dataset));
  std::sort(records.begin(), records.end(),
            [](const auto& a, const auto& b) { return a.id < b.id; });
  if (apply_limit && io.cfg.limit > 0 && records.size() > static_cast<size_t>(io.cfg.limit))
    records.resize(static_cast<size_t>(io.cfg.limit));
  if (records.empty()) fail(ErrorKind::Config, "dataset '" + io.cfg.dataset + "' is empty");
  return records;
}

// ---------- aggregation shared by the patch commands and subsplit-report ----

struct Agg {
  int n = 0;
  double mean = 0.0;
  double two_sem = 0.0;
};

Agg aggregate(const std::vector<double>& v) {
  Agg a;
  a.n = static_cast<int>(v.size());
  if (v.empty()) return a;
  if (v.size() == 1) {
    a.mean = v[0];
    return a;
  }
  const auto ms = stats::mean_sem(v);
  a.mean = ms.mean;
  a.two_sem = 2.0 * ms.sem;
  return a;
}

struct ResidualRow {
  std::string puzzle;
  int stream = 0;
  std::string cls;
  double delta = 0.0;
};

// Per-(stream, class) aggregates. The per-square "other" rows are collapsed
// to one max per (puzzle, stream) first and reported as class "other_max".
std::vector<std::tuple<int, std::string, Agg>> residual_aggregates(
    const std::vector<ResidualRow>& rows) {
  std::map<std::pair<int, std::string>, std::vector<double>> buckets;
  std::map<std::pair<int, std::string>, double> other_max;  // (stream, puzzle)
  for (const auto& r : rows) {
    if (r.cls == "other") {
      auto [it, fresh] = other_max.try_emplace({r.stream, r.puzzle}, r.delta);
      if (!fresh) it->second = std::max(it->second, r.delta);
    } else {
      buckets[{r.stream, r.cls}].push_back(r.delta);
    }
  }
  for (const auto& [key, v] : other_max) buckets[{key.first, "other_max"}].push_back(v);

  std::set<int> streams;
  for (const auto& [key, v] : buckets) streams.insert(key.first);
  std::vector<std::tuple<int, std::string, Agg>> out;
  for (const int s : streams)
    for (const char* cls : {"corrupted", "t1", "t3", "other_max"}) {
      const auto it = buckets.find({s, cls});
      if (it != buckets.end()) out.emplace_back(s, cls, aggregate(it->second));
    }
  return out;
}

struct HeadRow {
  std::string puzzle;
  int layer = 0;  // kept in whatever base the caller uses
  int head = 0;
  double delta = 0.0;
};

std::vector<std::tuple<int, int, Agg>> head_aggregates(const std::vector<HeadRow>& rows) {
  std::map<std::pair<int, int>, std::vector<double>> buckets;
  for (const auto& r : rows) buckets[{r.layer, r.head}].push_back(r.delta);
  std::vector<std::tuple<int, int, Agg>> out;
  for (const auto& [key, v] : buckets) out.emplace_back(key.first, key.second, aggregate(v));
  return out;
}

struct EntryRow {
  std::string puzzle;
  bool skipped = false;
  double single = 0.0;
  double complement = 0.0;
  bool is_max = false;
  bool single_top = false;
  bool complement_top = false;
};

std::vector<std::pair<std::string, std::string>> entry_metrics(
    const std::vector<EntryRow>& rows) {
  std::vector<double> single, complement;
  int n_skipped = 0, n_max = 0, n_single_top = 0, n_comp_top = 0, n_ge = 0;
  for (const auto& r : rows) {
    if (r.skipped) {
      ++n_skipped;
      continue;
    }
    single.push_back(r.single);
    complement.push_back(r.complement);
    n_max += r.is_max ? 1 : 0;
    n_single_top += r.single_top ? 1 : 0;
    n_comp_top += r.complement_top ? 1 : 0;
    n_ge += r.single >= 1.5 ? 1 : 0;
  }
  const Agg s = aggregate(single), c = aggregate(complement);
  const double n = static_cast<double>(std::max<size_t>(single.size(), 1));
  std::vector<std::pair<std::string, std::string>> m;
  m.emplace_back("n", std::to_string(single.size()));
  m.emplace_back("n_skipped", std::to_string(n_skipped));
  m.emplace_back("max_entry_fraction", fmt(n_max / n));
  m.emplace_back("mean_single_delta", fmt(s.mean));
  m.emplace_back("two_sem_single_delta", fmt(s.two_sem));
  m.emplace_back("mean_complement_delta", fmt(c.mean));
  m.emplace_back("two_sem_complement_delta", fmt(c.two_sem));
  m.emplace_back("frac_single_delta_ge_1.5", fmt(n_ge / n));
  m.emplace_back("frac_single_changes_top_move", fmt(n_single_top / n));
  m.emplace_back("frac_complement_changes_top_move", fmt(n_comp_top / n));
  return m;
}

struct PieceRow {
  std::string puzzle;
  bool eligible = false;
  double matched = 0.0;
  double other = 0.0;
  double random = 0.0;
  int other_heads = 0;
};

std::vector<std::pair<std::string, std::string>> piece_metrics(
    const std::vector<PieceRow>& rows) {
  std::vector<double> matched, other, random;
  int n_ge = 0;
  for (const auto& r : rows) {
    if (!r.eligible) continue;
    matched.push_back(r.matched);
    if (r.other_heads > 0) other.push_back(r.other);
    random.push_back(r.random);
    n_ge += r.matched >= 1.5 ? 1 : 0;
  }
  const Agg m = aggregate(matched), o = aggregate(other), rd = aggregate(random);
  std::vector<std::pair<std::string, std::string>> out;
  out.emplace_back("n_puzzles", std::to_string(rows.size()));
  out.emplace_back("n_eligible", std::to_string(matched.size()));
  out.emplace_back("mean_matched_delta", fmt(m.mean));
  out.emplace_back("two_sem_matched_delta", fmt(m.two_sem));
  out.emplace_back("n_other_kind", std::to_string(other.size()));
  out.emplace_back("mean_other_kind_delta", fmt(o.mean));
  out.emplace_back("two_sem_other_kind_delta", fmt(o.two_sem));
  out.emplace_back("mean_random_square_delta", fmt(rd.mean));
  out.emplace_back("two_sem_random_square_delta", fmt(rd.two_sem));
  out.emplace_back("frac_matched_ge_1.5",
                   fmt(matched.empty() ? 0.0 : n_ge / static_cast<double>(matched.size())));
  return out;
}

// Percentile curve rows in long format; arms below the order-statistic
// minimum are omitted rather than reported with meaningless intervals.
void write_percentile_rows(std::ofstream& os, const std::string& arm,
                           const std::vector<double>& samples) {
  if (samples.size() < 20) return;
  const auto curve = stats::percentile_curve(samples);
  for (size_t i = 0; i < curve.p.size(); ++i)
    os << csv_row({arm, fmt(curve.p[i]), fmt(curve.value[i]), fmt(curve.ci_lo[i]),
                   fmt(curve.ci_hi[i])});
}

// ---------- small parsers -----------------------------------------------

std::string kind_word(PieceKind k) {
  switch (k) {
    case PieceKind::Pawn: return "pawn";
    case PieceKind::Knight: return "knight";
    case PieceKind::Bishop: return "bishop";
    case PieceKind::Rook: return "rook";
    case PieceKind::Queen: return "queen";
    case PieceKind::King: return "king";
  }
  fail(ErrorKind::Internal, "unhandled piece kind");
}

PieceKind kind_from_word(const std::string& w) {
  for (int k = 0; k < 6; ++k)
    if (kind_word(static_cast<PieceKind>(k)) == w) return static_cast<PieceKind>(k);
  fail(ErrorKind::Parse, "unknown piece kind '" + w + "'");
}

std::vector<std::string> split_comma(const std::string& line) {
  std::vector<std::string> out;
  std::string cur;
  for (const char c : line) {
    if (c == ',') {
      out.push_back(cur);
      cur.clear();
    } else if (c != '\r') {
      cur += c;
    }
  }
  out.push_back(cur);
  return out;
}

std::vector<json> read_jsonl(const std::string& path) {
  std::ifstream in(path);
  if (!in) fail(ErrorKind::Io, "cannot read '" + path + "'");
  std::vector<json> rows;
  std::string line;
  size_t line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (line.empty()) continue;
    try {
      rows.push_back(json::parse(line));
    } catch (const json::exception& e) {
      fail(ErrorKind::Parse, path + ":" + std::to_string(line_no) + ": " + e.what());
    }
  }
  return rows;
}

json read_json_file(const std::string& path) {
  std::ifstream in(path);
  if (!in) fail(ErrorKind::Io, "cannot read '" + path + "'");
  try {
    return json::parse(in);
  } catch (const json::exception& e) {
    fail(ErrorKind::Parse, path + ": " + e.what());
  }
}

std::string class_name(patch::SquareClass c) {
  switch (c) {
    case patch::SquareClass::Corrupted: return "corrupted";
    case patch::SquareClass::T1: return "t1";
    case patch::SquareClass::T3: return "t3";
    case patch::SquareClass::Other: return "other";
  }
  fail(ErrorKind::Internal, "unhandled square class");
}

std::vector<patch::HeadTag> read_tags_csv(const std::string& path) {
  std::ifstream in(path);
  if (!in) fail(ErrorKind::Io, "cannot read '" + path + "'");
  std::string line;
  if (!std::getline(in, line) ||
      split_comma(line) != std::vector<std::string>{"layer", "head", "kind", "score"})
    fail(ErrorKind::Parse, "tag file '" + path + "' must start with 'layer,head,kind,score'");
  std::vector<patch::HeadTag> tags;
  size_t line_no = 1;
  while (std::getline(in, line)) {
    ++line_no;
    if (line.empty()) continue;
    const auto f = split_comma(line);
    if (f.size() != 4)
      fail(ErrorKind::Parse, path + ":" + std::to_string(line_no) + ": expected 4 fields");
    int layer = 0, head = 0;
    double score = 0.0;
    try {
      layer = std::stoi(f[0]);
      head = std::stoi(f[1]);
      score = std::stod(f[3]);
    } catch (const std::exception&) {
      fail(ErrorKind::Parse, path + ":" + std::to_string(line_no) + ": malformed number");
    }
    tags.push_back({layer - 1, head - 1, kind_from_word(f[2]), score});
  }
  return tags;
}

std::vector<Board> sample_boards(const std::vector<data::PuzzleRecord>& records,
                                 int board_sample) {
  const size_t n = std::min(records.size(), static_cast<size_t>(std::max(board_sample, 0)));
  std::vector<Board> boards;
  boards.reserve(n);
  for (size_t i = 0; i < n; ++i) boards.push_back(Board::from_fen(records[i].fen));
  return boards;
}

// ---------- commands -----------------------------------------------------

json cmd_filter_puzzles(const CommandIo& io) {
  auto& out = out_dir(io);
  const auto strong = load_model_arg(io, io.cfg.weights, "--weights", "weights");
  const auto weak = load_model_arg(io, io.cfg.weak_weights, "--weak-weights", "weak_weights");
  require_flag(io.cfg.dataset, "--dataset");
  record_input(io, "dataset", io.cfg.dataset, file_hash_hex(io.cfg.dataset));

  data::IngestOptions opt;
  opt.apply_setup_move = io.cfg.apply_setup_move;
  opt.min_pv = static_cast<size_t>(io.cfg.min_pv);
  data::IngestStats ingest;
  auto records = data::ingest_lichess_csv(io.cfg.dataset, opt, &ingest);
  std::sort(records.begin(), records.end(),
            [](const auto& a, const auto& b) { return a.id < b.id; });
  if (io.cfg.limit > 0 && records.size() > static_cast<size_t>(io.cfg.limit))
    records.resize(static_cast<size_t>(io.cfg.limit));

  std::vector<data::FilterDecision> decisions(records.size());
  parallel_for(records.size(), io.cfg.jobs, [&](size_t i) {
    decisions[i] = data::filter_puzzle(strong, weak, records[i], io.cfg.filter);
  });

  std::vector<data::PuzzleRecord> kept;
  std::map<std::string, int> reject_counts;
  {
    auto rejects = out.create("rejects.csv");
    rejects << csv_row({"id", "reason", "move_index"});
    for (size_t i = 0; i < records.size(); ++i) {
      if (decisions[i].keep) {
        kept.push_back(records[i]);
      } else {
        ++reject_counts[decisions[i].reason];
        rejects << csv_row({records[i].id, decisions[i].reason,
                            std::to_string(decisions[i].move_index)});
      }
    }
  }
  data::save_dataset(out.path("puzzles.jsonl"), kept);

  const auto same_frac = [](const std::vector<data::PuzzleRecord>& rs) {
    if (rs.empty()) return 0.0;
    size_t k = 0;
    for (const auto& r : rs) k += r.subsplit == data::Subsplit::SameTarget ? 1 : 0;
    return static_cast<double>(k) / static_cast<double>(rs.size());
  };
  {
    auto summary = out.create("filter_summary.csv");
    summary << csv_row({"metric", "value"});
    summary << csv_row({"rows_ingested", std::to_string(ingest.rows)});
    summary << csv_row({"ingest_kept", std::to_string(ingest.kept)});
    for (const auto& [reason, count] : ingest.skipped)
      summary << csv_row({"ingest_skipped_" + reason, std::to_string(count)});
    summary << csv_row({"candidates", std::to_string(records.size())});
    summary << csv_row({"kept", std::to_string(kept.size())});
    for (const auto& [reason, count] : reject_counts)
      summary << csv_row({"rejected_" + reason, std::to_string(count)});
    summary << csv_row({"same_target_fraction_candidates", fmt(same_frac(records))});
    summary << csv_row({"same_target_fraction_kept", fmt(same_frac(kept))});
  }

  json sj;
  sj["rows"] = ingest.rows;
  sj["candidates"] = records.size();
  sj["kept"] = kept.size();
  return sj;
}

json cmd_find_corruptions(const CommandIo& io) {
  auto& out = out_dir(io);
  const auto strong = load_model_arg(io, io.cfg.weights, "--weights", "weights");
  const auto weak = load_model_arg(io, io.cfg.weak_weights, "--weak-weights", "weak_weights");
  const auto records = load_records(io);

  struct Row {
    std::optional<corrupt::CorruptionCandidate> selected;
    size_t candidates = 0;
    size_t survivors = 0;
  };
  std::vector<Row> rows(records.size());
  parallel_for(records.size(), io.cfg.jobs, [&](size_t i) {
    const Board clean = Board::from_fen(records[i].fen);
    auto candidates = corrupt::generate_candidates(clean);
    rows[i].candidates = candidates.size();
    auto survivors = corrupt::filter_candidates(strong, weak, clean, records[i].pv[0],
                                                std::move(candidates), io.cfg.corruption);
    rows[i].survivors = survivors.size();
    rows[i].selected = corrupt::select_corruption(weak, clean, std::move(survivors));
  });

  std::vector<data::PuzzleRecord> corrupted;
  {
    auto table = out.create("corruptions.csv");
    table << csv_row({"id", "mutation", "jsd", "strong_best_prob", "weak_logodds_drop",
                      "value_gain", "candidates", "survivors"});
    auto excluded = out.create("exclusions.csv");
    excluded << csv_row({"id", "reason"});
    for (size_t i = 0; i < records.size(); ++i) {
      if (!rows[i].selected) {
        excluded << csv_row({records[i].id, "no-surviving-corruption"});
        continue;
      }
      data::PuzzleRecord rec = records[i];
      rec.corruption = rows[i].selected;
      const auto& c = *rows[i].selected;
      table << csv_row({rec.id, c.mutation.describe(), fmt(c.jsd), fmt(c.strong_best_prob),
                        fmt(c.weak_logodds_drop), fmt(c.value_gain),
                        std::to_string(rows[i].candidates), std::to_string(rows[i].survivors)});
      corrupted.push_back(std::move(rec));
    }
  }
  data::save_dataset(out.path("puzzles.jsonl"), corrupted);

  json sj;
  sj["puzzles"] = records.size();
  sj["corrupted"] = corrupted.size();
  sj["excluded"] = records.size() - corrupted.size();
  return sj;
}

json cmd_patch_residual(const CommandIo& io) {
  auto& out = out_dir(io);
  const auto model = load_model_arg(io, io.cfg.weights, "--weights", "weights");
  const auto records = load_records(io);

  std::vector<patch::PatchContext> ctxs;
  ctxs.reserve(records.size());
  for (const auto& rec : records) ctxs.push_back(data::make_patch_context(rec));

  std::vector<patch::ResidualSweep> sweeps(records.size());
  parallel_for(records.size(), io.cfg.jobs,
               [&](size_t i) { sweeps[i] = patch::residual_sweep(model, ctxs[i]); });

  std::vector<ResidualRow> rows;
  {
    auto jsonl = out.create("residual_effects.jsonl");
    for (size_t i = 0; i < records.size(); ++i) {
      const Board pf = ctxs[i].clean.orient_to_player();
      for (size_t s = 0; s < sweeps[i].grid.size(); ++s) {
        for (int sq = 0; sq < 64; ++sq) {
          const auto& rec = sweeps[i].grid[s][static_cast<size_t>(sq)];
          const std::string cls = class_name(sweeps[i].square_class[static_cast<size_t>(sq)]);
          json j;
          j["puzzle"] = records[i].id;
          j["stream"] = s;
          j["square"] = pf.to_absolute(Square(sq)).name();
          j["class"] = cls;
          j["delta"] = rec.delta;
          j["clean_prob"] = rec.clean_prob;
          j["patched_prob"] = rec.patched_prob;
          j["clamped"] = rec.clamped;
          jsonl << j.dump() << "\n";
          rows.push_back({records[i].id, static_cast<int>(s), cls, rec.delta});
        }
      }
    }
  }
  {
    auto summary = out.create("residual_summary.csv");
    summary << csv_row({"stream", "class", "n", "mean", "two_sem"});
    for (const auto& [stream, cls, agg] : residual_aggregates(rows))
      summary << csv_row(
          {std::to_string(stream), cls, std::to_string(agg.n), fmt(agg.mean), fmt(agg.two_sem)});
  }

  json sj;
  sj["puzzles"] = records.size();
  sj["streams"] = sweeps.empty() ? 0 : sweeps[0].grid.size();
  sj["records"] = rows.size();
  return sj;
}

json cmd_patch_heads(const CommandIo& io) {
  auto& out = out_dir(io);
  const auto model = load_model_arg(io, io.cfg.weights, "--weights", "weights");
  const auto records = load_records(io);

  std::vector<patch::PatchContext> ctxs;
  ctxs.reserve(records.size());
  for (const auto& rec : records) ctxs.push_back(data::make_patch_context(rec));

  std::vector<patch::HeadSweep> sweeps(records.size());
  parallel_for(records.size(), io.cfg.jobs,
               [&](size_t i) { sweeps[i] = patch::head_sweep(model, ctxs[i]); });

  std::vector<HeadRow> rows;
  {
    auto jsonl = out.create("head_effects.jsonl");
    for (size_t i = 0; i < records.size(); ++i) {
      for (size_t li = 0; li < sweeps[i].grid.size(); ++li) {
        for (size_t h = 0; h < sweeps[i].grid[li].size(); ++h) {
          const auto& rec = sweeps[i].grid[li][h];
          json j;
          j["puzzle"] = records[i].id;
          j["layer"] = li + 1;
          j["head"] = h + 1;
          j["delta"] = rec.delta;
          j["clean_prob"] = rec.clean_prob;
          j["patched_prob"] = rec.patched_prob;
          j["clamped"] = rec.clamped;
          jsonl << j.dump() << "\n";
          rows.push_back({records[i].id, static_cast<int>(li) + 1, static_cast<int>(h) + 1,
                          rec.delta});
        }
      }
    }
  }
  const auto aggs = head_aggregates(rows);
  {
    auto summary = out.create("head_summary.csv");
    summary << csv_row({"layer", "head", "n", "mean", "two_sem"});
    for (const auto& [layer, head, agg] : aggs)
      summary << csv_row({std::to_string(layer), std::to_string(head), std::to_string(agg.n),
                          fmt(agg.mean), fmt(agg.two_sem)});
  }

  json sj;
  sj["puzzles"] = records.size();
  double top_mean = -1e300;
  for (const auto& [layer, head, agg] : aggs) {
    if (agg.mean > top_mean) {
      top_mean = agg.mean;
      sj["top_layer"] = layer;
      sj["top_head"] = head;
      sj["top_mean"] = agg.mean;
    }
  }
  return sj;
}

json cmd_entry_ablation(const CommandIo& io) {
  auto& out = out_dir(io);
  const auto model = load_model_arg(io, io.cfg.weights, "--weights", "weights");
  const auto records = load_records(io);
  const auto& spec = model.spec();
  if (io.cfg.layer < 1 || io.cfg.layer > spec.n_layers)
    fail(ErrorKind::Config, "layer " + std::to_string(io.cfg.layer) + " out of range [1, " +
                                std::to_string(spec.n_layers) + "]");
  if (io.cfg.head < 1 || io.cfg.head > spec.n_heads)
    fail(ErrorKind::Config, "head " + std::to_string(io.cfg.head) + " out of range [1, " +
                                std::to_string(spec.n_heads) + "]");
  const int layer = io.cfg.layer - 1;
  const int head = io.cfg.head - 1;

  std::vector<patch::PatchContext> ctxs;
  ctxs.reserve(records.size());
  for (const auto& rec : records) ctxs.push_back(data::make_patch_context(rec));

  std::vector<patch::EntryAblation> abls(records.size());
  parallel_for(records.size(), io.cfg.jobs, [&](size_t i) {
    abls[i] = patch::entry_ablation(model, ctxs[i], layer, head, io.cfg.transpose_qk,
                                    io.cfg.presoftmax);
  });

  std::vector<EntryRow> rows;
  {
    auto jsonl = out.create("entry_effects.jsonl");
    for (size_t i = 0; i < records.size(); ++i) {
      const auto& a = abls[i];
      json j;
      j["puzzle"] = records[i].id;
      j["skipped"] = a.skipped;
      j["single_delta"] = a.single_delta;
      j["complement_delta"] = a.complement_delta;
      j["entry_is_global_max"] = a.entry_is_global_max;
      j["single_changes_top_move"] = a.single_changes_top_move;
      j["complement_changes_top_move"] = a.complement_changes_top_move;
      jsonl << j.dump() << "\n";
      rows.push_back({records[i].id, a.skipped, a.single_delta, a.complement_delta,
                      a.entry_is_global_max, a.single_changes_top_move,
                      a.complement_changes_top_move});
    }
  }
  const auto metrics = entry_metrics(rows);
  {
    auto summary = out.create("entry_summary.csv");
    summary << csv_row({"metric", "value"});
    for (const auto& [metric, value] : metrics) summary << csv_row({metric, value});
  }
  {
    std::vector<double> singles;
    for (const auto& r : rows)
      if (!r.skipped) singles.push_back(r.single);
    auto pct = out.create("entry_percentiles.csv");
    pct << csv_row({"arm", "p", "value", "ci_lo", "ci_hi"});
    write_percentile_rows(pct, "single", singles);
  }

  json sj;
  sj["layer"] = io.cfg.layer;
  sj["head"] = io.cfg.head;
  for (const auto& [metric, value] : metrics) sj[metric] = value;
  return sj;
}

json cmd_detect_heads(const CommandIo& io) {
  auto& out = out_dir(io);
  const auto model = load_model_arg(io, io.cfg.weights, "--weights", "weights");
  const auto records = load_records(io);
  const auto boards = sample_boards(records, io.cfg.board_sample);

  const auto scores = heads::piece_head_scores(model, boards, io.cfg.seed);
  const auto tags = heads::tags_from_scores(scores, io.cfg.head_threshold);
  {
    auto table = out.create("head_scores.csv");
    table << csv_row({"layer", "head", "knight", "bishop", "rook"});
    for (size_t li = 0; li < scores.size(); ++li)
      for (size_t h = 0; h < scores[li].size(); ++h)
        table << csv_row({std::to_string(li + 1), std::to_string(h + 1),
                          fmt(scores[li][h][static_cast<size_t>(PieceKind::Knight)]),
                          fmt(scores[li][h][static_cast<size_t>(PieceKind::Bishop)]),
                          fmt(scores[li][h][static_cast<size_t>(PieceKind::Rook)])});
  }
  json tag_list = json::array();
  {
    auto table = out.create("head_tags.csv");
    table << csv_row({"layer", "head", "kind", "score"});
    for (const auto& t : tags) {
      table << csv_row({std::to_string(t.layer + 1), std::to_string(t.head + 1),
                        kind_word(t.kind), fmt(t.score)});
      tag_list.push_back({{"layer", t.layer + 1},
                          {"head", t.head + 1},
                          {"kind", kind_word(t.kind)},
                          {"score", t.score}});
    }
  }

  json sj;
  sj["boards"] = boards.size();
  sj["tags"] = tag_list;
  return sj;
}

PieceKind move3_kind(const data::PuzzleRecord& rec) {
  const Board b2 = Board::from_fen(rec.fen).apply_move(rec.pv[0]).apply_move(rec.pv[1]);
  return b2.piece_at(rec.pv[2].from)->second;  // PV legality was checked at load
}

// Like make_patch_context, but tolerates a record without a stored corruption
// (the clean-board piece-head ablation does not need one).
patch::PatchContext loose_context(const data::PuzzleRecord& rec) {
  if (rec.corruption) return data::make_patch_context(rec);
  patch::PatchContext ctx;
  ctx.puzzle_id = rec.id;
  ctx.clean = Board::from_fen(rec.fen);
  ctx.corrupted = ctx.clean;
  ctx.best = rec.pv[0];
  ctx.t1 = rec.squares[0].t_abs;
  ctx.t3 = rec.squares[2].t_abs;
  std::set<int> special;
  for (int j = 0; j < 3; ++j) {
    special.insert(rec.squares[static_cast<size_t>(j)].s_abs.index());
    special.insert(rec.squares[static_cast<size_t>(j)].t_abs.index());
  }
  for (const int idx : special) ctx.special_squares.push_back(Square(idx));
  return ctx;
}

json cmd_ablate_piece_heads(const CommandIo& io) {
  auto& out = out_dir(io);
  const auto model = load_model_arg(io, io.cfg.weights, "--weights", "weights");
  const auto records = load_records(io);

  std::vector<patch::HeadTag> tags;
  if (!io.cfg.tags.empty()) {
    tags = read_tags_csv(io.cfg.tags);
    record_input(io, "tags", io.cfg.tags, file_hash_hex(io.cfg.tags));
  } else {
    tags = heads::detect_piece_heads(model, sample_boards(records, io.cfg.board_sample),
                                     io.cfg.head_threshold, io.cfg.seed);
  }
  if (tags.empty())
    fail(ErrorKind::Config, "no tagged piece heads; lower --head-threshold or pass --tags");
  for (const auto& t : tags)
    if (t.layer < 0 || t.layer >= model.spec().n_layers || t.head < 0 ||
        t.head >= model.spec().n_heads)
      fail(ErrorKind::Config, "tag L" + std::to_string(t.layer + 1) + "H" +
                                  std::to_string(t.head + 1) +
                                  " is outside the model's head grid");
  std::set<PieceKind> tagged_kinds;
  for (const auto& t : tags) tagged_kinds.insert(t.kind);

  struct Row {
    bool eligible = false;
    std::string reason;
    PieceKind kind = PieceKind::Knight;
    bool has_kind = false;
    patch::PieceHeadAblation abl;
  };
  std::vector<Row> rows(records.size());
  parallel_for(records.size(), io.cfg.jobs, [&](size_t i) {
    const auto& rec = records[i];
    Row& row = rows[i];
    if (rec.pv.size() <= 3) {
      row.reason = "pv-too-short";
      return;
    }
    row.kind = move3_kind(rec);
    row.has_kind = true;
    if (!tagged_kinds.count(row.kind)) {
      row.reason = "kind-not-tagged";
      return;
    }
    row.abl = patch::piece_head_ablation(model, loose_context(rec), rec.squares[2].s_abs,
                                         rec.squares[2].t_abs, row.kind, tags, io.cfg.seed,
                                         io.cfg.presoftmax);
    row.eligible = true;
  });

  std::vector<PieceRow> prows;
  {
    auto jsonl = out.create("piece_ablation.jsonl");
    for (size_t i = 0; i < records.size(); ++i) {
      const Row& row = rows[i];
      json j;
      j["puzzle"] = records[i].id;
      j["eligible"] = row.eligible;
      if (row.has_kind) j["kind"] = kind_word(row.kind);
      if (!row.eligible) {
        j["reason"] = row.reason;
        jsonl << j.dump() << "\n";
        prows.push_back({records[i].id, false, 0.0, 0.0, 0.0, 0});
        continue;
      }
      j["matched_delta"] = row.abl.matched_delta;
      j["other_kind_delta"] = row.abl.other_type_delta;
      j["random_square_delta"] = row.abl.random_square_delta;
      j["matched_heads"] = row.abl.matched_heads;
      j["other_heads"] = row.abl.other_heads;
      jsonl << j.dump() << "\n";
      prows.push_back({records[i].id, true, row.abl.matched_delta, row.abl.other_type_delta,
                       row.abl.random_square_delta, row.abl.other_heads});
    }
  }
  const auto metrics = piece_metrics(prows);
  {
    auto summary = out.create("piece_summary.csv");
    summary << csv_row({"metric", "value"});
    for (const auto& [metric, value] : metrics) summary << csv_row({metric, value});
  }
  {
    std::vector<double> matched, other, random;
    for (const auto& r : prows) {
      if (!r.eligible) continue;
      matched.push_back(r.matched);
      if (r.other_heads > 0) other.push_back(r.other);
      random.push_back(r.random);
    }
    auto pct = out.create("piece_percentiles.csv");
    pct << csv_row({"arm", "p", "value", "ci_lo", "ci_hi"});
    write_percentile_rows(pct, "matched", matched);
    write_percentile_rows(pct, "other", other);
    write_percentile_rows(pct, "random", random);
  }

  json sj;
  sj["tags"] = tags.size();
  for (const auto& [metric, value] : metrics) sj[metric] = value;
  return sj;
}

std::string probe_file_name(int stream, probe::Stage stage, int seed_index) {
  return "probes/probe_s" + std::to_string(stream) + "_" + probe::stage_name(stage) + "_seed" +
         std::to_string(seed_index) + ".bin";
}

json cmd_train_probes(const CommandIo& io) {
  auto& out = out_dir(io);
  const auto model = load_model_arg(io, io.cfg.weights, "--weights", "weights");
  const auto records = load_records(io);
  const std::string dataset_hash = (*io.manifest)["inputs"]["dataset"]["fnv1a64"];

  std::vector<int> streams = io.cfg.streams;
  if (streams.empty())
    for (int s = 0; s <= model.spec().n_layers; ++s) streams.push_back(s);
  std::sort(streams.begin(), streams.end());
  streams.erase(std::unique(streams.begin(), streams.end()), streams.end());

  const auto split = data::train_eval_split(records, io.cfg.train_frac, io.cfg.seed);
  if (split.train.empty() || split.eval.empty())
    fail(ErrorKind::Config,
         "train/eval split is degenerate (" + std::to_string(split.train.size()) + " train, " +
             std::to_string(split.eval.size()) + " eval); adjust --train-frac or add puzzles");
  if (split.train.size() < static_cast<size_t>(io.cfg.probe_batch))
    fail(ErrorKind::Config, "training split (" + std::to_string(split.train.size()) +
                                " puzzles) is smaller than the probe batch size (" +
                                std::to_string(io.cfg.probe_batch) + ")");
  if (io.cfg.probe_seeds < 1) fail(ErrorKind::Config, "probe_seeds must be >= 1");

  const auto store = probe::cache_activations(model, records, streams);

  probe::TrainHyper hyper;
  hyper.rank = io.cfg.probe_rank;
  hyper.lr = io.cfg.probe_lr;
  hyper.batch_size = io.cfg.probe_batch;
  hyper.epochs = io.cfg.probe_epochs;

  struct Task {
    int stream;
    probe::Stage stage;
    int seed_index;
  };
  std::vector<Task> tasks;
  for (const int s : streams)
    for (const auto stage : {probe::Stage::Target, probe::Stage::Source})
      for (int k = 0; k < io.cfg.probe_seeds; ++k) tasks.push_back({s, stage, k});

  std::vector<probe::TrainResult> trained(tasks.size());
  parallel_for(tasks.size(), io.cfg.jobs, [&](size_t i) {
    trained[i] = probe::train_probe(store, split.train, tasks[i].stream, tasks[i].stage, hyper,
                                    io.cfg.seed + static_cast<uint64_t>(tasks[i].seed_index));
  });

  {
    auto loss = out.create("loss_curves.csv");
    loss << csv_row({"stream", "stage", "seed", "epoch", "loss"});
    for (size_t i = 0; i < tasks.size(); ++i) {
      probe::save_probe(
          out.path(probe_file_name(tasks[i].stream, tasks[i].stage, tasks[i].seed_index)),
          trained[i].params);
      for (size_t e = 0; e < trained[i].epoch_loss.size(); ++e)
        loss << csv_row({std::to_string(tasks[i].stream), probe::stage_name(tasks[i].stage),
                         std::to_string(tasks[i].seed_index), std::to_string(e + 1),
                         fmt(trained[i].epoch_loss[e])});
    }
  }
  {
    json sp;
    sp["model_hash"] = model.hash();
    sp["dataset_hash"] = dataset_hash;
    sp["train_frac"] = io.cfg.train_frac;
    sp["seed"] = io.cfg.seed;
    sp["probe_seeds"] = io.cfg.probe_seeds;
    sp["streams"] = streams;
    sp["train"] = split.train;
    sp["eval"] = split.eval;
    auto f = out.create("split.json");
    f << sp.dump(2) << "\n";
  }
  if (io.cfg.save_store) store.save(out.path("activations.bin"));

  json sj;
  sj["probes"] = tasks.size();
  sj["streams"] = streams;
  sj["train"] = split.train.size();
  sj["eval"] = split.eval.size();
  return sj;
}

json cmd_eval_probes(const CommandIo& io) {
  auto& out = out_dir(io);
  const auto model = load_model_arg(io, io.cfg.weights, "--weights", "weights");
  require_flag(io.cfg.probes, "--probes");

  const std::string split_path = (fs::path(io.cfg.probes) / "split.json").string();
  if (!fs::exists(split_path))
    fail(ErrorKind::Config, "'" + split_path + "' not found (run train-probes first)");
  const json sp = read_json_file(split_path);
  record_input(io, "probes", split_path, file_hash_hex(split_path));

  const auto want_model = sp.at("model_hash").get<std::string>();
  if (want_model != model.hash())
    fail(ErrorKind::Config,
         "probes were trained for model " + want_model + ", got " + model.hash());
  const auto records = load_records(io, /*apply_limit=*/false);
  const std::string dataset_hash = (*io.manifest)["inputs"]["dataset"]["fnv1a64"];
  if (sp.at("dataset_hash").get<std::string>() != dataset_hash)
    fail(ErrorKind::Config, "probes were trained on a different dataset (hash " +
                                sp.at("dataset_hash").get<std::string>() + ", got " +
                                dataset_hash + ")");

  const auto streams = sp.at("streams").get<std::vector<int>>();
  const int probe_seeds = sp.at("probe_seeds").get<int>();
  const auto train_ids = sp.at("train").get<std::vector<std::string>>();
  const auto eval_ids = sp.at("eval").get<std::vector<std::string>>();

  probe::ActivationStore store;
  const std::string store_path = (fs::path(io.cfg.probes) / "activations.bin").string();
  if (fs::exists(store_path)) {
    store = probe::ActivationStore::load(store_path, model.hash());
    record_input(io, "activations", store_path, file_hash_hex(store_path));
  } else {
    store = probe::cache_activations(model, records, streams);
  }

  const auto acc_summary = [](const std::vector<double>& accs, int n_eval) {
    if (accs.size() >= 2) {
      const auto s = probe::summarize_seed_accs(accs, n_eval);
      return std::pair<double, double>{s.mean, 2.0 * s.sigma_total};
    }
    const double mean = accs.at(0);
    return std::pair<double, double>{
        mean, 2.0 * std::sqrt(std::max(0.0, mean * (1.0 - mean)) / n_eval)};
  };

  json stream_list = json::array();
  double best_pipeline = -1.0;
  int best_stream = -1;
  {
    auto table = out.create("probe_accuracy.csv");
    table << csv_row({"stream", "n_eval", "seeds", "target_mean", "target_two_sigma",
                      "source_mean", "source_two_sigma", "pipeline_mean",
                      "pipeline_two_sigma"});
    for (const int s : streams) {
      std::vector<double> target_accs, source_accs, pipeline_accs;
      int n_eval = 0;
      for (int k = 0; k < probe_seeds; ++k) {
        const auto target = probe::load_probe(
            (fs::path(io.cfg.probes) / probe_file_name(s, probe::Stage::Target, k)).string());
        const auto source = probe::load_probe(
            (fs::path(io.cfg.probes) / probe_file_name(s, probe::Stage::Source, k)).string());
        const auto ev = probe::evaluate_probes(target, source, store, train_ids, eval_ids);
        n_eval = ev.n;
        target_accs.push_back(ev.target_acc);
        source_accs.push_back(ev.source_acc);
        pipeline_accs.push_back(ev.pipeline_acc);
      }
      const auto [t_mean, t_two] = acc_summary(target_accs, n_eval);
      const auto [s_mean, s_two] = acc_summary(source_accs, n_eval);
      const auto [p_mean, p_two] = acc_summary(pipeline_accs, n_eval);
      table << csv_row({std::to_string(s), std::to_string(n_eval),
                        std::to_string(probe_seeds), fmt(t_mean), fmt(t_two), fmt(s_mean),
                        fmt(s_two), fmt(p_mean), fmt(p_two)});
      stream_list.push_back(
          {{"stream", s}, {"target", t_mean}, {"source", s_mean}, {"pipeline", p_mean}});
      if (p_mean > best_pipeline) {
        best_pipeline = p_mean;
        best_stream = s;
      }
    }
  }

  json sj;
  sj["streams"] = stream_list;
  sj["best_stream"] = best_stream;
  sj["best_pipeline_acc"] = best_pipeline;
  return sj;
}

json cmd_subsplit_report(const CommandIo& io) {
  auto& out = out_dir(io);
  require_flag(io.cfg.results, "--results");
  (*io.manifest)["inputs"]["results"] = {{"path", io.cfg.results}};
  const auto records = load_records(io, /*apply_limit=*/false);

  std::map<std::string, data::Subsplit> tags;
  for (const auto& r : records) tags[r.id] = r.subsplit;
  const auto subsplit_of_id = [&](const std::string& id, const std::string& file) {
    const auto it = tags.find(id);
    if (it == tags.end())
      fail(ErrorKind::Config,
           file + " references puzzle '" + id + "' missing from the dataset");
    return it->second;
  };
  const std::array<std::string, 3> groups = {"all", "same_target", "different_target"};
  const auto in_group = [](data::Subsplit s, const std::string& g) {
    return g == "all" || data::subsplit_name(s) == g;
  };

  std::vector<std::string> found;
  const auto input_path = [&](const char* name) {
    return (fs::path(io.cfg.results) / name).string();
  };

  if (fs::exists(input_path("residual_effects.jsonl"))) {
    found.emplace_back("residual_effects.jsonl");
    std::vector<ResidualRow> rows;
    for (const auto& j : read_jsonl(input_path("residual_effects.jsonl")))
      rows.push_back({j.at("puzzle").get<std::string>(), j.at("stream").get<int>(),
                      j.at("class").get<std::string>(), j.at("delta").get<double>()});
    auto table = out.create("subsplit_residual_summary.csv");
    table << csv_row({"group", "stream", "class", "n", "mean", "two_sem"});
    for (const auto& g : groups) {
      std::vector<ResidualRow> sel;
      for (const auto& r : rows)
        if (in_group(subsplit_of_id(r.puzzle, "residual_effects.jsonl"), g)) sel.push_back(r);
      for (const auto& [stream, cls, agg] : residual_aggregates(sel))
        table << csv_row({g, std::to_string(stream), cls, std::to_string(agg.n), fmt(agg.mean),
                          fmt(agg.two_sem)});
    }
  }
  if (fs::exists(input_path("head_effects.jsonl"))) {
    found.emplace_back("head_effects.jsonl");
    std::vector<HeadRow> rows;  // layer/head stay 1-based as stored
    for (const auto& j : read_jsonl(input_path("head_effects.jsonl")))
      rows.push_back({j.at("puzzle").get<std::string>(), j.at("layer").get<int>(),
                      j.at("head").get<int>(), j.at("delta").get<double>()});
    auto table = out.create("subsplit_head_summary.csv");
    table << csv_row({"group", "layer", "head", "n", "mean", "two_sem"});
    for (const auto& g : groups) {
      std::vector<HeadRow> sel;
      for (const auto& r : rows)
        if (in_group(subsplit_of_id(r.puzzle, "head_effects.jsonl"), g)) sel.push_back(r);
      for (const auto& [layer, head, agg] : head_aggregates(sel))
        table << csv_row({g, std::to_string(layer), std::to_string(head),
                          std::to_string(agg.n), fmt(agg.mean), fmt(agg.two_sem)});
    }
  }
  if (fs::exists(input_path("entry_effects.jsonl"))) {
    found.emplace_back("entry_effects.jsonl");
    std::vector<EntryRow> rows;
    for (const auto& j : read_jsonl(input_path("entry_effects.jsonl")))
      rows.push_back({j.at("puzzle").get<std::string>(), j.at("skipped").get<bool>(),
                      j.at("single_delta").get<double>(),
                      j.at("complement_delta").get<double>(),
                      j.at("entry_is_global_max").get<bool>(),
                      j.at("single_changes_top_move").get<bool>(),
                      j.at("complement_changes_top_move").get<bool>()});
    auto table = out.create("subsplit_entry_summary.csv");
    table << csv_row({"group", "metric", "value"});
    for (const auto& g : groups) {
      std::vector<EntryRow> sel;
      for (const auto& r : rows)
        if (in_group(subsplit_of_id(r.puzzle, "entry_effects.jsonl"), g)) sel.push_back(r);
      for (const auto& [metric, value] : entry_metrics(sel))
        table << csv_row({g, metric, value});
    }
  }
  if (fs::exists(input_path("piece_ablation.jsonl"))) {
    found.emplace_back("piece_ablation.jsonl");
    std::vector<PieceRow> rows;
    for (const auto& j : read_jsonl(input_path("piece_ablation.jsonl"))) {
      PieceRow r;
      r.puzzle = j.at("puzzle").get<std::string>();
      r.eligible = j.at("eligible").get<bool>();
      if (r.eligible) {
        r.matched = j.at("matched_delta").get<double>();
        r.other = j.at("other_kind_delta").get<double>();
        r.random = j.at("random_square_delta").get<double>();
        r.other_heads = j.at("other_heads").get<int>();
      }
      rows.push_back(std::move(r));
    }
    auto table = out.create("subsplit_piece_summary.csv");
    table << csv_row({"group", "metric", "value"});
    for (const auto& g : groups) {
      std::vector<PieceRow> sel;
      for (const auto& r : rows)
        if (in_group(subsplit_of_id(r.puzzle, "piece_ablation.jsonl"), g)) sel.push_back(r);
      for (const auto& [metric, value] : piece_metrics(sel))
        table << csv_row({g, metric, value});
    }
  }
  if (found.empty())
    fail(ErrorKind::Config, "no recognized effect files under '" + io.cfg.results +
                                "' (expected residual_effects.jsonl, head_effects.jsonl, "
                                "entry_effects.jsonl, or piece_ablation.jsonl)");

  json counts;
  {
    auto table = out.create("subsplit_counts.csv");
    table << csv_row({"group", "count"});
    for (const auto& g : groups) {
      size_t n = 0;
      for (const auto& r : records) n += in_group(r.subsplit, g) ? 1 : 0;
      table << csv_row({g, std::to_string(n)});
      counts[g] = n;
    }
  }

  json sj;
  sj["reports"] = found;
  sj["counts"] = counts;
  return sj;
}

json cmd_selfcheck(const CommandIo& io) {
  const auto checks = selfcheck(io.cfg.seed);
  int failed = 0;
  json list = json::array();
  for (const auto& c : checks) {
    failed += c.pass ? 0 : 1;
    list.push_back({{"name", c.name}, {"pass", c.pass}, {"detail", c.detail}});
  }
  if (io.out) {
    auto table = io.out->create("selfcheck.csv");
    table << csv_row({"name", "pass", "detail"});
    for (const auto& c : checks)
      table << csv_row({c.name, c.pass ? "pass" : "fail", c.detail});
  }
  json sj;
  sj["checks"] = list;
  sj["passed"] = static_cast<int>(checks.size()) - failed;
  sj["failed"] = failed;
  return sj;
}

json cmd_make_fixture(const CommandIo& io) {
  auto& out = out_dir(io);
  nn::PlantDescriptor plant;
  const auto model = nn::build_synthetic_model(nn::toy_spec(), plant, io.cfg.seed);
  model.save(out.path("planted.bin"));
  const auto weak = nn::random_init_like(model, io.cfg.seed + 1);
  weak.save(out.path("random.bin"));

  json fx;
  fx["planted"] = {{"path", "planted.bin"}, {"hash", model.hash()}};
  fx["weak"] = {{"path", "random.bin"}, {"hash", weak.hash()}};
  fx["clean_fen"] = plant.clean_fen;
  fx["corrupted_fen"] = plant.corrupted_fen;
  fx["best_move"] = plant.best_move.uci();
  fx["fallback_move"] = plant.fallback_move.uci();
  fx["carrier"] = plant.carrier.name();
  fx["readout"] = plant.readout.name();
  fx["sink"] = plant.sink.name();
  fx["copy_head"] = {{"layer", plant.layer + 1}, {"head", plant.head + 1}};
  fx["knight_head"] = {{"layer", plant.knight_layer + 1}, {"head", plant.knight_head + 1}};
  {
    auto f = out.create("fixture.json");
    f << fx.dump(2) << "\n";
  }

  json sj;
  sj["planted_hash"] = model.hash();
  sj["weak_hash"] = weak.hash();
  return sj;
}

}  // namespace

const std::vector<std::string>& command_names() {
  static const std::vector<std::string> names = {
      "filter-puzzles", "find-corruptions",   "patch-residual", "patch-heads",
      "ablate-l12h12",  "detect-heads",       "ablate-piece-heads", "train-probes",
      "eval-probes",    "subsplit-report",    "selfcheck",      "make-fixture"};
  return names;
}

RunResult run_command(const std::string& command, const RunConfig& cfg) {
  const auto& names = command_names();
  if (std::find(names.begin(), names.end(), command) == names.end()) {
    std::string all;
    for (const auto& n : names) all += (all.empty() ? "" : ", ") + n;
    fail(ErrorKind::Config, "unknown command '" + command + "' (expected one of " + all + ")");
  }

  json manifest;
  manifest["command"] = command;
  manifest["config"] = json::parse(cfg.to_json());
  manifest["config_hash"] = fnv1a64_hex(cfg.to_json());
  manifest["seed"] = cfg.seed;
  manifest["inputs"] = json::object();

  std::optional<OutputDir> out;
  if (!cfg.out.empty()) out.emplace(cfg.out);
  if (!out && command != "selfcheck") fail(ErrorKind::Config, "this command requires --out");

  const CommandIo io{cfg, out ? &*out : nullptr, &manifest};
  json summary;
  int exit_code = 0;
  if (command == "filter-puzzles") {
    summary = cmd_filter_puzzles(io);
  } else if (command == "find-corruptions") {
    summary = cmd_find_corruptions(io);
  } else if (command == "patch-residual") {
    summary = cmd_patch_residual(io);
  } else if (command == "patch-heads") {
    summary = cmd_patch_heads(io);
  } else if (command == "ablate-l12h12") {
    summary = cmd_entry_ablation(io);
  } else if (command == "detect-heads") {
    summary = cmd_detect_heads(io);
  } else if (command == "ablate-piece-heads") {
    summary = cmd_ablate_piece_heads(io);
  } else if (command == "train-probes") {
    summary = cmd_train_probes(io);
  } else if (command == "eval-probes") {
    summary = cmd_eval_probes(io);
  } else if (command == "subsplit-report") {
    summary = cmd_subsplit_report(io);
  } else if (command == "selfcheck") {
    summary = cmd_selfcheck(io);
    exit_code = summary["failed"].get<int>() > 0 ? 1 : 0;
  } else {
    summary = cmd_make_fixture(io);
  }

  summary["command"] = command;
  if (out) {
    summary["out"] = out->root();
    auto mf = out->create("manifest.json");
    mf << manifest.dump(2) << "\n";
    out->commit();
  }
  return {exit_code, summary.dump(2)};
}

}  // namespace ply::run
