#include "data/puzzles.hpp"

#include <algorithm>
#include <fstream>
#include <set>
#include <sstream>

#include <json.hpp>

#include "common/error.hpp"
#include "common/rng.hpp"

namespace ply::data {

namespace {

using chess::Board;
using chess::Move;
using chess::Square;
using nlohmann::json;

constexpr const char* kDatasetFormat = "plyscope-puzzles";
constexpr int kDatasetVersion = 1;

std::vector<std::string> split_csv_line(const std::string& line) {
  std::vector<std::string> fields;
  std::string cur;
  bool quoted = false;
  for (size_t i = 0; i < line.size(); ++i) {
    const char ch = line[i];
    if (quoted) {
      if (ch == '"') {
        if (i + 1 < line.size() && line[i + 1] == '"') {
          cur += '"';
          ++i;
        } else {
          quoted = false;
        }
      } else {
        cur += ch;
      }
    } else if (ch == '"') {
      quoted = true;
    } else if (ch == ',') {
      fields.push_back(std::move(cur));
      cur.clear();
    } else if (ch != '\r') {
      cur += ch;
    }
  }
  fields.push_back(std::move(cur));
  return fields;
}

std::vector<std::string> split_ws(const std::string& text) {
  std::istringstream in(text);
  std::vector<std::string> out;
  for (std::string tok; in >> tok;) out.push_back(std::move(tok));
  return out;
}

}  // namespace

std::string subsplit_name(Subsplit s) {
  return s == Subsplit::SameTarget ? "same_target" : "different_target";
}

Subsplit subsplit_from_name(const std::string& name) {
  if (name == "same_target") return Subsplit::SameTarget;
  if (name == "different_target") return Subsplit::DifferentTarget;
  fail(ErrorKind::Parse, "unknown subsplit tag '" + name + "'");
}

PuzzleRecord make_record(std::string id, const std::string& fen, std::vector<Move> pv,
                         int rating) {
  if (pv.size() < 3)
    fail(ErrorKind::Parse,
         "puzzle '" + id + "' has a " + std::to_string(pv.size()) + "-move PV, need at least 3");
  PuzzleRecord rec;
  rec.id = std::move(id);
  rec.fen = fen;
  rec.pv = std::move(pv);
  rec.rating = rating;

  Board b = Board::from_fen(fen);
  rec.squares.reserve(rec.pv.size());
  for (const Move& m : rec.pv) {
    const Board pf = b.orient_to_player();
    const Move fm = pf.to_frame(m);
    rec.squares.push_back({fm.from, fm.to, m.from, m.to});
    b = b.apply_move(m);  // throws Illegal on a bad PV
  }
  rec.subsplit = rec.pv[0].to == rec.pv[1].to ? Subsplit::SameTarget : Subsplit::DifferentTarget;
  return rec;
}

uint64_t IngestStats::skipped_total() const {
  uint64_t n = 0;
  for (const auto& [reason, count] : skipped) n += count;
  return n;
}

std::vector<PuzzleRecord> ingest_lichess_csv(const std::string& path, const IngestOptions& opt,
                                             IngestStats* stats) {
  std::ifstream in(path);
  if (!in) fail(ErrorKind::Io, "cannot open puzzle CSV '" + path + "'");

  std::string line;
  if (!std::getline(in, line)) fail(ErrorKind::Parse, "puzzle CSV '" + path + "' is empty");
  const auto header = split_csv_line(line);
  const auto column = [&](const std::string& name) {
    const auto it = std::find(header.begin(), header.end(), name);
    if (it == header.end())
      fail(ErrorKind::Parse, "puzzle CSV header is missing column '" + name + "'");
    return static_cast<size_t>(it - header.begin());
  };
  const size_t col_id = column("PuzzleId");
  const size_t col_fen = column("FEN");
  const size_t col_moves = column("Moves");
  const size_t col_rating = column("Rating");
  const size_t need = std::max({col_id, col_fen, col_moves, col_rating}) + 1;

  IngestStats local;
  IngestStats& st = stats ? *stats : local;
  std::vector<PuzzleRecord> out;

  const auto skip = [&](const std::string& reason) { ++st.skipped[reason]; };

  while (std::getline(in, line)) {
    if (line.empty() || line == "\r") continue;
    ++st.rows;
    const auto fields = split_csv_line(line);
    if (fields.size() < need) {
      skip("bad-field-count");
      continue;
    }

    int rating = 0;
    try {
      rating = std::stoi(fields[col_rating]);
    } catch (const std::exception&) {
      skip("bad-rating");
      continue;
    }

    std::vector<Move> pv;
    try {
      for (const auto& tok : split_ws(fields[col_moves])) pv.push_back(Move::from_uci(tok));
    } catch (const Error&) {
      skip("bad-uci");
      continue;
    }

    Board start;
    try {
      start = Board::from_fen(fields[col_fen]);
    } catch (const Error&) {
      skip("bad-fen");
      continue;
    }

    if (opt.apply_setup_move) {
      if (pv.empty()) {
        skip("short-pv");
        continue;
      }
      try {
        start = start.apply_move(pv.front());
      } catch (const Error&) {
        skip("illegal-pv");
        continue;
      }
      pv.erase(pv.begin());
    }

    if (pv.size() < std::max<size_t>(opt.min_pv, 3)) {
      skip("short-pv");
      continue;
    }

    try {
      out.push_back(make_record(fields[col_id], start.fen(), std::move(pv), rating));
    } catch (const Error&) {
      skip("illegal-pv");
      continue;
    }
    ++st.kept;
  }
  return out;
}

FilterDecision filter_puzzle(const nn::Model& strong, const nn::Model& weak,
                             const PuzzleRecord& rec, const PuzzleFilterConfig& cfg) {
  Board b = Board::from_fen(rec.fen);
  for (size_t j = 0; j < rec.pv.size(); ++j) {
    const int idx = static_cast<int>(j) + 1;
    const Move& m = rec.pv[j];
    if (j % 2 == 0) {  // the player's move
      if (weak.move_distribution(b).prob_of(m) > cfg.weak_max)
        return {false, "weak-too-strong", idx};
      if (strong.move_distribution(b).prob_of(m) < cfg.strong_min)
        return {false, "strong-too-weak", idx};
    } else if (idx == 2) {  // the opponent's reply must be forced for the weak model
      if (weak.move_distribution(b).prob_of(m) < cfg.opponent_min)
        return {false, "opponent-unforced", idx};
    }
    b = b.apply_move(m);
  }
  return {true, "", 0};
}

Subsplit subsplit_of(const PuzzleRecord& rec) {
  if (rec.pv.size() < 2) fail(ErrorKind::Config, "subsplit needs a PV of at least 2 moves");
  return rec.pv[0].to == rec.pv[1].to ? Subsplit::SameTarget : Subsplit::DifferentTarget;
}

void save_dataset(const std::string& path, std::vector<PuzzleRecord> records) {
  std::sort(records.begin(), records.end(),
            [](const PuzzleRecord& a, const PuzzleRecord& b) { return a.id < b.id; });
  std::ofstream out(path, std::ios::trunc);
  if (!out) fail(ErrorKind::Io, "cannot write dataset '" + path + "'");

  json header = {{"format", kDatasetFormat},
                 {"version", kDatasetVersion},
                 {"count", records.size()}};
  out << header.dump() << "\n";

  for (const PuzzleRecord& rec : records) {
    json pv = json::array();
    for (const Move& m : rec.pv) pv.push_back(m.uci());
    json row = {{"id", rec.id}, {"fen", rec.fen}, {"rating", rec.rating}, {"pv", pv}};
    if (rec.corruption) {
      const auto& c = *rec.corruption;
      row["corruption"] = {{"fen", c.board.fen()},
                           {"mutation", c.mutation.describe()},
                           {"strong_best_prob", c.strong_best_prob},
                           {"weak_logodds_drop", c.weak_logodds_drop},
                           {"value_gain", c.value_gain},
                           {"jsd", c.jsd}};
    }
    out << row.dump() << "\n";
  }
  if (!out) fail(ErrorKind::Io, "failed writing dataset '" + path + "'");
}

std::vector<PuzzleRecord> load_dataset(const std::string& path) {
  std::ifstream in(path);
  if (!in) fail(ErrorKind::Io, "cannot open dataset '" + path + "'");

  std::string line;
  if (!std::getline(in, line)) fail(ErrorKind::Parse, "dataset '" + path + "' is empty");
  json header;
  try {
    header = json::parse(line);
  } catch (const json::exception& e) {
    fail(ErrorKind::Parse, std::string("dataset header is not valid JSON: ") + e.what());
  }
  if (header.value("format", "") != kDatasetFormat ||
      header.value("version", -1) != kDatasetVersion)
    fail(ErrorKind::Parse, "dataset '" + path + "' has an unsupported format/version tag");

  std::vector<PuzzleRecord> out;
  size_t line_no = 1;
  while (std::getline(in, line)) {
    ++line_no;
    if (line.empty()) continue;
    json row;
    try {
      row = json::parse(line);
    } catch (const json::exception& e) {
      fail(ErrorKind::Parse,
           "dataset line " + std::to_string(line_no) + " is not valid JSON: " + e.what());
    }
    std::vector<Move> pv;
    for (const auto& u : row.at("pv")) pv.push_back(Move::from_uci(u.get<std::string>()));
    PuzzleRecord rec = make_record(row.at("id").get<std::string>(),
                                   row.at("fen").get<std::string>(), std::move(pv),
                                   row.at("rating").get<int>());
    if (row.contains("corruption")) {
      const auto& c = row.at("corruption");
      corrupt::CorruptionCandidate cand;
      cand.board = Board::from_fen(c.at("fen").get<std::string>());
      cand.board.validate();
      cand.mutation = corrupt::Mutation::from_description(c.at("mutation").get<std::string>());
      cand.strong_best_prob = c.at("strong_best_prob").get<double>();
      cand.weak_logodds_drop = c.at("weak_logodds_drop").get<double>();
      cand.value_gain = c.at("value_gain").get<double>();
      cand.jsd = c.at("jsd").get<double>();
      rec.corruption = std::move(cand);
    }
    out.push_back(std::move(rec));
  }

  const size_t expect = header.value("count", out.size());
  if (out.size() != expect)
    fail(ErrorKind::Parse, "dataset '" + path + "' has " + std::to_string(out.size()) +
                               " records, header says " + std::to_string(expect));
  return out;
}

SplitIds train_eval_split(const std::vector<PuzzleRecord>& records, double train_frac,
                          uint64_t seed) {
  if (train_frac < 0.0 || train_frac > 1.0)
    fail(ErrorKind::Config, "train fraction must lie in [0,1]");
  std::vector<std::string> ids;
  ids.reserve(records.size());
  for (const auto& r : records) ids.push_back(r.id);
  std::sort(ids.begin(), ids.end());
  Rng rng(seed);
  for (size_t i = ids.size(); i > 1; --i)
    std::swap(ids[i - 1], ids[static_cast<size_t>(rng.uniform_int(static_cast<int>(i)))]);
  const size_t n_train = static_cast<size_t>(train_frac * static_cast<double>(ids.size()) + 0.5);
  SplitIds split;
  split.train.assign(ids.begin(), ids.begin() + static_cast<long>(n_train));
  split.eval.assign(ids.begin() + static_cast<long>(n_train), ids.end());
  return split;
}

patch::PatchContext make_patch_context(const PuzzleRecord& rec) {
  if (!rec.corruption)
    fail(ErrorKind::Config, "puzzle '" + rec.id + "' has no stored corruption");
  patch::PatchContext ctx;
  ctx.puzzle_id = rec.id;
  ctx.clean = Board::from_fen(rec.fen);
  ctx.corrupted = rec.corruption->board;
  ctx.best = rec.pv[0];
  ctx.t1 = rec.squares[0].t_abs;
  ctx.t3 = rec.squares[2].t_abs;
  ctx.corrupted_squares = rec.corruption->mutation.touched();

  std::set<int> special;
  for (int j = 0; j < 3; ++j) {
    special.insert(rec.squares[j].s_abs.index());
    special.insert(rec.squares[j].t_abs.index());
  }
  for (const Square sq : ctx.corrupted_squares) special.insert(sq.index());
  for (const int idx : special) ctx.special_squares.push_back(Square(idx));
  return ctx;
}

}  // namespace ply::data
