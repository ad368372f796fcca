#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <algorithm>
#include <fstream>
#include <set>
#include <string>
#include <vector>

#include "chess/board.hpp"
#include "common/error.hpp"
#include "data/puzzles.hpp"
#include "nn/synthetic.hpp"
#include "temp_dir.hpp"

using namespace ply;
using chess::Board;
using chess::Move;
using data::PuzzleRecord;
using testutil::TempDir;

namespace {

std::vector<Move> uci_pv(std::initializer_list<const char*> ucis) {
  std::vector<Move> pv;
  for (const char* u : ucis) pv.push_back(Move::from_uci(u));
  return pv;
}

void write_file(const std::string& path, const std::string& text) {
  std::ofstream f(path);
  f << text;
}

// The Italian-game opening line: legal from the start position.
constexpr const char* kStartFen = "rnbqkbnr/pppppppp/8/8/8/8/PPPPPPPP/RNBQKBNR w KQkq - 0 1";

}  // namespace

TEST_CASE("make_record derives squares and the subsplit tag") {
  // Black to move: player-frame squares are mirrored, absolute are not.
  const std::string fen = "rnbqkbnr/pppppppp/8/8/4P3/8/PPPP1PPP/RNBQKBNR b KQkq - 0 1";
  const auto rec = data::make_record("p1", fen, uci_pv({"e7e5", "g1f3", "b8c6"}), 1500);
  REQUIRE(rec.squares.size() == 3);
  CHECK(rec.squares[0].s_abs.name() == "e7");
  CHECK(rec.squares[0].t_abs.name() == "e5");
  CHECK(rec.squares[0].s_player.name() == "e2");  // mirrored for black
  CHECK(rec.squares[0].t_player.name() == "e4");
  CHECK(rec.squares[1].s_abs.name() == "g1");
  CHECK(rec.squares[1].s_player.name() == "g1");  // white to move: identity frame
  CHECK(rec.subsplit == data::Subsplit::DifferentTarget);

  // First two PV moves landing on one square tag same_target (an exchange).
  const std::string cap_fen = "k2r4/8/8/3p4/4P3/8/8/K2R4 w - - 0 1";
  const auto same =
      data::make_record("p2", cap_fen, uci_pv({"e4d5", "d8d5", "d1d5"}), 1000);
  CHECK(same.subsplit == data::Subsplit::SameTarget);
  CHECK(data::subsplit_of(same) == data::Subsplit::SameTarget);
  CHECK(data::subsplit_name(data::Subsplit::SameTarget) == "same_target");
  CHECK(data::subsplit_from_name("different_target") == data::Subsplit::DifferentTarget);
  CHECK_THROWS_AS(data::subsplit_from_name("nonsense"), Error);

  CHECK_THROWS_AS(data::make_record("p3", fen, uci_pv({"e7e5", "g1f3"}), 1), Error);  // short
  CHECK_THROWS_AS(data::make_record("p4", fen, uci_pv({"e7e6", "a1a3", "a7a5"}), 1),
                  Error);  // illegal continuation (the a1 rook is blocked)
  CHECK_THROWS_AS(data::make_record("p5", "garbage", uci_pv({"e7e5", "g1f3", "b8c6"}), 1),
                  Error);
}

TEST_CASE("csv ingest keeps good rows and counts the bad by reason") {
  TempDir dir("ingest");
  const auto csv = dir.path("puzzles.csv");
  write_file(csv,
             "PuzzleId,FEN,Moves,Rating,Themes\n"
             // good: white mates in the Scholar pattern, 3-ply pv
             "ok1," +
                 std::string(kStartFen) +
                 ",e2e4 e7e5 g1f3,1500,opening\n"
                 // bad FEN
                 "bad1,not-a-fen,e2e4 e7e5 g1f3,1500,x\n"
                 // bad UCI token
                 "bad2," +
                 std::string(kStartFen) +
                 ",e2e4 zz9 g1f3,1500,x\n"
                 // illegal pv (second move by the wrong side)
                 "bad3," +
                 std::string(kStartFen) +
                 ",e2e4 d2d4 g8f6,1500,x\n"
                 // too short
                 "bad4," +
                 std::string(kStartFen) +
                 ",e2e4 e7e5,1500,x\n"
                 // rating not a number
                 "bad5," +
                 std::string(kStartFen) +
                 ",e2e4 e7e5 g1f3,abc,x\n"
                 // too few fields
                 "bad6,onlytwo\n");

  data::IngestStats stats;
  const auto recs = data::ingest_lichess_csv(csv, {}, &stats);
  REQUIRE(recs.size() == 1);
  CHECK(recs[0].id == "ok1");
  CHECK(recs[0].rating == 1500);
  CHECK(recs[0].pv.size() == 3);
  CHECK(stats.rows == 7);
  CHECK(stats.kept == 1);
  CHECK(stats.skipped_total() == 6);
  CHECK(stats.skipped.at("bad-fen") == 1);
  CHECK(stats.skipped.at("bad-uci") == 1);
  CHECK(stats.skipped.at("illegal-pv") == 1);
  CHECK(stats.skipped.at("short-pv") == 1);
  CHECK(stats.skipped.at("bad-rating") == 1);
  CHECK(stats.skipped.at("bad-field-count") == 1);
}

TEST_CASE("csv ingest locates columns by header name") {
  TempDir dir("ingest-cols");
  const auto csv = dir.path("shuffled.csv");
  write_file(csv, "Rating,Moves,PuzzleId,FEN\n1800,e2e4 e7e5 g1f3,swapped," +
                      std::string(kStartFen) + "\n");
  const auto recs = data::ingest_lichess_csv(csv, {});
  REQUIRE(recs.size() == 1);
  CHECK(recs[0].id == "swapped");
  CHECK(recs[0].rating == 1800);

  write_file(dir.path("missing.csv"), "PuzzleId,FEN,Rating\nid,fen,1\n");
  CHECK_THROWS_AS(data::ingest_lichess_csv(dir.path("missing.csv"), {}), Error);
  CHECK_THROWS_AS(data::ingest_lichess_csv(dir.path("absent.csv"), {}), Error);
}

TEST_CASE("the setup move is applied and dropped when requested") {
  TempDir dir("ingest-setup");
  const auto csv = dir.path("setup.csv");
  // Lichess style: first move leads INTO the puzzle (here white blunders with
  // f2f3), and the recorded solution starts with black's reply.
  write_file(csv, "PuzzleId,FEN,Moves,Rating\nsetup1," + std::string(kStartFen) +
                      ",f2f3 e7e5 g2g4 d8h4,1400\n");

  data::IngestOptions opt;
  opt.apply_setup_move = true;
  const auto recs = data::ingest_lichess_csv(csv, opt);
  REQUIRE(recs.size() == 1);
  CHECK(recs[0].pv.size() == 3);
  CHECK(recs[0].pv[0].uci() == "e7e5");
  CHECK(Board::from_fen(recs[0].fen).side_to_move() == chess::Color::Black);

  // Without the option the same row is a 4-ply white-to-move puzzle.
  const auto raw = data::ingest_lichess_csv(csv, {});
  REQUIRE(raw.size() == 1);
  CHECK(raw[0].pv.size() == 4);
  CHECK(raw[0].fen == kStartFen);
}

TEST_CASE("dataset JSONL round trips exactly and rejects other versions") {
  nn::PlantDescriptor plant;
  (void)nn::build_synthetic_model(nn::toy_spec(), plant, 2);

  std::vector<PuzzleRecord> recs;
  recs.push_back(data::make_record("b", kStartFen, uci_pv({"e2e4", "e7e5", "g1f3"}), 1200));
  recs.push_back(data::make_record("a", kStartFen, uci_pv({"d2d4", "d7d5", "c2c4"}), 1300));
  // One record with a stored corruption, exercising the optional field.
  auto with_corruption = data::make_record("c", plant.clean_fen,
                                           uci_pv({"h1h4", "a8a7", "h4h8"}), 999);
  auto cands = corrupt::generate_candidates(Board::from_fen(plant.clean_fen));
  with_corruption.corruption = cands.front();
  recs.push_back(with_corruption);

  TempDir dir("dataset");
  const auto file = dir.path("puzzles.jsonl");
  data::save_dataset(file, recs);
  const auto loaded = data::load_dataset(file);
  REQUIRE(loaded.size() == 3);
  // Saved in id order regardless of input order.
  CHECK(loaded[0].id == "a");
  CHECK(loaded[1].id == "b");
  CHECK(loaded[2].id == "c");
  std::sort(recs.begin(), recs.end(),
            [](const PuzzleRecord& x, const PuzzleRecord& y) { return x.id < y.id; });
  CHECK(loaded == recs);

  // A tampered version tag is rejected.
  std::ifstream in(file);
  std::string first_line, rest, line;
  std::getline(in, first_line);
  while (std::getline(in, line)) rest += line + "\n";
  const auto bumped = dir.path("bumped.jsonl");
  std::string tampered = first_line;
  const auto pos = tampered.find("\"version\":");
  REQUIRE(pos != std::string::npos);
  tampered.insert(pos + 10, "9");
  write_file(bumped, tampered + "\n" + rest);
  CHECK_THROWS_AS(data::load_dataset(bumped), Error);

  CHECK_THROWS_AS(data::load_dataset(dir.path("absent.jsonl")), Error);
}

TEST_CASE("train/eval split is a seeded function of the id set") {
  std::vector<PuzzleRecord> recs;
  for (int i = 0; i < 100; ++i)
    recs.push_back(data::make_record("id" + std::to_string(i), kStartFen,
                                     uci_pv({"e2e4", "e7e5", "g1f3"}), i));

  const auto s1 = data::train_eval_split(recs, 0.7, 9);
  const auto s2 = data::train_eval_split(recs, 0.7, 9);
  CHECK(s1.train == s2.train);
  CHECK(s1.eval == s2.eval);
  CHECK(s1.train.size() == 70);
  CHECK(s1.eval.size() == 30);

  // Input order must not matter.
  std::reverse(recs.begin(), recs.end());
  const auto s3 = data::train_eval_split(recs, 0.7, 9);
  CHECK(s3.train == s1.train);

  // Disjoint and complete.
  std::set<std::string> all(s1.train.begin(), s1.train.end());
  all.insert(s1.eval.begin(), s1.eval.end());
  CHECK(all.size() == 100);

  const auto s4 = data::train_eval_split(recs, 0.7, 10);
  CHECK(s4.train != s1.train);  // different seed shuffles differently

  CHECK_THROWS_AS(data::train_eval_split(recs, 1.5, 0), Error);
}

TEST_CASE("filter_puzzle walks the PV and names the first failed condition") {
  nn::PlantDescriptor plant;
  const auto strong = nn::build_synthetic_model(nn::toy_spec(), plant, 3);
  const auto weak = nn::random_init_like(strong, 77);
  const auto rec = data::make_record("f", plant.clean_fen,
                                     uci_pv({"h1h4", "a8a7", "h4h8"}), 1);

  // Degenerate thresholds accept everything.
  data::PuzzleFilterConfig keep_all;
  keep_all.weak_max = 1.1;
  keep_all.strong_min = 0.0;
  keep_all.opponent_min = 0.0;
  const auto kept = data::filter_puzzle(strong, weak, rec, keep_all);
  CHECK(kept.keep);
  CHECK(kept.reason.empty());
  CHECK(kept.move_index == 0);

  // An unreachable strong threshold fails at the first player move.
  auto cfg = keep_all;
  cfg.strong_min = 1.01;
  const auto miss = data::filter_puzzle(strong, weak, rec, cfg);
  CHECK_FALSE(miss.keep);
  CHECK(miss.reason == "strong-too-weak");
  CHECK(miss.move_index == 1);

  // A zero weak ceiling fails the same move for the opposite reason, and it
  // is checked before the strong condition.
  cfg = keep_all;
  cfg.weak_max = -1.0;
  cfg.strong_min = 1.01;
  const auto obvious = data::filter_puzzle(strong, weak, rec, cfg);
  CHECK_FALSE(obvious.keep);
  CHECK(obvious.reason == "weak-too-strong");
  CHECK(obvious.move_index == 1);

  // An unreachable reply threshold fails at move 2 only.
  cfg = keep_all;
  cfg.opponent_min = 1.01;
  const auto unforced = data::filter_puzzle(strong, weak, rec, cfg);
  CHECK_FALSE(unforced.keep);
  CHECK(unforced.reason == "opponent-unforced");
  CHECK(unforced.move_index == 2);

  // On the planted board the strong model really does find the best move, so
  // realistic thresholds keep the puzzle whenever the weak model is blind.
  data::PuzzleFilterConfig realistic;  // defaults: 0.10 / 0.50 / 0.50
  realistic.opponent_min = 0.0;        // random weak model forces nothing
  const double weak_p1 =
      weak.move_distribution(chess::Board::from_fen(plant.clean_fen)).prob_of(rec.pv[0]);
  if (weak_p1 <= realistic.weak_max) {
    const auto d = data::filter_puzzle(strong, weak, rec, realistic);
    // Move 3 depends on untrained behaviour; only a move-1 verdict is pinned.
    if (!d.keep) CHECK(d.move_index > 1);
  }
}

TEST_CASE("make_patch_context assembles the intervention frame") {
  nn::PlantDescriptor plant;
  (void)nn::build_synthetic_model(nn::toy_spec(), plant, 4);
  auto rec = data::make_record("ctx", plant.clean_fen, uci_pv({"h1h4", "a8a7", "h4h8"}), 1);

  // Without a corruption the context cannot exist.
  CHECK_THROWS_AS(data::make_patch_context(rec), Error);

  corrupt::CorruptionCandidate cand;
  cand.mutation = corrupt::Mutation::from_description("remove_pawn " + plant.carrier.name());
  Board corrupted = Board::from_fen(plant.clean_fen);
  corrupted.clear_square(plant.carrier);
  cand.board = corrupted;
  rec.corruption = cand;

  const auto ctx = data::make_patch_context(rec);
  CHECK(ctx.puzzle_id == "ctx");
  CHECK(ctx.clean.fen() == plant.clean_fen);
  CHECK(ctx.corrupted.same_placement(corrupted));
  CHECK(ctx.best.uci() == "h1h4");
  REQUIRE(ctx.t1.has_value());
  REQUIRE(ctx.t3.has_value());
  CHECK(ctx.t1->name() == "h4");  // target of move 1
  CHECK(ctx.t3->name() == "h8");  // target of move 3
  CHECK(ctx.corrupted_squares == std::vector<chess::Square>{plant.carrier});

  // Special squares: endpoints of the first three PV moves plus corruption.
  const std::set<std::string> special = [&] {
    std::set<std::string> s;
    for (const auto& sq : ctx.special_squares) s.insert(sq.name());
    return s;
  }();
  for (const char* name : {"h1", "h4", "a8", "a7", "h8"})
    CHECK(special.count(name) == 1);
  CHECK(special.count(plant.carrier.name()) == 1);
}
