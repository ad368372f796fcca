#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <algorithm>
#include <cmath>
#include <map>
#include <set>
#include <string>
#include <vector>

#include "chess/board.hpp"
#include "chess/encode.hpp"
#include "common/error.hpp"
#include "corrupt/corruption.hpp"
#include "nn/model.hpp"
#include "nn/synthetic.hpp"

using namespace ply;
using chess::Board;
using chess::Color;
using chess::PieceKind;
using chess::Square;
using corrupt::CorruptionCandidate;
using corrupt::Mutation;

namespace {

// Brute-force re-enumeration of the mutation space with plain loops over the
// public board API; the production generator uses bitboard iteration.
std::set<std::string> brute_force_candidates(const Board& clean) {
  std::set<std::string> out;
  const auto try_mutation = [&](const Mutation& m, Board b) {
    b.set_en_passant(std::nullopt);
    b.normalize_castling();
    try {
      b.validate();
    } catch (const Error&) {
      return;
    }
    out.insert(m.describe() + "|" + b.fen());
  };

  for (int sq = 0; sq < 64; ++sq) {
    const Square s(sq);
    const auto piece = clean.piece_at(s);
    // Add a pawn on an empty square of ranks 2..7.
    if (!piece && s.rank() >= 1 && s.rank() <= 6) {
      for (Color c : {Color::White, Color::Black}) {
        Board b = clean;
        b.set_piece(s, c, PieceKind::Pawn);
        try_mutation({Mutation::Kind::AddPawn, c, s, Square(0)}, b);
      }
    }
    if (!piece) continue;
    // Remove a pawn.
    if (piece->second == PieceKind::Pawn) {
      Board b = clean;
      b.clear_square(s);
      try_mutation({Mutation::Kind::RemovePawn, piece->first, s, Square(0)}, b);
    }
    // Move a non-pawn piece to any empty square.
    if (piece->second != PieceKind::Pawn) {
      for (int to = 0; to < 64; ++to) {
        if (clean.piece_at(Square(to))) continue;
        Board b = clean;
        b.clear_square(s);
        b.set_piece(Square(to), piece->first, piece->second);
        try_mutation({Mutation::Kind::MovePiece, piece->first, s, Square(to)}, b);
      }
    }
  }
  return out;
}

std::set<std::string> candidate_keys(const std::vector<CorruptionCandidate>& cands) {
  std::set<std::string> out;
  for (const auto& c : cands) out.insert(c.mutation.describe() + "|" + c.board.fen());
  return out;
}

nn::MoveDist dist_of(std::vector<std::pair<std::string, double>> entries) {
  nn::MoveDist d;
  for (auto& [uci, p] : entries) {
    d.moves.push_back(chess::Move::from_uci(uci));
    d.probs.push_back(p);
  }
  return d;
}

double value_score(const nn::Model& m, const Board& b) {
  const Board pf = b.orient_to_player();
  const auto planes = chess::encode_input(pf, m.spec().layout);
  return m.forward(planes, {}, nn::TraceLevel::None).value.score();
}

}  // namespace

TEST_CASE("candidate generation matches the brute-force enumeration") {
  nn::PlantDescriptor plant;
  (void)nn::build_synthetic_model(nn::toy_spec(), plant, 1);
  for (const std::string fen :
       {std::string("rnbqkbnr/pppppppp/8/8/8/8/PPPPPPPP/RNBQKBNR w KQkq - 0 1"),
        plant.clean_fen,
        std::string("r1bqk2r/ppp2ppp/2np1n2/2b1p3/2B1P3/2NP1N2/PPP2PPP/R1BQK2R w KQkq - 0 6"),
        std::string("8/2p5/3p4/KP5r/1R3p1k/8/4P1P1/8 w - - 0 1")}) {
    const Board clean = Board::from_fen(fen);
    const auto cands = corrupt::generate_candidates(clean);
    INFO(fen << " -> " << cands.size() << " candidates");
    CHECK(candidate_keys(cands) == brute_force_candidates(clean));
    // Generation order is deterministic.
    const auto again = corrupt::generate_candidates(clean);
    REQUIRE(again.size() == cands.size());
    for (size_t i = 0; i < cands.size(); ++i) CHECK(again[i].mutation == cands[i].mutation);
  }
}

TEST_CASE("candidate boards never leak history") {
  const Board clean =
      Board::from_fen("rnbqkbnr/ppp1pppp/8/8/3pP3/8/PPPP1PPP/RNBQKBNR b KQkq e3 0 2");
  for (const auto& c : corrupt::generate_candidates(clean)) {
    CHECK_FALSE(c.board.en_passant().has_value());
    // Castling stays only where king and rook still sit at home.
    CHECK_NOTHROW(c.board.validate());
  }
}

TEST_CASE("mutation description round trip") {
  for (const std::string text : {"add_pawn w e4", "add_pawn b a7", "remove_pawn b3",
                                 "move_piece h1h4", "move_piece a8b6"}) {
    CHECK(Mutation::from_description(text).describe() == text);
  }
  CHECK_THROWS_AS(Mutation::from_description("add_pawn x e4"), Error);
  CHECK_THROWS_AS(Mutation::from_description("move_piece h1"), Error);
  CHECK_THROWS_AS(Mutation::from_description("teleport e2e4"), Error);

  const Mutation mv = Mutation::from_description("move_piece c3d5");
  CHECK(mv.touched() == std::vector<Square>{Square::from_name("c3"), Square::from_name("d5")});
  const Mutation rm = Mutation::from_description("remove_pawn g7");
  CHECK(rm.touched() == std::vector<Square>{Square::from_name("g7")});
}

TEST_CASE("jensen_shannon hand values and properties") {
  const auto p = dist_of({{"e2e4", 0.5}, {"d2d4", 0.5}});
  const auto q = dist_of({{"e2e4", 1.0}});
  const double jsd = corrupt::jensen_shannon(p, q);
  // 0.5*KL(p||m) + 0.5*KL(q||m) with m = (0.75, 0.25) = 0.75*ln(4/3) - 0.25*ln(2)... worked
  // through: 0.5*(0.5*ln(2/3) + 0.5*ln(2)) + 0.5*ln(4/3).
  const double expect = 0.5 * (0.5 * std::log(2.0 / 3.0) + 0.5 * std::log(2.0)) +
                        0.5 * std::log(4.0 / 3.0);
  CHECK(jsd == doctest::Approx(expect).epsilon(1e-12));
  CHECK(jsd == doctest::Approx(0.215762).epsilon(1e-4));

  CHECK(corrupt::jensen_shannon(q, p) == doctest::Approx(jsd).epsilon(1e-12));  // symmetric
  CHECK(corrupt::jensen_shannon(p, p) == 0.0);

  // Disjoint supports hit the ln(2) ceiling.
  const auto r = dist_of({{"g1f3", 0.3}, {"b1c3", 0.7}});
  CHECK(corrupt::jensen_shannon(p, r) == doctest::Approx(std::log(2.0)).epsilon(1e-12));

  // Union-of-supports handling: a move present in only one distribution
  // contributes its full mass against m = half.
  const auto s = dist_of({{"e2e4", 0.5}, {"c2c4", 0.5}});
  CHECK(corrupt::jensen_shannon(p, s) > 0.0);
  CHECK(corrupt::jensen_shannon(p, s) < std::log(2.0));
}

TEST_CASE("filter_candidates agrees with a direct reimplementation") {
  nn::PlantDescriptor plant;
  const nn::Model strong = nn::build_synthetic_model(nn::toy_spec(), plant, 11);
  const nn::Model weak = nn::random_init_like(strong, 12);
  const Board clean = Board::from_fen(plant.clean_fen);
  const auto candidates = corrupt::generate_candidates(clean);
  REQUIRE(candidates.size() > 100);

  corrupt::FilterThresholds th;  // defaults: all three filters on
  for (const bool use_all : {true, false}) {
    th.use_b = use_all;
    th.use_c = use_all;
    const auto kept = corrupt::filter_candidates(strong, weak, clean, plant.best_move,
                                                 candidates, th);

    // Straight-line reimplementation over the same inputs.
    const double weak_clean_lo = nn::log_odds(weak.move_distribution(clean).prob_of(plant.best_move));
    const double clean_value = value_score(strong, clean);
    std::vector<std::string> expect;
    for (const auto& cand : candidates) {
      const double sp = strong.move_distribution(cand.board).prob_of(plant.best_move);
      const double drop =
          weak_clean_lo - nn::log_odds(weak.move_distribution(cand.board).prob_of(plant.best_move));
      const double gain = value_score(strong, cand.board) - clean_value;
      const bool a = sp < th.strong_prob;
      const bool b = drop <= th.weak_drop;
      const bool c = gain <= th.value_gain;
      if ((a || !th.use_a) && (b || !th.use_b) && (c || !th.use_c))
        expect.push_back(cand.mutation.describe());
    }

    std::vector<std::string> got;
    for (const auto& k : kept) got.push_back(k.mutation.describe());
    INFO("filters " << (use_all ? "abc" : "a only") << ": " << got.size() << " kept");
    CHECK(got == expect);

    // Diagnostics are filled for the kept candidates.
    for (const auto& k : kept) {
      const double sp = strong.move_distribution(k.board).prob_of(plant.best_move);
      CHECK(k.strong_best_prob == doctest::Approx(sp).epsilon(1e-12));
    }
  }
}

TEST_CASE("select_corruption minimizes JSD with first-wins ties") {
  nn::PlantDescriptor plant;
  const nn::Model strong = nn::build_synthetic_model(nn::toy_spec(), plant, 13);
  const nn::Model weak = nn::random_init_like(strong, 14);
  const Board clean = Board::from_fen(plant.clean_fen);

  CHECK_FALSE(corrupt::select_corruption(weak, clean, {}).has_value());

  auto candidates = corrupt::generate_candidates(clean);
  const auto chosen = corrupt::select_corruption(weak, clean, candidates);
  REQUIRE(chosen.has_value());

  // The winner's JSD is the minimum over all candidates.
  const auto weak_clean = weak.move_distribution(clean);
  double min_jsd = std::numeric_limits<double>::infinity();
  size_t first_min = 0;
  for (size_t i = 0; i < candidates.size(); ++i) {
    const double j = corrupt::jensen_shannon(weak_clean, weak.move_distribution(candidates[i].board));
    if (j < min_jsd) {
      min_jsd = j;
      first_min = i;
    }
  }
  CHECK(chosen->mutation == candidates[first_min].mutation);
  CHECK(chosen->jsd == doctest::Approx(min_jsd).epsilon(1e-12));

  // Duplicate boards tie exactly; the earlier one wins.
  std::vector<CorruptionCandidate> dup = {candidates[5], candidates[3], candidates[5]};
  dup[2].mutation = candidates[7].mutation;  // same board as dup[0], different label
  dup[2].board = dup[0].board;
  const auto tie = corrupt::select_corruption(weak, clean, dup);
  REQUIRE(tie.has_value());
  const double j0 =
      corrupt::jensen_shannon(weak_clean, weak.move_distribution(dup[0].board));
  const double j1 =
      corrupt::jensen_shannon(weak_clean, weak.move_distribution(dup[1].board));
  if (j0 <= j1) CHECK(tie->mutation == dup[0].mutation);  // never the duplicate at index 2
}

TEST_CASE("the planted corruption survives the strong filter and wins selection") {
  nn::PlantDescriptor plant;
  const nn::Model strong = nn::build_synthetic_model(nn::toy_spec(), plant, 1234);
  const nn::Model weak = nn::random_init_like(strong, 1235);
  const Board clean = Board::from_fen(plant.clean_fen);

  auto candidates = corrupt::generate_candidates(clean);
  corrupt::FilterThresholds th;
  th.use_b = false;  // the random weak model reacts arbitrarily
  th.use_c = false;
  const auto kept = corrupt::filter_candidates(strong, weak, clean, plant.best_move,
                                               std::move(candidates), th);
  const std::string want = "remove_pawn " + plant.carrier.name();
  const bool found = std::any_of(kept.begin(), kept.end(), [&](const CorruptionCandidate& c) {
    return c.mutation.describe() == want;
  });
  CHECK(found);
  for (const auto& k : kept) CHECK(k.strong_best_prob < th.strong_prob);
}
