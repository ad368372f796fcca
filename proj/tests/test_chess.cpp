#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <algorithm>
#include <random>
#include <string>
#include <vector>

#include "chess/board.hpp"
#include "chess/types.hpp"
#include "common/error.hpp"
#include "oracle_movegen.hpp"

using namespace ply;
using chess::Board;
using chess::Move;
using chess::Square;

namespace {

std::vector<std::string> sorted_uci(const Board& b) {
  std::vector<std::string> out;
  for (const auto& m : b.legal_moves()) out.push_back(m.uci());
  std::sort(out.begin(), out.end());
  return out;
}

// Public perft reference suite (startpos + the usual stress positions).
struct PerftCase {
  const char* fen;
  std::vector<uint64_t> nodes;  // nodes[d-1] = perft(d)
};

const std::vector<PerftCase>& perft_cases() {
  static const std::vector<PerftCase> cases = {
      {"rnbqkbnr/pppppppp/8/8/8/8/PPPPPPPP/RNBQKBNR w KQkq - 0 1",
       {20, 400, 8902, 197281, 4865609}},
      {"r3k2r/p1ppqpb1/bn2pnp1/3PN3/1p2P3/2N2Q1p/PPPBBPPP/R3K2R w KQkq - 0 1",
       {48, 2039, 97862, 4085603}},
      {"8/2p5/3p4/KP5r/1R3p1k/8/4P1P1/8 w - - 0 1", {14, 191, 2812, 43238, 674624}},
      {"r3k2r/Pppp1ppp/1b3nbN/nP6/BBP1P3/q4N2/Pp1P2PP/R2Q1RK1 w kq - 0 1",
       {6, 264, 9467, 422333}},
      {"rnbq1k1r/pp1Pbppp/2p5/8/2B5/8/PPP1NnPP/RNBQK2R w KQ - 1 8", {44, 1486, 62379, 2103487}},
      {"r4rk1/1pp1qppp/p1np1n2/2b1p1B1/2B1P1b1/P1NP1N2/1PP1QPPP/R4RK1 w - - 0 10",
       {46, 2079, 89890, 3894594}},
  };
  return cases;
}

}  // namespace

TEST_CASE("perft matches published reference counts") {
  for (const auto& c : perft_cases()) {
    const Board b = Board::from_fen(c.fen);
    for (size_t d = 1; d <= c.nodes.size(); ++d) {
      INFO(c.fen << " depth " << d);
      CHECK(b.perft(static_cast<int>(d)) == c.nodes[d - 1]);
    }
  }
}

TEST_CASE("perft matches the mailbox oracle at shallow depth") {
  for (const auto& c : perft_cases()) {
    const Board b = Board::from_fen(c.fen);
    const oracle::Position p = oracle::parse_fen(c.fen);
    for (int d = 1; d <= 3; ++d) {
      INFO(c.fen << " depth " << d);
      const uint64_t expect = oracle::perft(p, d);
      CHECK(expect == c.nodes[static_cast<size_t>(d) - 1]);  // the oracle itself
      CHECK(b.perft(d) == expect);
    }
  }
}

TEST_CASE("random playouts agree with the oracle move for move") {
  std::mt19937_64 rng(2024);
  int positions_checked = 0;
  for (int game = 0; game < 60; ++game) {
    Board b = Board::start_position();
    oracle::Position p = oracle::parse_fen(b.fen());
    for (int ply_i = 0; ply_i < 80; ++ply_i) {
      const auto lib_moves = sorted_uci(b);
      const auto ora_moves = oracle::legal_moves(p);
      INFO("game " << game << " ply " << ply_i << " fen " << b.fen());
      REQUIRE(lib_moves == ora_moves);
      ++positions_checked;
      if (lib_moves.empty()) break;
      const auto& uci = lib_moves[rng() % lib_moves.size()];
      b = b.apply_move(Move::from_uci(uci));
      p = oracle::apply(p, uci);
      REQUIRE(b.fen() == oracle::to_fen(p));
    }
  }
  CHECK(positions_checked > 1000);
}

TEST_CASE("en passant, castling and promotion corner cases") {
  // En-passant capture is the only legal reply.
  const Board ep = Board::from_fen("8/8/8/2k5/3Pp3/8/8/4K3 b - d3 0 1");
  const auto ep_moves = sorted_uci(ep);
  CHECK(std::find(ep_moves.begin(), ep_moves.end(), "e4d3") != ep_moves.end());

  // En-passant capture exposing the king along the rank is rejected.
  const Board pinned = Board::from_fen("8/8/8/K2pP2q/8/8/8/7k w - d6 0 1");
  const auto pinned_moves = sorted_uci(pinned);
  CHECK(std::find(pinned_moves.begin(), pinned_moves.end(), "e5d6") == pinned_moves.end());
  CHECK(pinned_moves == oracle::legal_moves(oracle::parse_fen(pinned.fen())));

  // Castling through an attacked square is rejected, castling out of reach of
  // the attack is kept.
  const Board through = Board::from_fen("4k3/8/8/8/8/5r2/8/R3K2R w KQ - 0 1");
  const auto through_moves = sorted_uci(through);
  CHECK(std::find(through_moves.begin(), through_moves.end(), "e1g1") == through_moves.end());
  CHECK(std::find(through_moves.begin(), through_moves.end(), "e1c1") != through_moves.end());

  // The queenside b-file square may be attacked; only the king's path counts.
  const Board bfile = Board::from_fen("4k3/8/8/8/8/1r6/8/R3K3 w Q - 0 1");
  const auto bfile_moves = sorted_uci(bfile);
  CHECK(std::find(bfile_moves.begin(), bfile_moves.end(), "e1c1") != bfile_moves.end());

  // Promotions come in all four flavors, including capture promotions.
  const Board promo = Board::from_fen("3n4/4P3/8/8/8/8/8/k3K3 w - - 0 1");
  const auto promo_moves = sorted_uci(promo);
  for (const char* m : {"e7e8q", "e7e8r", "e7e8b", "e7e8n", "e7d8q", "e7d8n"})
    CHECK(std::find(promo_moves.begin(), promo_moves.end(), m) != promo_moves.end());
  CHECK(promo_moves == oracle::legal_moves(oracle::parse_fen(promo.fen())));
}

TEST_CASE("stalemate and checkmate have no legal moves") {
  CHECK(sorted_uci(Board::from_fen("7k/5Q2/6K1/8/8/8/8/8 b - - 0 1")).empty());   // stalemate
  CHECK(sorted_uci(Board::from_fen("7k/6Q1/6K1/8/8/8/8/8 b - - 0 1")).empty());   // mate
  CHECK(Board::from_fen("7k/6Q1/6K1/8/8/8/8/8 b - - 0 1").in_check(chess::Color::Black));
  CHECK_FALSE(Board::from_fen("7k/5Q2/6K1/8/8/8/8/8 b - - 0 1").in_check(chess::Color::Black));
}

TEST_CASE("FEN round trip and validation") {
  for (const auto& c : perft_cases()) CHECK(Board::from_fen(c.fen).fen() == c.fen);
  CHECK(Board::start_position().fen() ==
        "rnbqkbnr/pppppppp/8/8/8/8/PPPPPPPP/RNBQKBNR w KQkq - 0 1");

  CHECK_THROWS_AS(Board::from_fen("junk"), Error);
  CHECK_THROWS_AS(Board::from_fen("8/8/8/8/8/8/8/8 w - - 0 1"), Error);  // no kings
  // Castling rights without the rook on its home square are dropped quietly.
  const Board norm = Board::from_fen("4k3/8/8/8/8/8/8/4K2R w Q - 0 1");
  CHECK(norm.castling() == 0);
}

TEST_CASE("apply_move rejects illegal moves") {
  const Board b = Board::start_position();
  CHECK_THROWS_AS(b.apply_move(Move::from_uci("e2e5")), Error);
  CHECK_THROWS_AS(b.apply_move(Move::from_uci("e7e5")), Error);
  CHECK_THROWS_AS(b.apply_move(Move::from_uci("e1g1")), Error);
  const Board after = b.apply_move(Move::from_uci("e2e4"));
  CHECK(after.side_to_move() == chess::Color::Black);
  CHECK(after.en_passant().has_value());
  CHECK(after.en_passant()->name() == "e3");
}

TEST_CASE("player orientation mirrors squares and moves") {
  const Board b = Board::from_fen("rnbqkbnr/pppppppp/8/8/8/8/PPPPPPPP/RNBQKBNR b KQkq - 0 1");
  const Board player = b.orient_to_player();
  CHECK(player.flipped());
  CHECK(player.side_to_move() == chess::Color::White);
  CHECK(player.orient_to_player().fen() == player.fen());  // idempotent

  // A physical black knight move maps into the player frame and back.
  const Move abs_move = Move::from_uci("g8f6");
  const Move framed = player.to_frame(abs_move);
  CHECK(framed.uci() == "g1f3");
  CHECK(player.to_absolute(framed) == abs_move);

  // Legal-move sets correspond one-to-one under mirroring.
  auto abs_moves = sorted_uci(b);
  std::vector<std::string> framed_moves;
  for (const auto& m : player.legal_moves()) framed_moves.push_back(player.to_absolute(m).uci());
  std::sort(framed_moves.begin(), framed_moves.end());
  CHECK(abs_moves == framed_moves);
}

TEST_CASE("square and move encodings") {
  CHECK(Square::from_name("a1").index() == 0);
  CHECK(Square::from_name("h1").index() == 7);
  CHECK(Square::from_name("a8").index() == 56);
  CHECK(Square(17).name() == "b3");
  CHECK(Square(17).mirrored().name() == "b6");
  CHECK_THROWS_AS(Square::from_name("i9"), Error);

  const Move m = Move::from_uci("e7e8q");
  CHECK(m.promotion == chess::PieceKind::Queen);
  CHECK(m.uci() == "e7e8q");
  CHECK(Move::from_uci(m.mirrored().uci()).mirrored() == m);
  CHECK_THROWS_AS(Move::from_uci("e7e8k"), Error);
  CHECK_THROWS_AS(Move::from_uci("e7"), Error);

  // key() is injective over from/to/promotion.
  CHECK(Move::from_uci("a1b1").key() != Move::from_uci("b1a1").key());
  CHECK(Move::from_uci("e7e8q").key() != Move::from_uci("e7e8r").key());
}

TEST_CASE("attack helpers agree with reachability masks on an empty board") {
  for (int i = 0; i < 64; ++i) {
    const Square sq(i);
    CHECK(chess::knight_attacks(sq) == chess::reachability_mask(sq, chess::PieceKind::Knight));
    CHECK(chess::king_attacks(sq) == chess::reachability_mask(sq, chess::PieceKind::King));
    CHECK(chess::bishop_attacks(sq, 0) == chess::reachability_mask(sq, chess::PieceKind::Bishop));
    CHECK(chess::rook_attacks(sq, 0) == chess::reachability_mask(sq, chess::PieceKind::Rook));
    CHECK((chess::rook_attacks(sq, 0) | chess::bishop_attacks(sq, 0)) ==
          chess::reachability_mask(sq, chess::PieceKind::Queen));
    // The positional code is the union over every kind.
    uint64_t all = 0;
    for (int k = 0; k < 6; ++k)
      all |= chess::reachability_mask(sq, static_cast<chess::PieceKind>(k));
    CHECK(chess::positional_vector(sq) == all);
  }
}
