#include "corrupt/corruption.hpp"

#include <algorithm>
#include <bit>
#include <cmath>
#include <map>
#include <sstream>

#include "common/error.hpp"

namespace ply::corrupt {

namespace {

using chess::Board;
using chess::Color;
using chess::PieceKind;
using chess::Square;

// A candidate board is usable iff it is a legal standalone position; the
// structural invariants (kings, pawn ranks, check legality) are exactly
// Board::validate's.
bool is_legal_position(const Board& b) {
  try {
    b.validate();
    return true;
  } catch (const Error&) {
    return false;
  }
}

Board apply_mutation(const Board& clean, const Mutation& m) {
  Board b = clean;
  // Mutations invent no history: en passant is cleared, and castling rights
  // are re-derived from piece placement.
  b.set_en_passant(std::nullopt);
  switch (m.kind) {
    case Mutation::Kind::AddPawn:
      b.set_piece(m.a, m.color, PieceKind::Pawn);
      break;
    case Mutation::Kind::RemovePawn:
      b.clear_square(m.a);
      break;
    case Mutation::Kind::MovePiece: {
      const auto pc = clean.piece_at(m.a);
      if (!pc) fail(ErrorKind::Internal, "move_piece mutation from an empty square");
      b.clear_square(m.a);
      b.set_piece(m.b, pc->first, pc->second);
      break;
    }
  }
  b.normalize_castling();
  return b;
}

}  // namespace

std::string Mutation::describe() const {
  switch (kind) {
    case Kind::AddPawn:
      return std::string("add_pawn ") + (color == Color::White ? "w " : "b ") + a.name();
    case Kind::RemovePawn:
      return "remove_pawn " + a.name();
    case Kind::MovePiece:
      return "move_piece " + a.name() + b.name();
  }
  return "?";
}

Mutation Mutation::from_description(const std::string& text) {
  std::istringstream in(text);
  std::string kind, f1, f2;
  in >> kind >> f1;
  Mutation m;
  if (kind == "add_pawn") {
    in >> f2;
    if ((f1 != "w" && f1 != "b") || f2.size() != 2)
      fail(ErrorKind::Parse, "bad add_pawn mutation '" + text + "'");
    m.kind = Kind::AddPawn;
    m.color = f1 == "w" ? Color::White : Color::Black;
    m.a = Square::from_name(f2);
  } else if (kind == "remove_pawn") {
    m.kind = Kind::RemovePawn;
    m.a = Square::from_name(f1);
  } else if (kind == "move_piece") {
    if (f1.size() != 4) fail(ErrorKind::Parse, "bad move_piece mutation '" + text + "'");
    m.kind = Kind::MovePiece;
    m.a = Square::from_name(f1.substr(0, 2));
    m.b = Square::from_name(f1.substr(2, 2));
  } else {
    fail(ErrorKind::Parse, "unknown mutation kind in '" + text + "'");
  }
  return m;
}

std::vector<chess::Square> Mutation::touched() const {
  if (kind == Kind::MovePiece) return {a, b};
  return {a};
}

std::vector<CorruptionCandidate> generate_candidates(const Board& clean) {
  std::vector<CorruptionCandidate> out;
  const uint64_t occ = clean.occupancy();
  const uint64_t pawn_ranks = 0x00ffffffffffff00ULL;  // ranks 2..7

  const auto consider = [&](Mutation m) {
    const Board b = apply_mutation(clean, m);
    if (!is_legal_position(b)) return;
    out.push_back({b, m, 0, 0, 0, 0});
  };

  // Add a single pawn of either color on any empty non-back-rank square.
  for (Color c : {Color::White, Color::Black})
    for (uint64_t bb = pawn_ranks & ~occ; bb; bb &= bb - 1)
      consider({Mutation::Kind::AddPawn, c, Square(std::countr_zero(bb)), Square(0)});

  // Remove a single pawn.
  for (Color c : {Color::White, Color::Black})
    for (uint64_t bb = clean.pieces(c, PieceKind::Pawn); bb; bb &= bb - 1)
      consider({Mutation::Kind::RemovePawn, c, Square(std::countr_zero(bb)), Square(0)});

  // Move a single non-pawn piece to any empty square.
  for (Color c : {Color::White, Color::Black})
    for (int k = 1; k < 6; ++k)
      for (uint64_t bb = clean.pieces(c, static_cast<PieceKind>(k)); bb; bb &= bb - 1) {
        const Square from(std::countr_zero(bb));
        for (uint64_t to_bb = ~clean.occupancy(); to_bb; to_bb &= to_bb - 1)
          consider({Mutation::Kind::MovePiece, c, from, Square(std::countr_zero(to_bb))});
      }

  return out;
}

double jensen_shannon(const nn::MoveDist& p, const nn::MoveDist& q) {
  // Union of supports keyed by the move encoding; missing moves carry 0.
  std::map<uint16_t, std::pair<double, double>> u;
  for (size_t i = 0; i < p.moves.size(); ++i) u[p.moves[i].key()].first = p.probs[i];
  for (size_t i = 0; i < q.moves.size(); ++i) u[q.moves[i].key()].second = q.probs[i];
  double kl_p = 0.0, kl_q = 0.0;
  for (const auto& [key, pq] : u) {
    const auto [pi, qi] = pq;
    const double m = 0.5 * (pi + qi);
    if (pi > 0.0) kl_p += pi * std::log(pi / m);
    if (qi > 0.0) kl_q += qi * std::log(qi / m);
  }
  return 0.5 * kl_p + 0.5 * kl_q;
}

std::vector<CorruptionCandidate> filter_candidates(const nn::Model& strong,
                                                   const nn::Model& weak, const Board& clean,
                                                   const chess::Move& best,
                                                   std::vector<CorruptionCandidate> candidates,
                                                   const FilterThresholds& th) {
  const auto weak_clean = weak.move_distribution(clean);
  const double weak_clean_lo = nn::log_odds(weak_clean.prob_of(best));
  const double strong_clean_value = [&] {
    const Board pf = clean.orient_to_player();
    const auto planes = chess::encode_input(pf, strong.spec().layout);
    return strong.forward(planes, {}, nn::TraceLevel::None).value.score();
  }();

  std::vector<CorruptionCandidate> kept;
  for (auto& cand : candidates) {
    const Board pf = cand.board.orient_to_player();
    const auto planes = chess::encode_input(pf, strong.spec().layout);
    const auto strong_fwd = strong.forward(planes, {}, nn::TraceLevel::None);
    const auto strong_dist = strong.move_distribution(cand.board);
    cand.strong_best_prob = strong_dist.prob_of(best);
    cand.value_gain = strong_fwd.value.score() - strong_clean_value;
    const auto weak_dist = weak.move_distribution(cand.board);
    cand.weak_logodds_drop = weak_clean_lo - nn::log_odds(weak_dist.prob_of(best));

    const bool a = cand.strong_best_prob < th.strong_prob;
    const bool b = cand.weak_logodds_drop <= th.weak_drop;
    const bool c = cand.value_gain <= th.value_gain;
    if ((a || !th.use_a) && (b || !th.use_b) && (c || !th.use_c)) kept.push_back(std::move(cand));
  }
  return kept;
}

std::optional<CorruptionCandidate> select_corruption(const nn::Model& weak, const Board& clean,
                                                     std::vector<CorruptionCandidate> survivors) {
  if (survivors.empty()) return std::nullopt;
  const auto weak_clean = weak.move_distribution(clean);
  size_t best_idx = 0;
  double best_jsd = 0.0;
  for (size_t i = 0; i < survivors.size(); ++i) {
    survivors[i].jsd = jensen_shannon(weak_clean, weak.move_distribution(survivors[i].board));
    if (i == 0 || survivors[i].jsd < best_jsd) {
      best_idx = i;
      best_jsd = survivors[i].jsd;
    }
  }
  return survivors[best_idx];
}

}  // namespace ply::corrupt
