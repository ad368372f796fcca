#include <array>
#include <bit>

#include "chess/board.hpp"

namespace ply::chess {

namespace {

constexpr uint64_t kFileA = 0x0101010101010101ULL;
constexpr uint64_t kFileH = kFileA << 7;

constexpr uint64_t shift_n(uint64_t b) { return b << 8; }
constexpr uint64_t shift_s(uint64_t b) { return b >> 8; }
constexpr uint64_t shift_e(uint64_t b) { return (b & ~kFileH) << 1; }
constexpr uint64_t shift_w(uint64_t b) { return (b & ~kFileA) >> 1; }

struct Tables {
  std::array<uint64_t, 64> knight{};
  std::array<uint64_t, 64> king{};
  std::array<std::array<uint64_t, 64>, 2> pawn{};  // [color][sq], capture diagonals

  Tables() {
    for (int sq = 0; sq < 64; ++sq) {
      const uint64_t b = 1ULL << sq;
      uint64_t n = 0;
      n |= shift_e(shift_n(shift_n(b))) | shift_w(shift_n(shift_n(b)));
      n |= shift_e(shift_s(shift_s(b))) | shift_w(shift_s(shift_s(b)));
      n |= shift_n(shift_e(shift_e(b))) | shift_s(shift_e(shift_e(b)));
      n |= shift_n(shift_w(shift_w(b))) | shift_s(shift_w(shift_w(b)));
      knight[sq] = n;

      uint64_t k = shift_n(b) | shift_s(b) | shift_e(b) | shift_w(b);
      k |= shift_n(shift_e(b)) | shift_n(shift_w(b));
      k |= shift_s(shift_e(b)) | shift_s(shift_w(b));
      king[sq] = k;

      pawn[0][sq] = shift_n(shift_e(b)) | shift_n(shift_w(b));
      pawn[1][sq] = shift_s(shift_e(b)) | shift_s(shift_w(b));
    }
  }
};

const Tables& tables() {
  static const Tables t;
  return t;
}

uint64_t ray_attacks(Square sq, uint64_t occ, const std::array<std::pair<int, int>, 4>& dirs) {
  uint64_t att = 0;
  const int f0 = sq.file(), r0 = sq.rank();
  for (const auto& [df, dr] : dirs) {
    int f = f0 + df, r = r0 + dr;
    while (f >= 0 && f < 8 && r >= 0 && r < 8) {
      const uint64_t bit = Square::from_file_rank(f, r).bit();
      att |= bit;
      if (occ & bit) break;
      f += df;
      r += dr;
    }
  }
  return att;
}

}  // namespace

uint64_t knight_attacks(Square sq) { return tables().knight[sq.index()]; }
uint64_t king_attacks(Square sq) { return tables().king[sq.index()]; }
uint64_t pawn_attacks(Color c, Square sq) { return tables().pawn[static_cast<int>(c)][sq.index()]; }

uint64_t bishop_attacks(Square sq, uint64_t occ) {
  return ray_attacks(sq, occ, {{{1, 1}, {1, -1}, {-1, 1}, {-1, -1}}});
}

uint64_t rook_attacks(Square sq, uint64_t occ) {
  return ray_attacks(sq, occ, {{{1, 0}, {-1, 0}, {0, 1}, {0, -1}}});
}

uint64_t reachability_mask(Square sq, PieceKind kind) {
  switch (kind) {
    case PieceKind::Knight: return knight_attacks(sq);
    case PieceKind::King: return king_attacks(sq);
    case PieceKind::Bishop: return bishop_attacks(sq, 0);
    case PieceKind::Rook: return rook_attacks(sq, 0);
    case PieceKind::Queen: return bishop_attacks(sq, 0) | rook_attacks(sq, 0);
    case PieceKind::Pawn: {
      // Player frame: pawns advance toward rank 8.
      const uint64_t b = sq.bit();
      uint64_t m = shift_n(b) | pawn_attacks(Color::White, sq);
      if (sq.rank() == 1) m |= shift_n(shift_n(b));
      return m;
    }
  }
  return 0;
}

uint64_t positional_vector(Square sq) {
  return reachability_mask(sq, PieceKind::Queen) | reachability_mask(sq, PieceKind::Knight);
}

void Board::pseudo_moves(std::vector<Move>& out) const {
  const Color us = stm_;
  const Color them = other(us);
  const uint64_t own = occupancy(us);
  const uint64_t opp = occupancy(them);
  const uint64_t occ = own | opp;

  const auto emit = [&](Square from, uint64_t targets) {
    uint64_t t = targets & ~own;
    while (t) {
      const auto to = Square(static_cast<uint8_t>(std::countr_zero(t)));
      t &= t - 1;
      out.push_back({from, to, std::nullopt});
    }
  };

  for (uint64_t b = pieces(us, PieceKind::Knight); b; b &= b - 1)
    emit(Square(static_cast<uint8_t>(std::countr_zero(b))), knight_attacks(Square(static_cast<uint8_t>(std::countr_zero(b)))));
  for (uint64_t b = pieces(us, PieceKind::Bishop); b; b &= b - 1) {
    const Square s(static_cast<uint8_t>(std::countr_zero(b)));
    emit(s, bishop_attacks(s, occ));
  }
  for (uint64_t b = pieces(us, PieceKind::Rook); b; b &= b - 1) {
    const Square s(static_cast<uint8_t>(std::countr_zero(b)));
    emit(s, rook_attacks(s, occ));
  }
  for (uint64_t b = pieces(us, PieceKind::Queen); b; b &= b - 1) {
    const Square s(static_cast<uint8_t>(std::countr_zero(b)));
    emit(s, bishop_attacks(s, occ) | rook_attacks(s, occ));
  }
  emit(king_square(us), king_attacks(king_square(us)));

  // Pawns: pushes, double pushes, captures, en passant, promotions.
  const int fwd = us == Color::White ? 8 : -8;
  const int start_rank = us == Color::White ? 1 : 6;
  const int promo_rank = us == Color::White ? 7 : 0;
  const auto emit_pawn = [&](Square from, Square to) {
    if (to.rank() == promo_rank) {
      for (PieceKind p : {PieceKind::Queen, PieceKind::Rook, PieceKind::Bishop, PieceKind::Knight})
        out.push_back({from, to, p});
    } else {
      out.push_back({from, to, std::nullopt});
    }
  };
  for (uint64_t b = pieces(us, PieceKind::Pawn); b; b &= b - 1) {
    const Square from(static_cast<uint8_t>(std::countr_zero(b)));
    const Square one(static_cast<uint8_t>(from.index() + fwd));
    if (!(occ & one.bit())) {
      emit_pawn(from, one);
      if (from.rank() == start_rank) {
        const Square two(static_cast<uint8_t>(from.index() + 2 * fwd));
        if (!(occ & two.bit())) out.push_back({from, two, std::nullopt});
      }
    }
    uint64_t caps = pawn_attacks(us, from) & opp;
    while (caps) {
      emit_pawn(from, Square(static_cast<uint8_t>(std::countr_zero(caps))));
      caps &= caps - 1;
    }
    if (ep_ && (pawn_attacks(us, from) & ep_->bit())) out.push_back({from, *ep_, std::nullopt});
  }

  // Castling: empty path and no enemy attack on the king's traversal.
  const auto can_castle = [&](Square k_from, Square k_to, Square r_from, uint64_t empty_mask) {
    if (occ & empty_mask) return false;
    if (!(pieces(us, PieceKind::Rook) & r_from.bit())) return false;
    const int step = k_to.file() > k_from.file() ? 1 : -1;
    for (int f = k_from.file(); ; f += step) {
      if (attackers_to(Square::from_file_rank(f, k_from.rank()), them, occ)) return false;
      if (f == k_to.file()) break;
    }
    return true;
  };
  const int rank = us == Color::White ? 0 : 7;
  const uint8_t kside = us == Color::White ? kWK : kBK;
  const uint8_t qside = us == Color::White ? kWQ : kBQ;
  const Square e = Square::from_file_rank(4, rank);
  if ((castling_ & kside) &&
      can_castle(e, Square::from_file_rank(6, rank), Square::from_file_rank(7, rank),
                 Square::from_file_rank(5, rank).bit() | Square::from_file_rank(6, rank).bit()))
    out.push_back({e, Square::from_file_rank(6, rank), std::nullopt});
  if ((castling_ & qside) &&
      can_castle(e, Square::from_file_rank(2, rank), Square::from_file_rank(0, rank),
                 Square::from_file_rank(1, rank).bit() | Square::from_file_rank(2, rank).bit() |
                     Square::from_file_rank(3, rank).bit()))
    out.push_back({e, Square::from_file_rank(2, rank), std::nullopt});
}

}  // namespace ply::chess
