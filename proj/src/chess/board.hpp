#pragma once

#include <array>
#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include "chess/types.hpp"

namespace ply::chess {

enum class Orientation : uint8_t { Absolute, PlayerRelative };

// Castling-right bits, always stored for the physical white/black colors.
enum CastleBits : uint8_t { kWK = 1, kWQ = 2, kBK = 4, kBQ = 8 };

// Immutable-by-convention position value: 12 occupancy bitboards plus game
// state. In the player-relative frame the side to move is always stored as
// White (pawns move toward rank 8) and `flipped()` records whether the
// absolute position had black to move.
class Board {
 public:
  Board() = default;

  static Board from_fen(const std::string& fen);
  static Board start_position();
  std::string fen() const;

  uint64_t pieces(Color c, PieceKind k) const { return bb_[idx(c, k)]; }
  uint64_t occupancy(Color c) const;
  uint64_t occupancy() const { return occupancy(Color::White) | occupancy(Color::Black); }
  std::optional<std::pair<Color, PieceKind>> piece_at(Square sq) const;

  Color side_to_move() const { return stm_; }
  uint8_t castling() const { return castling_; }
  std::optional<Square> en_passant() const { return ep_; }
  int halfmove_clock() const { return halfmove_; }
  int fullmove_number() const { return fullmove_; }
  Orientation orientation() const { return orient_; }
  bool flipped() const { return flipped_; }

  Square king_square(Color c) const;
  bool in_check(Color c) const;
  // All attackers of `sq` belonging to `by`, given occupancy `occ`.
  uint64_t attackers_to(Square sq, Color by, uint64_t occ) const;

  std::vector<Move> legal_moves() const;
  uint64_t perft(int depth) const;

  // Applies a move after verifying it is legal; throws ErrorKind::Illegal.
  Board apply_move(const Move& m) const;

  // Rotates into the player frame (identity when white to move). Idempotent.
  Board orient_to_player() const;

  // Maps a square of this board's frame to/from the absolute frame.
  Square to_absolute(Square sq) const { return flipped_ ? sq.mirrored() : sq; }
  Square to_frame(Square abs_sq) const { return flipped_ ? abs_sq.mirrored() : abs_sq; }
  Move to_absolute(const Move& m) const { return flipped_ ? m.mirrored() : m; }
  Move to_frame(const Move& m) const { return flipped_ ? m.mirrored() : m; }

  // Structural invariants: one king each, no pawns on back ranks, disjoint
  // occupancy, side not to move not in check. Throws on violation.
  void validate() const;

  bool same_placement(const Board& o) const { return bb_ == o.bb_; }
  bool operator==(const Board& o) const {
    return bb_ == o.bb_ && stm_ == o.stm_ && castling_ == o.castling_ && ep_ == o.ep_;
  }

  // Mutators used by corruption search; they bypass move legality but the
  // caller re-validates the result.
  void set_piece(Square sq, Color c, PieceKind k);
  void clear_square(Square sq);
  void set_en_passant(std::optional<Square> ep) { ep_ = ep; }
  void set_castling(uint8_t bits) { castling_ = bits; }

  // Drops castling rights whose king/rook are not on their home squares.
  void normalize_castling();

 private:
  static int idx(Color c, PieceKind k) { return static_cast<int>(c) * 6 + static_cast<int>(k); }

  Board apply_unchecked(const Move& m) const;
  void pseudo_moves(std::vector<Move>& out) const;

  std::array<uint64_t, 12> bb_{};
  Color stm_ = Color::White;
  uint8_t castling_ = 0;
  std::optional<Square> ep_;
  int halfmove_ = 0;
  int fullmove_ = 1;
  Orientation orient_ = Orientation::Absolute;
  bool flipped_ = false;
};

// One-move reachability on an empty board, player frame for pawns
// (push, double push from rank 2, capture diagonals).
uint64_t reachability_mask(Square sq, PieceKind kind);

// Union of reachability over all piece kinds; the model's positional code.
uint64_t positional_vector(Square sq);

// Attack helpers shared by movegen and corruption legality checks.
uint64_t knight_attacks(Square sq);
uint64_t king_attacks(Square sq);
uint64_t pawn_attacks(Color c, Square sq);
uint64_t bishop_attacks(Square sq, uint64_t occ);
uint64_t rook_attacks(Square sq, uint64_t occ);

}  // namespace ply::chess
