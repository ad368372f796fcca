// Reference move generator used to cross-check the bitboard engine. It is
// deliberately written with different machinery: an 0x88 mailbox board, its
// own FEN parser, and attack scans instead of precomputed bitboards. Slow and
// simple on purpose.
#pragma once

#include <array>
#include <cstdint>
#include <string>
#include <vector>

namespace oracle {

// Piece codes: positive white, negative black. 1=P 2=N 3=B 4=R 5=Q 6=K.
struct Position {
  std::array<int8_t, 128> sq{};  // 0x88 layout, 0 = empty
  bool white_to_move = true;
  int castle = 0;  // 1 WK, 2 WQ, 4 BK, 8 BQ
  int ep = -1;     // capture square in 0x88, -1 = none
  int halfmove = 0;
  int fullmove = 1;
};

Position parse_fen(const std::string& fen);
std::string to_fen(const Position& pos);

// True when `square` (0x88) is attacked by the given side.
bool attacked(const Position& pos, int square, bool by_white);

// Legal moves as sorted UCI strings.
std::vector<std::string> legal_moves(const Position& pos);

// Applies a UCI move; the move must be legal.
Position apply(const Position& pos, const std::string& uci);

uint64_t perft(const Position& pos, int depth);

}  // namespace oracle
