#pragma once

#include <compare>
#include <cstdint>
#include <optional>
#include <string>
#include <string_view>

#include "common/error.hpp"

namespace ply::chess {

enum class Color : uint8_t { White = 0, Black = 1 };

inline Color other(Color c) { return c == Color::White ? Color::Black : Color::White; }

enum class PieceKind : uint8_t { Pawn = 0, Knight, Bishop, Rook, Queen, King };

inline char piece_char(PieceKind k) { return "pnbrqk"[static_cast<int>(k)]; }

inline std::optional<PieceKind> piece_from_char(char c) {
  switch (c) {
    case 'p': return PieceKind::Pawn;
    case 'n': return PieceKind::Knight;
    case 'b': return PieceKind::Bishop;
    case 'r': return PieceKind::Rook;
    case 'q': return PieceKind::Queen;
    case 'k': return PieceKind::King;
    default: return std::nullopt;
  }
}

// Board square, index 0..63 with a1=0, h1=7, a8=56 (rank-major).
class Square {
 public:
  Square() = default;
  constexpr explicit Square(int index) : idx_(static_cast<uint8_t>(index)) {}

  static constexpr Square from_file_rank(int file, int rank) { return Square(rank * 8 + file); }

  static Square from_name(std::string_view name) {
    if (name.size() != 2 || name[0] < 'a' || name[0] > 'h' || name[1] < '1' || name[1] > '8')
      fail(ErrorKind::Parse, "bad square name '" + std::string(name) + "'");
    return from_file_rank(name[0] - 'a', name[1] - '1');
  }

  constexpr int index() const { return idx_; }
  constexpr int file() const { return idx_ & 7; }
  constexpr int rank() const { return idx_ >> 3; }
  constexpr uint64_t bit() const { return 1ull << idx_; }

  // The same physical square seen from the other player's frame (rank mirror).
  constexpr Square mirrored() const { return Square(idx_ ^ 56); }

  std::string name() const {
    return {static_cast<char>('a' + file()), static_cast<char>('1' + rank())};
  }

  auto operator<=>(const Square&) const = default;

 private:
  uint8_t idx_ = 0;
};

struct Move {
  Square from;
  Square to;
  std::optional<PieceKind> promotion;

  std::string uci() const {
    std::string s = from.name() + to.name();
    if (promotion) s += piece_char(*promotion);
    return s;
  }

  static Move from_uci(std::string_view uci) {
    if (uci.size() != 4 && uci.size() != 5)
      fail(ErrorKind::Parse, "bad UCI move '" + std::string(uci) + "'");
    Move m{Square::from_name(uci.substr(0, 2)), Square::from_name(uci.substr(2, 2)), {}};
    if (uci.size() == 5) {
      auto k = piece_from_char(uci[4]);
      if (!k || *k == PieceKind::Pawn || *k == PieceKind::King)
        fail(ErrorKind::Parse, "bad promotion piece in '" + std::string(uci) + "'");
      m.promotion = *k;
    }
    return m;
  }

  // Move in the other frame: both squares rank-mirrored.
  Move mirrored() const { return {from.mirrored(), to.mirrored(), promotion}; }

  auto operator<=>(const Move&) const = default;

  // Compact encoding used as a distribution key: from | to<<6 | promo<<12.
  uint16_t key() const {
    uint16_t p = promotion ? static_cast<uint16_t>(*promotion) : 0;
    return static_cast<uint16_t>(from.index() | (to.index() << 6) | (p << 12));
  }
};

}  // namespace ply::chess
