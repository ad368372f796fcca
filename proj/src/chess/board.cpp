#include "chess/board.hpp"

#include <bit>
#include <sstream>

#include "common/error.hpp"

namespace ply::chess {

namespace {

std::vector<std::string> split_ws(const std::string& s) {
  std::istringstream in(s);
  std::vector<std::string> out;
  std::string tok;
  while (in >> tok) out.push_back(tok);
  return out;
}

}  // namespace

uint64_t Board::occupancy(Color c) const {
  uint64_t occ = 0;
  for (int k = 0; k < 6; ++k) occ |= bb_[static_cast<int>(c) * 6 + k];
  return occ;
}

std::optional<std::pair<Color, PieceKind>> Board::piece_at(Square sq) const {
  const uint64_t bit = sq.bit();
  for (int i = 0; i < 12; ++i) {
    if (bb_[i] & bit)
      return std::make_pair(static_cast<Color>(i / 6), static_cast<PieceKind>(i % 6));
  }
  return std::nullopt;
}

Square Board::king_square(Color c) const {
  const uint64_t kings = pieces(c, PieceKind::King);
  if (!kings) fail(ErrorKind::Internal, "no king on board for " + std::string(c == Color::White ? "white" : "black"));
  return Square(static_cast<uint8_t>(std::countr_zero(kings)));
}

uint64_t Board::attackers_to(Square sq, Color by, uint64_t occ) const {
  uint64_t att = 0;
  att |= knight_attacks(sq) & pieces(by, PieceKind::Knight);
  att |= king_attacks(sq) & pieces(by, PieceKind::King);
  // A pawn of `by` attacks sq iff sq is attacked from the pawn's square, i.e.
  // the reverse-color pawn attack from sq hits it.
  att |= pawn_attacks(other(by), sq) & pieces(by, PieceKind::Pawn);
  const uint64_t diag = bishop_attacks(sq, occ);
  const uint64_t line = rook_attacks(sq, occ);
  att |= diag & (pieces(by, PieceKind::Bishop) | pieces(by, PieceKind::Queen));
  att |= line & (pieces(by, PieceKind::Rook) | pieces(by, PieceKind::Queen));
  return att;
}

bool Board::in_check(Color c) const {
  return attackers_to(king_square(c), other(c), occupancy()) != 0;
}

Board Board::start_position() {
  return from_fen("rnbqkbnr/pppppppp/8/8/8/8/PPPPPPPP/RNBQKBNR w KQkq - 0 1");
}

Board Board::from_fen(const std::string& fen) {
  const auto fields = split_ws(fen);
  if (fields.size() < 4 || fields.size() > 6)
    fail(ErrorKind::Parse, "FEN has " + std::to_string(fields.size()) + " fields, expected 4 to 6");

  Board b;

  // Field 1: piece placement, 8 ranks from rank 8 down to rank 1.
  {
    std::vector<std::string> ranks;
    std::string cur;
    for (char ch : fields[0]) {
      if (ch == '/') {
        ranks.push_back(cur);
        cur.clear();
      } else {
        cur.push_back(ch);
      }
    }
    ranks.push_back(cur);
    if (ranks.size() != 8)
      fail(ErrorKind::Parse, "FEN placement has " + std::to_string(ranks.size()) + " ranks, expected 8");
    for (int r = 0; r < 8; ++r) {
      const int rank = 7 - r;
      int file = 0;
      for (char ch : ranks[r]) {
        if (ch >= '1' && ch <= '8') {
          file += ch - '0';
        } else {
          if (file >= 8)
            fail(ErrorKind::Parse, "FEN rank " + std::to_string(rank + 1) + " overflows 8 files");
          const Color c = std::isupper(static_cast<unsigned char>(ch)) ? Color::White : Color::Black;
          const auto k = piece_from_char(static_cast<char>(std::tolower(static_cast<unsigned char>(ch))));
          if (!k) fail(ErrorKind::Parse, std::string("FEN placement has unknown piece '") + ch + "'");
          b.bb_[idx(c, *k)] |= Square::from_file_rank(file, rank).bit();
          ++file;
        }
      }
      if (file != 8)
        fail(ErrorKind::Parse, "FEN rank " + std::to_string(rank + 1) + " covers " + std::to_string(file) + " files, expected 8");
    }
  }

  // Field 2: side to move.
  if (fields[1] == "w")
    b.stm_ = Color::White;
  else if (fields[1] == "b")
    b.stm_ = Color::Black;
  else
    fail(ErrorKind::Parse, "FEN side to move '" + fields[1] + "' is not 'w' or 'b'");

  // Field 3: castling rights.
  if (fields[2] != "-") {
    for (char ch : fields[2]) {
      switch (ch) {
        case 'K': b.castling_ |= kWK; break;
        case 'Q': b.castling_ |= kWQ; break;
        case 'k': b.castling_ |= kBK; break;
        case 'q': b.castling_ |= kBQ; break;
        default: fail(ErrorKind::Parse, std::string("FEN castling field has unknown character '") + ch + "'");
      }
    }
  }

  // Field 4: en-passant target.
  if (fields[3] != "-") {
    const Square ep = Square::from_name(fields[3]);
    if (ep.rank() != 2 && ep.rank() != 5)
      fail(ErrorKind::Parse, "FEN en-passant square " + fields[3] + " is not on rank 3 or 6");
    b.ep_ = ep;
  }

  // Fields 5/6: clocks, optional.
  if (fields.size() >= 5) {
    try {
      b.halfmove_ = std::stoi(fields[4]);
    } catch (const std::exception&) {
      fail(ErrorKind::Parse, "FEN halfmove clock '" + fields[4] + "' is not a number");
    }
  }
  if (fields.size() >= 6) {
    try {
      b.fullmove_ = std::stoi(fields[5]);
    } catch (const std::exception&) {
      fail(ErrorKind::Parse, "FEN fullmove number '" + fields[5] + "' is not a number");
    }
  }

  b.normalize_castling();
  b.validate();
  return b;
}

void Board::validate() const {
  uint64_t seen = 0;
  for (int i = 0; i < 12; ++i) {
    if (bb_[i] & seen) fail(ErrorKind::Parse, "two pieces share a square");
    seen |= bb_[i];
  }
  for (Color c : {Color::White, Color::Black}) {
    const int kings = std::popcount(pieces(c, PieceKind::King));
    if (kings != 1)
      fail(ErrorKind::Parse, std::string(c == Color::White ? "white" : "black") + " has " + std::to_string(kings) + " kings, expected 1");
  }
  const uint64_t back_ranks = 0xff000000000000ffULL;
  if ((pieces(Color::White, PieceKind::Pawn) | pieces(Color::Black, PieceKind::Pawn)) & back_ranks)
    fail(ErrorKind::Parse, "pawn on rank 1 or 8");
  if (in_check(other(stm_)))
    fail(ErrorKind::Parse, "side not to move is in check");
}

void Board::normalize_castling() {
  const auto has = [&](Color c, PieceKind k, Square sq) {
    return (pieces(c, k) & sq.bit()) != 0;
  };
  if (!has(Color::White, PieceKind::King, Square::from_name("e1")))
    castling_ &= ~(kWK | kWQ);
  if (!has(Color::White, PieceKind::Rook, Square::from_name("h1"))) castling_ &= ~kWK;
  if (!has(Color::White, PieceKind::Rook, Square::from_name("a1"))) castling_ &= ~kWQ;
  if (!has(Color::Black, PieceKind::King, Square::from_name("e8")))
    castling_ &= ~(kBK | kBQ);
  if (!has(Color::Black, PieceKind::Rook, Square::from_name("h8"))) castling_ &= ~kBK;
  if (!has(Color::Black, PieceKind::Rook, Square::from_name("a8"))) castling_ &= ~kBQ;
}

std::string Board::fen() const {
  std::ostringstream out;
  for (int rank = 7; rank >= 0; --rank) {
    int run = 0;
    for (int file = 0; file < 8; ++file) {
      const auto pc = piece_at(Square::from_file_rank(file, rank));
      if (!pc) {
        ++run;
        continue;
      }
      if (run) {
        out << run;
        run = 0;
      }
      char ch = piece_char(pc->second);
      if (pc->first == Color::White) ch = static_cast<char>(std::toupper(static_cast<unsigned char>(ch)));
      out << ch;
    }
    if (run) out << run;
    if (rank) out << '/';
  }
  out << ' ' << (stm_ == Color::White ? 'w' : 'b') << ' ';
  if (!castling_) {
    out << '-';
  } else {
    if (castling_ & kWK) out << 'K';
    if (castling_ & kWQ) out << 'Q';
    if (castling_ & kBK) out << 'k';
    if (castling_ & kBQ) out << 'q';
  }
  out << ' ' << (ep_ ? ep_->name() : "-");
  out << ' ' << halfmove_ << ' ' << fullmove_;
  return out.str();
}

void Board::set_piece(Square sq, Color c, PieceKind k) {
  clear_square(sq);
  bb_[idx(c, k)] |= sq.bit();
}

void Board::clear_square(Square sq) {
  const uint64_t mask = ~sq.bit();
  for (auto& bb : bb_) bb &= mask;
}

Board Board::orient_to_player() const {
  if (stm_ == Color::White) {
    Board b = *this;
    b.orient_ = Orientation::PlayerRelative;
    return b;
  }
  Board b;
  // Rank mirror: byte-swap flips ranks while keeping files; colors swap roles.
  for (int k = 0; k < 6; ++k) {
    b.bb_[idx(Color::White, static_cast<PieceKind>(k))] =
        __builtin_bswap64(bb_[idx(Color::Black, static_cast<PieceKind>(k))]);
    b.bb_[idx(Color::Black, static_cast<PieceKind>(k))] =
        __builtin_bswap64(bb_[idx(Color::White, static_cast<PieceKind>(k))]);
  }
  b.stm_ = Color::White;
  b.castling_ = static_cast<uint8_t>(((castling_ & (kBK | kBQ)) >> 2) | ((castling_ & (kWK | kWQ)) << 2));
  if (ep_) b.ep_ = ep_->mirrored();
  b.halfmove_ = halfmove_;
  b.fullmove_ = fullmove_;
  b.orient_ = Orientation::PlayerRelative;
  b.flipped_ = true;
  return b;
}

Board Board::apply_move(const Move& m) const {
  const auto legal = legal_moves();
  bool found = false;
  for (const auto& lm : legal) {
    if (lm == m) {
      found = true;
      break;
    }
  }
  if (!found) fail(ErrorKind::Illegal, "move " + m.uci() + " is not legal in this position");
  return apply_unchecked(m);
}

Board Board::apply_unchecked(const Move& m) const {
  Board b = *this;
  const auto moving = piece_at(m.from);
  if (!moving) fail(ErrorKind::Illegal, "no piece on " + m.from.name());
  const Color us = moving->first;
  const PieceKind kind = moving->second;
  const auto captured = piece_at(m.to);

  b.ep_ = std::nullopt;
  b.clear_square(m.from);
  b.clear_square(m.to);

  if (kind == PieceKind::Pawn) {
    // En-passant capture removes the pawn behind the target square.
    if (ep_ && m.to == *ep_ && !captured) {
      const int dir = us == Color::White ? -8 : 8;
      b.clear_square(Square(static_cast<uint8_t>(m.to.index() + dir)));
    }
    if (std::abs(int(m.to.rank()) - int(m.from.rank())) == 2) {
      const int dir = us == Color::White ? 8 : -8;
      b.ep_ = Square(static_cast<uint8_t>(m.from.index() + dir));
    }
    b.set_piece(m.to, us, m.promotion.value_or(PieceKind::Pawn));
    b.halfmove_ = 0;
  } else {
    if (kind == PieceKind::King && std::abs(int(m.to.file()) - int(m.from.file())) == 2) {
      // Castling: relocate the rook across the king.
      const int rank = m.from.rank();
      const bool kingside = m.to.file() > m.from.file();
      const Square rook_from = Square::from_file_rank(kingside ? 7 : 0, rank);
      const Square rook_to = Square::from_file_rank(kingside ? 5 : 3, rank);
      b.clear_square(rook_from);
      b.set_piece(rook_to, us, PieceKind::Rook);
    }
    b.set_piece(m.to, us, kind);
    b.halfmove_ = captured ? 0 : halfmove_ + 1;
  }

  b.normalize_castling();
  b.stm_ = other(us);
  if (us == Color::Black) b.fullmove_ = fullmove_ + 1;
  return b;
}

std::vector<Move> Board::legal_moves() const {
  std::vector<Move> pseudo;
  pseudo_moves(pseudo);
  std::vector<Move> legal;
  legal.reserve(pseudo.size());
  for (const auto& m : pseudo) {
    const Board next = apply_unchecked(m);
    if (!next.in_check(stm_)) legal.push_back(m);
  }
  return legal;
}

uint64_t Board::perft(int depth) const {
  if (depth <= 0) return 1;
  const auto moves = legal_moves();
  if (depth == 1) return moves.size();
  uint64_t total = 0;
  for (const auto& m : moves) total += apply_unchecked(m).perft(depth - 1);
  return total;
}

}  // namespace ply::chess
