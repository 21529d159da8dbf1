#include "conceptbp/board.hpp"

#include <algorithm>
#include <cmath>

namespace conceptbp::board {

namespace {

constexpr std::array<std::pair<int, int>, 8> kKnightSteps{
    {{1, 2}, {2, 1}, {2, -1}, {1, -2}, {-1, -2}, {-2, -1}, {-2, 1}, {-1, 2}}};
constexpr std::array<std::pair<int, int>, 8> kKingSteps{
    {{1, 0}, {1, 1}, {0, 1}, {-1, 1}, {-1, 0}, {-1, -1}, {0, -1}, {1, -1}}};
// Orthogonal directions first, then diagonals.
constexpr std::array<std::pair<int, int>, 8> kDirections = kKingSteps;

bool on_board(int f, int r) { return f >= 0 && f < kSize && r >= 0 && r < kSize; }
bool is_diagonal(std::pair<int, int> d) { return d.first != 0 && d.second != 0; }

struct Tables {
  std::array<std::vector<int>, kSquares> knight;
  std::array<std::vector<int>, kSquares> king;
  // pawn_sources[color][sq]: squares from which a pawn of `color` attacks sq.
  std::array<std::array<std::vector<int>, kSquares>, 2> pawn_sources;
  std::array<std::array<std::vector<int>, 8>, kSquares> rays;

  Tables() {
    for (int sq = 0; sq < kSquares; ++sq) {
      const int f = file_of(sq), r = rank_of(sq);
      for (auto [df, dr] : kKnightSteps)
        if (on_board(f + df, r + dr)) knight[sq].push_back(square(f + df, r + dr));
      for (auto [df, dr] : kKingSteps)
        if (on_board(f + df, r + dr)) king[sq].push_back(square(f + df, r + dr));
      // A white pawn attacks upward, so it sits one rank below its target.
      for (int df : {-1, 1}) {
        if (on_board(f + df, r - 1)) pawn_sources[0][sq].push_back(square(f + df, r - 1));
        if (on_board(f + df, r + 1)) pawn_sources[1][sq].push_back(square(f + df, r + 1));
      }
      for (std::size_t d = 0; d < kDirections.size(); ++d) {
        auto [df, dr] = kDirections[d];
        for (int step = 1; on_board(f + df * step, r + dr * step); ++step)
          rays[sq][d].push_back(square(f + df * step, r + dr * step));
      }
    }
  }
};

const Tables& tables() {
  static const Tables t;
  return t;
}

bool holds(const Board& b, int sq, PieceType type, Color color) {
  auto p = b.at(sq);
  return p && p->type == type && p->color == color;
}

// Whether a piece standing on `from` attacks `target`, by direct geometry.
bool piece_attacks(const Board& b, Piece piece, int from, int target) {
  const int df = file_of(target) - file_of(from);
  const int dr = rank_of(target) - rank_of(from);
  if (df == 0 && dr == 0) return false;
  const int adf = std::abs(df), adr = std::abs(dr);
  auto path_clear = [&] {
    const int sf = (df > 0) - (df < 0), sr = (dr > 0) - (dr < 0);
    int f = file_of(from) + sf, r = rank_of(from) + sr;
    while (square(f, r) != target) {
      if (b.at(square(f, r))) return false;
      f += sf;
      r += sr;
    }
    return true;
  };
  switch (piece.type) {
    case PieceType::Pawn:
      return adf == 1 && dr == (piece.color == Color::White ? 1 : -1);
    case PieceType::Knight:
      return (adf == 1 && adr == 2) || (adf == 2 && adr == 1);
    case PieceType::King:
      return adf <= 1 && adr <= 1;
    case PieceType::Rook:
      return (df == 0 || dr == 0) && path_clear();
    case PieceType::Queen:
      return (df == 0 || dr == 0 || adf == adr) && path_clear();
  }
  return false;
}

int material_value(PieceType t) {
  switch (t) {
    case PieceType::Pawn: return 1;
    case PieceType::Knight: return 3;
    case PieceType::Rook: return 5;
    case PieceType::Queen: return 9;
    case PieceType::King: return 0;
  }
  return 0;
}

double threat_with(const Board& board, bool (*attacked)(const Board&, int, Color)) {
  const Color side = board.side_to_move();
  auto queens = board.find({PieceType::Queen, side});
  if (queens.empty()) throw Error("side to move has no queen");
  for (int q : queens)
    if (attacked(board, q, opponent(side))) return 1.0;
  return 0.0;
}

}  // namespace

std::size_t plane_of(Piece piece) {
  return static_cast<std::size_t>(piece.type) + (piece.color == Color::Black ? 5 : 0);
}

Piece piece_of_plane(std::size_t plane) {
  if (plane >= kPiecePlanes) throw Error("no piece plane " + std::to_string(plane));
  return {static_cast<PieceType>(plane % 5), plane < 5 ? Color::White : Color::Black};
}

char piece_char(Piece piece) {
  static constexpr char kWhite[] = "PNRQK";
  static constexpr char kBlack[] = "pnrqk";
  const auto i = static_cast<std::size_t>(piece.type);
  return piece.color == Color::White ? kWhite[i] : kBlack[i];
}

std::optional<Piece> piece_from_char(char c) {
  for (std::size_t plane = 0; plane < kPiecePlanes; ++plane) {
    auto p = piece_of_plane(plane);
    if (piece_char(p) == c) return p;
  }
  return std::nullopt;
}

std::string square_name(int sq) {
  return std::string(1, static_cast<char>('a' + file_of(sq))) + std::to_string(rank_of(sq) + 1);
}

Board Board::starting_position() {
  Board b(Color::White);
  const PieceType back[] = {PieceType::Rook, PieceType::Knight, PieceType::Queen,
                            PieceType::King, PieceType::Knight, PieceType::Rook};
  for (int f = 0; f < kSize; ++f) {
    b.set(square(f, 0), Piece{back[f], Color::White});
    b.set(square(f, 1), Piece{PieceType::Pawn, Color::White});
    b.set(square(f, 4), Piece{PieceType::Pawn, Color::Black});
    b.set(square(f, 5), Piece{back[f], Color::Black});
  }
  return b;
}

Board Board::from_text(std::string_view text) {
  std::vector<std::string_view> lines;
  while (!text.empty()) {
    auto nl = text.find('\n');
    auto line = text.substr(0, nl);
    if (!line.empty() && line.back() == '\r') line.remove_suffix(1);
    if (!line.empty() && line.front() != '#') lines.push_back(line);
    if (nl == std::string_view::npos) break;
    text.remove_prefix(nl + 1);
  }
  if (lines.size() != kSize + 1)
    throw FormatError("board text needs 6 rank lines and a side line, got " + std::to_string(lines.size()) +
                      " lines");
  Board b;
  for (int row = 0; row < kSize; ++row) {
    auto line = lines[static_cast<std::size_t>(row)];
    if (line.size() != kSize) throw FormatError("board rank line must have 6 characters: '" + std::string(line) + "'");
    for (int f = 0; f < kSize; ++f) {
      const char c = line[static_cast<std::size_t>(f)];
      if (c == '.') continue;
      auto p = piece_from_char(c);
      if (!p) throw FormatError(std::string("unknown piece character '") + c + "'");
      b.set(square(f, kSize - 1 - row), p);
    }
  }
  const auto side = lines.back();
  if (side == "w") b.side_ = Color::White;
  else if (side == "b") b.side_ = Color::Black;
  else throw FormatError("side to move must be 'w' or 'b', got '" + std::string(side) + "'");
  return b;
}

std::string Board::to_text() const {
  std::string out;
  for (int r = kSize - 1; r >= 0; --r) {
    for (int f = 0; f < kSize; ++f) {
      auto p = at(square(f, r));
      out += p ? piece_char(*p) : '.';
    }
    out += '\n';
  }
  out += side_ == Color::White ? "w\n" : "b\n";
  return out;
}

Board Board::decode(const Tensor& planes) {
  Shape expected{kPlanes, kSize, kSize};
  Tensor t = planes.rank() == 4 && planes.dim(0) == 1 ? planes.reshaped(expected) : planes;
  if (t.shape() != expected) throw ShapeError("board encoding must be [11,6,6], got " + shape_string(t.shape()));
  for (double v : t.data())
    if (v != 0.0 && v != 1.0) throw FormatError("board encoding entries must be 0 or 1");
  Board b;
  for (int sq = 0; sq < kSquares; ++sq) {
    for (std::size_t plane = 0; plane < kPiecePlanes; ++plane) {
      if (t[plane * kSquares + static_cast<std::size_t>(sq)] == 0.0) continue;
      if (b.at(sq)) throw FormatError("square " + square_name(sq) + " holds more than one piece");
      b.set(sq, piece_of_plane(plane));
    }
  }
  const double side = t[kSidePlane * kSquares];
  for (int sq = 0; sq < kSquares; ++sq)
    if (t[kSidePlane * kSquares + static_cast<std::size_t>(sq)] != side)
      throw FormatError("side-to-move plane is not uniform");
  b.side_ = side == 1.0 ? Color::White : Color::Black;
  return b;
}

Tensor Board::encode() const {
  Tensor t(Shape{kPlanes, kSize, kSize}, 0.0);
  for (int sq = 0; sq < kSquares; ++sq)
    if (auto p = at(sq)) t[plane_of(*p) * kSquares + static_cast<std::size_t>(sq)] = 1.0;
  if (side_ == Color::White)
    for (int sq = 0; sq < kSquares; ++sq) t[kSidePlane * kSquares + static_cast<std::size_t>(sq)] = 1.0;
  return t;
}

int Board::count(Piece piece) const {
  return static_cast<int>(std::count(squares_.begin(), squares_.end(), std::optional<Piece>(piece)));
}

std::vector<int> Board::find(Piece piece) const {
  std::vector<int> out;
  for (int sq = 0; sq < kSquares; ++sq)
    if (at(sq) == piece) out.push_back(sq);
  return out;
}

int Board::occupied() const {
  return static_cast<int>(std::count_if(squares_.begin(), squares_.end(), [](auto p) { return p.has_value(); }));
}

bool square_attacked(const Board& b, int target, Color by) {
  const auto& t = tables();
  const auto idx = static_cast<std::size_t>(target);
  for (int s : t.knight[idx])
    if (holds(b, s, PieceType::Knight, by)) return true;
  for (int s : t.king[idx])
    if (holds(b, s, PieceType::King, by)) return true;
  for (int s : t.pawn_sources[by == Color::White ? 0 : 1][idx])
    if (holds(b, s, PieceType::Pawn, by)) return true;
  for (std::size_t d = 0; d < kDirections.size(); ++d) {
    for (int s : t.rays[idx][d]) {
      auto p = b.at(s);
      if (!p) continue;
      if (p->color == by &&
          (p->type == PieceType::Queen || (p->type == PieceType::Rook && !is_diagonal(kDirections[d]))))
        return true;
      break;
    }
  }
  return false;
}

bool square_attacked_by_enumeration(const Board& b, int target, Color by) {
  for (int from = 0; from < kSquares; ++from) {
    auto p = b.at(from);
    if (p && p->color == by && piece_attacks(b, *p, from, target)) return true;
  }
  return false;
}

bool in_check(const Board& b, Color side) {
  for (int k : b.find({PieceType::King, side}))
    if (square_attacked(b, k, opponent(side))) return true;
  return false;
}

std::vector<std::string> legality_violations(const Board& b) {
  std::vector<std::string> out;
  for (Color c : {Color::White, Color::Black}) {
    const char* who = c == Color::White ? "white" : "black";
    const int kings = b.count({PieceType::King, c});
    if (kings != 1) out.push_back(std::string(who) + " has " + std::to_string(kings) + " kings");
  }
  for (int f = 0; f < kSize; ++f)
    for (int r : {0, kSize - 1})
      if (auto p = b.at(square(f, r)); p && p->type == PieceType::Pawn)
        out.push_back("pawn on back rank at " + square_name(square(f, r)));
  if (in_check(b, opponent(b.side_to_move()))) out.push_back("side not to move is in check");
  return out;
}

bool is_legal(const Board& b) { return legality_violations(b).empty(); }

bool is_legal_encoding(const Tensor& planes) {
  try {
    return is_legal(Board::decode(planes));
  } catch (const FormatError&) {
    return false;
  }
}

double queen_threat(const Board& b) { return threat_with(b, &square_attacked); }
double queen_threat_by_enumeration(const Board& b) { return threat_with(b, &square_attacked_by_enumeration); }

std::vector<Board> generate_boards(std::size_t n, std::uint64_t seed, const GenerateOptions& options) {
  if (options.min_extra_pieces < 0 || options.max_extra_pieces < options.min_extra_pieces ||
      options.max_extra_pieces > kSquares - 2)
    throw ConfigError("invalid extra piece range");
  Rng rng(seed);
  const PieceType extras[] = {PieceType::Pawn, PieceType::Knight, PieceType::Rook, PieceType::Queen};
  std::vector<Board> boards;
  boards.reserve(n);
  auto random_vacant = [&](const Board& b, int rank_lo, int rank_hi) {
    for (;;) {
      const int sq = static_cast<int>(rng.below(kSquares));
      if (!b.at(sq) && rank_of(sq) >= rank_lo && rank_of(sq) <= rank_hi) return sq;
    }
  };
  while (boards.size() < n) {
    Board b(rng.bernoulli(0.5) ? Color::White : Color::Black);
    b.set(random_vacant(b, 0, kSize - 1), Piece{PieceType::King, Color::White});
    b.set(random_vacant(b, 0, kSize - 1), Piece{PieceType::King, Color::Black});
    const auto span = static_cast<std::uint64_t>(options.max_extra_pieces - options.min_extra_pieces + 1);
    const int extra = options.min_extra_pieces + static_cast<int>(rng.below(span));
    for (int i = 0; i < extra; ++i) {
      Piece p{extras[rng.below(4)], rng.bernoulli(0.5) ? Color::White : Color::Black};
      if (i == 0 && rng.bernoulli(options.queen_probability)) p = {PieceType::Queen, b.side_to_move()};
      const bool pawn = p.type == PieceType::Pawn;
      b.set(random_vacant(b, pawn ? 1 : 0, pawn ? kSize - 2 : kSize - 1), p);
    }
    if (is_legal(b)) boards.push_back(b);
  }
  return boards;
}

std::vector<Board> generate_opening_boards(std::size_t n, std::uint64_t seed) {
  Rng rng(seed);
  const Board start = Board::starting_position();
  std::vector<Board> boards;
  boards.reserve(n);
  while (boards.size() < n) {
    Board b(rng.bernoulli(0.5) ? Color::White : Color::Black);
    const double keep = rng.uniform(0.3, 1.0);
    std::vector<int> movable;
    for (int sq = 0; sq < kSquares; ++sq) {
      const auto p = start.at(sq);
      if (!p) continue;
      if (p->type == PieceType::King || rng.bernoulli(keep)) {
        b.set(sq, p);
        if (p->type != PieceType::King) movable.push_back(sq);
      }
    }
    const auto moves = std::min<std::size_t>(rng.below(4), movable.size());
    rng.shuffle(movable);
    for (std::size_t i = 0; i < moves; ++i) {
      const auto p = b.at(movable[i]);
      std::vector<int> targets;
      for (int sq = 0; sq < kSquares; ++sq)
        if (!b.at(sq) && (p->type != PieceType::Pawn || (rank_of(sq) > 0 && rank_of(sq) < kSize - 1)))
          targets.push_back(sq);
      if (targets.empty()) break;
      b.set(movable[i], std::nullopt);
      b.set(targets[rng.below(targets.size())], p);
    }
    if (is_legal(b)) boards.push_back(b);
  }
  return boards;
}

namespace {

void check_encoding_shape(const Tensor& planes) {
  if (planes.shape() != Shape{kPlanes, kSize, kSize})
    throw ShapeError("board encoding must be [11,6,6], got " + shape_string(planes.shape()));
}

}  // namespace

Tensor mirror_files(const Tensor& planes) {
  check_encoding_shape(planes);
  Tensor out(planes.shape());
  for (std::size_t p = 0; p < kPlanes; ++p)
    for (int sq = 0; sq < kSquares; ++sq)
      out[p * kSquares + static_cast<std::size_t>(square(kSize - 1 - file_of(sq), rank_of(sq)))] =
          planes[p * kSquares + static_cast<std::size_t>(sq)];
  return out;
}

Tensor swap_colours(const Tensor& planes) {
  check_encoding_shape(planes);
  Tensor out(planes.shape());
  for (std::size_t p = 0; p < kPlanes; ++p)
    for (int sq = 0; sq < kSquares; ++sq) {
      const double v = planes[p * kSquares + static_cast<std::size_t>(sq)];
      const auto target = static_cast<std::size_t>(square(file_of(sq), kSize - 1 - rank_of(sq)));
      if (p == kSidePlane)
        out[p * kSquares + target] = 1.0 - v;
      else
        out[((p + kPiecePlanes / 2) % kPiecePlanes) * kSquares + target] = v;
    }
  return out;
}

Tensor corrupt(const Board& legal, Corruption kind, Rng& rng) {
  if (!is_legal(legal)) throw Error("corrupt() expects a legal board");
  Board b = legal;
  auto vacant = [&](auto accept) {
    std::vector<int> options;
    for (int sq = 0; sq < kSquares; ++sq)
      if (!b.at(sq) && accept(sq)) options.push_back(sq);
    if (options.empty()) throw Error("no vacant square for corruption");
    return options[rng.below(options.size())];
  };
  switch (kind) {
    case Corruption::ExtraKing: {
      const Color c = rng.bernoulli(0.5) ? Color::White : Color::Black;
      b.set(vacant([](int) { return true; }), Piece{PieceType::King, c});
      return b.encode();
    }
    case Corruption::MissingKing: {
      const Color c = rng.bernoulli(0.5) ? Color::White : Color::Black;
      b.set(b.find({PieceType::King, c}).front(), std::nullopt);
      return b.encode();
    }
    case Corruption::BackRankPawn: {
      const Color c = rng.bernoulli(0.5) ? Color::White : Color::Black;
      // Any non-king back-rank square will do; a piece already there is replaced.
      std::vector<int> options;
      for (int sq = 0; sq < kSquares; ++sq)
        if ((rank_of(sq) == 0 || rank_of(sq) == kSize - 1) && !(b.at(sq) && b.at(sq)->type == PieceType::King))
          options.push_back(sq);
      b.set(options[rng.below(options.size())], Piece{PieceType::Pawn, c});
      return b.encode();
    }
    case Corruption::Stacking: {
      Tensor t = b.encode();
      std::vector<int> occupied;
      for (int sq = 0; sq < kSquares; ++sq)
        if (b.at(sq)) occupied.push_back(sq);
      const int sq = occupied[rng.below(occupied.size())];
      const auto current = plane_of(*b.at(sq));
      auto plane = static_cast<std::size_t>(rng.below(kPiecePlanes - 1));
      if (plane >= current) ++plane;
      t[plane * kSquares + static_cast<std::size_t>(sq)] = 1.0;
      return t;
    }
    case Corruption::OpponentInCheck: {
      // Put a piece of the side to move where it attacks the enemy king.
      const Color mover = b.side_to_move();
      const int king = b.find({PieceType::King, opponent(mover)}).front();
      std::vector<std::pair<int, Piece>> options;
      for (int sq = 0; sq < kSquares; ++sq) {
        if (b.at(sq)) continue;
        for (PieceType type : {PieceType::Pawn, PieceType::Knight, PieceType::Rook, PieceType::Queen}) {
          if (type == PieceType::Pawn && (rank_of(sq) == 0 || rank_of(sq) == kSize - 1)) continue;
          Piece p{type, mover};
          if (piece_attacks(b, p, sq, king)) options.emplace_back(sq, p);
        }
      }
      if (options.empty()) return corrupt(legal, Corruption::ExtraKing, rng);
      auto [sq, p] = options[rng.below(options.size())];
      b.set(sq, p);
      return b.encode();
    }
  }
  throw Error("unknown corruption");
}

Tensor auxiliary_targets(const Board& b) {
  const Color own = b.side_to_move();
  const Color opp = opponent(own);
  Tensor t(Shape{kAuxTargets}, 0.0);
  int material = 0;
  for (int sq = 0; sq < kSquares; ++sq) {
    auto p = b.at(sq);
    if (!p) continue;
    material += (p->color == own ? 1 : -1) * material_value(p->type);
    if (p->type == PieceType::King) continue;
    const auto type = static_cast<std::size_t>(p->type);
    if (p->color == own && square_attacked(b, sq, opp)) t[2 + type] = 1.0;
    if (p->color == opp && square_attacked(b, sq, own)) t[6 + type] = 1.0;
  }
  t[0] = material / 10.0;
  t[1] = in_check(b, own) ? 1.0 : 0.0;
  return t;
}

}  // namespace conceptbp::board
