#pragma once

#include <array>
#include <cstdint>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

#include "conceptbp/random.hpp"
#include "conceptbp/tensor.hpp"

// 6x6 chess without bishops. Squares are indexed rank * 6 + file with rank 0
// being White's back rank. The tensor encoding is [11, 6, 6]: planes 0-4 hold
// the white pawn, knight, rook, queen and king, planes 5-9 the black ones, and
// plane 10 is all ones when White is to move and all zeros otherwise.
namespace conceptbp::board {

inline constexpr int kSize = 6;
inline constexpr int kSquares = kSize * kSize;
inline constexpr std::size_t kPiecePlanes = 10;
inline constexpr std::size_t kPlanes = 11;
inline constexpr std::size_t kSidePlane = 10;

enum class PieceType : std::uint8_t { Pawn, Knight, Rook, Queen, King };
enum class Color : std::uint8_t { White, Black };

inline constexpr std::array<PieceType, 5> kPieceTypes{PieceType::Pawn, PieceType::Knight, PieceType::Rook,
                                                      PieceType::Queen, PieceType::King};

inline Color opponent(Color c) { return c == Color::White ? Color::Black : Color::White; }

struct Piece {
  PieceType type;
  Color color;
  friend bool operator==(Piece, Piece) = default;
};

std::size_t plane_of(Piece piece);
Piece piece_of_plane(std::size_t plane);
char piece_char(Piece piece);
std::optional<Piece> piece_from_char(char c);
inline int square(int file, int rank) { return rank * kSize + file; }
inline int file_of(int sq) { return sq % kSize; }
inline int rank_of(int sq) { return sq / kSize; }
std::string square_name(int sq);

class Board {
 public:
  explicit Board(Color side_to_move = Color::White) : side_(side_to_move) {}

  static Board starting_position();
  /// Six rank lines (rank 6 first) of 'PNRQK', 'pnrqk' or '.', then "w" or "b".
  /// Lines starting with '#' are ignored.
  static Board from_text(std::string_view text);
  std::string to_text() const;

  /// Decodes a [11,6,6] tensor; throws FormatError unless every entry is 0/1,
  /// each square holds at most one piece and the side plane is uniform.
  static Board decode(const Tensor& planes);
  Tensor encode() const;

  std::optional<Piece> at(int sq) const { return squares_.at(static_cast<std::size_t>(sq)); }
  void set(int sq, std::optional<Piece> piece) { squares_.at(static_cast<std::size_t>(sq)) = piece; }
  Color side_to_move() const { return side_; }
  void set_side_to_move(Color c) { side_ = c; }

  int count(Piece piece) const;
  std::vector<int> find(Piece piece) const;
  int occupied() const;

  friend bool operator==(const Board&, const Board&) = default;

 private:
  std::array<std::optional<Piece>, kSquares> squares_{};
  Color side_;
};

/// Attack test using precomputed leaper tables and slider rays, scanning
/// outward from the target square.
bool square_attacked(const Board& board, int target, Color by);
/// Independent attack test that enumerates every piece of `by` and checks its
/// geometry and blockers directly.
bool square_attacked_by_enumeration(const Board& board, int target, Color by);

bool in_check(const Board& board, Color side);

/// Names of the placement rules the board violates (empty when legal).
std::vector<std::string> legality_violations(const Board& board);
bool is_legal(const Board& board);
/// Legality of an encoded position; invalid encodings are illegal.
bool is_legal_encoding(const Tensor& planes);

/// 1 if any queen of the side to move is attacked, else 0. Throws when the
/// side to move has no queen.
double queen_threat(const Board& board);
/// Same concept computed with the enumeration attack test.
double queen_threat_by_enumeration(const Board& board);

struct GenerateOptions {
  int min_extra_pieces = 2;
  int max_extra_pieces = 8;
  double queen_probability = 0.75;  // chance the side to move receives a queen
};

/// Both kings plus 2-8 random pieces, resampled until legal.
std::vector<Board> generate_boards(std::size_t n, std::uint64_t seed, const GenerateOptions& options = {});
/// Opening-like dense positions: the starting position with each non-king
/// piece kept at a per-board rate in [0.3, 1], up to three survivors moved to
/// random squares, and a random side to move; resampled until legal.
std::vector<Board> generate_opening_boards(std::size_t n, std::uint64_t seed);

enum class Corruption { ExtraKing, MissingKing, BackRankPawn, Stacking, OpponentInCheck };
inline constexpr std::array<Corruption, 5> kCorruptions{Corruption::ExtraKing, Corruption::MissingKing,
                                                        Corruption::BackRankPawn, Corruption::Stacking,
                                                        Corruption::OpponentInCheck};

/// Symmetries of the rules, on encodings (multi-hot squares allowed): mirror
/// the files; or swap the colours, flip the ranks and pass the move. Both
/// preserve legality and map each rule violation onto itself.
Tensor mirror_files(const Tensor& planes);
Tensor swap_colours(const Tensor& planes);

/// Encoding of an illegal variant of a legal board. Stacked pieces produce a
/// multi-hot square, clamped to 1 per plane.
Tensor corrupt(const Board& legal, Corruption kind, Rng& rng);

/// Auxiliary regression targets for the substitute game model, from the side
/// to move's perspective: material balance / 10, in-check flag, own pawn /
/// knight / rook / queen attacked, opponent pawn / knight / rook / queen attacked.
inline constexpr std::size_t kAuxTargets = 10;
Tensor auxiliary_targets(const Board& board);

}  // namespace conceptbp::board
