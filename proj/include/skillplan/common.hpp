#pragma once

#include <cmath>
#include <cstdint>
#include <functional>
#include <random>
#include <stdexcept>
#include <string>

namespace skillplan {

enum class ErrorCode {
  InvalidArgument,
  Parse,
  Io,
  MissingCheckpoint,
  Unreachable,
  OutOfRegion,
  DimensionMismatch,
  PreconditionViolation,
  InvalidInitialState,
  Diverged,
  ExecutionFailed,
  UnknownScenario,
  Internal,
};

const char* error_code_name(ErrorCode code);

class Error : public std::runtime_error {
 public:
  Error(ErrorCode code, const std::string& message)
      : std::runtime_error(message), code_(code) {}

  ErrorCode code() const noexcept { return code_; }

 private:
  ErrorCode code_;
};

/// Raised by the PDDL reader; carries a 1-based source position.
class ParseError : public Error {
 public:
  ParseError(int line, int column, const std::string& what);

  int line() const noexcept { return line_; }
  int column() const noexcept { return column_; }

 private:
  int line_;
  int column_;
};

using Rng = std::mt19937_64;

/// splitmix64 finalizer; used to derive independent stream seeds.
constexpr std::uint64_t mix_seed(std::uint64_t x) {
  x += 0x9e3779b97f4a7c15ull;
  x = (x ^ (x >> 30u)) * 0xbf58476d1ce4e5b9ull;
  x = (x ^ (x >> 27u)) * 0x94d049bb133111ebull;
  return x ^ (x >> 31u);
}

constexpr std::uint64_t derive_seed(std::uint64_t base, std::uint64_t a,
                                    std::uint64_t b = 0) {
  return mix_seed(mix_seed(base ^ mix_seed(a + 1)) ^ mix_seed(b + 0x51ed27ull));
}

std::uint64_t hash_string(const std::string& s);

constexpr double kPi = 3.141592653589793238462643383279502884;

struct Vec2 {
  double x = 0.0;
  double y = 0.0;

  Vec2 operator+(Vec2 o) const { return {x + o.x, y + o.y}; }
  Vec2 operator-(Vec2 o) const { return {x - o.x, y - o.y}; }
  Vec2 operator*(double s) const { return {x * s, y * s}; }
  Vec2& operator+=(Vec2 o) {
    x += o.x;
    y += o.y;
    return *this;
  }
  bool operator==(const Vec2&) const = default;

  double dot(Vec2 o) const { return x * o.x + y * o.y; }
  double cross(Vec2 o) const { return x * o.y - y * o.x; }
  double norm() const { return std::hypot(x, y); }
  Vec2 perp() const { return {-y, x}; }
  Vec2 normalized() const {
    const double n = norm();
    return n > 0.0 ? Vec2{x / n, y / n} : Vec2{1.0, 0.0};
  }
};

inline Vec2 unit_from_angle(double angle) {
  return {std::cos(angle), std::sin(angle)};
}

/// Wraps an angle into (-pi, pi].
double normalize_angle(double angle);

/// Non-fatal diagnostics (k larger than the index, single-class datasets...).
/// The default handler writes to stderr; an empty handler silences them.
using WarningHandler = std::function<void(const std::string&)>;
void set_warning_handler(WarningHandler handler);
void warn(const std::string& message);

/// Whole-file I/O; failures raise Error(Io) naming the path.
std::string read_text_file(const std::string& path);
void write_text_file(const std::string& path, const std::string& text);

/// Worker count for `threads` (0 selects the hardware concurrency).
int resolve_threads(int threads);

/// Runs fn(0..n-1) on up to `threads` workers; the first exception is rethrown.
void parallel_for(std::size_t n, int threads, const std::function<void(std::size_t)>& fn);

}  // namespace skillplan
