#include "skillplan/common.hpp"

#include <algorithm>
#include <atomic>
#include <exception>
#include <fstream>
#include <iostream>
#include <mutex>
#include <sstream>
#include <thread>
#include <vector>

namespace skillplan {

const char* error_code_name(ErrorCode code) {
  switch (code) {
    case ErrorCode::InvalidArgument:
      return "invalid argument";
    case ErrorCode::Parse:
      return "parse error";
    case ErrorCode::Io:
      return "i/o error";
    case ErrorCode::MissingCheckpoint:
      return "missing checkpoint";
    case ErrorCode::Unreachable:
      return "unreachable";
    case ErrorCode::OutOfRegion:
      return "out of region";
    case ErrorCode::DimensionMismatch:
      return "dimension mismatch";
    case ErrorCode::PreconditionViolation:
      return "precondition violation";
    case ErrorCode::InvalidInitialState:
      return "invalid initial state";
    case ErrorCode::Diverged:
      return "diverged";
    case ErrorCode::ExecutionFailed:
      return "execution failed";
    case ErrorCode::UnknownScenario:
      return "unknown scenario";
    case ErrorCode::Internal:
      return "internal error";
  }
  return "unknown";
}

namespace {
std::string position_message(int line, int column, const std::string& what) {
  std::ostringstream out;
  out << "line " << line << ", column " << column << ": " << what;
  return out.str();
}
}  // namespace

ParseError::ParseError(int line, int column, const std::string& what)
    : Error(ErrorCode::Parse, position_message(line, column, what)),
      line_(line),
      column_(column) {}

namespace {

std::mutex& warning_mutex() {
  static std::mutex m;
  return m;
}

WarningHandler& warning_handler() {
  static WarningHandler h = [](const std::string& m) { std::cerr << "warning: " << m << '\n'; };
  return h;
}

}  // namespace

void set_warning_handler(WarningHandler handler) {
  std::lock_guard lock(warning_mutex());
  warning_handler() = std::move(handler);
}

void warn(const std::string& message) {
  std::lock_guard lock(warning_mutex());
  if (warning_handler()) warning_handler()(message);
}

std::uint64_t hash_string(const std::string& s) {
  // FNV-1a, stable across platforms (std::hash is not).
  std::uint64_t h = 0xcbf29ce484222325ull;
  for (unsigned char c : s) {
    h ^= c;
    h *= 0x100000001b3ull;
  }
  return h;
}

double normalize_angle(double angle) {
  if (!std::isfinite(angle)) return angle;
  double a = std::fmod(angle, 2.0 * kPi);
  if (a <= -kPi) a += 2.0 * kPi;
  if (a > kPi) a -= 2.0 * kPi;
  return a;
}

int resolve_threads(int threads) {
  if (threads > 0) return threads;
  const unsigned hw = std::thread::hardware_concurrency();
  return hw == 0 ? 1 : static_cast<int>(hw);
}

void parallel_for(std::size_t n, int threads, const std::function<void(std::size_t)>& fn) {
  const std::size_t workers = std::min<std::size_t>(n, static_cast<std::size_t>(resolve_threads(threads)));
  if (workers <= 1) {
    for (std::size_t i = 0; i < n; ++i) fn(i);
    return;
  }
  std::atomic<std::size_t> next{0};
  std::exception_ptr failure;
  std::mutex failure_mutex;
  auto work = [&] {
    for (std::size_t i = next++; i < n; i = next++) {
      try {
        fn(i);
      } catch (...) {
        std::lock_guard lock(failure_mutex);
        if (!failure) failure = std::current_exception();
      }
    }
  };
  std::vector<std::thread> pool;
  for (std::size_t w = 0; w < workers; ++w) pool.emplace_back(work);
  for (auto& t : pool) t.join();
  if (failure) std::rethrow_exception(failure);
}

std::string read_text_file(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw Error(ErrorCode::Io, "cannot read '" + path + "'");
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

void write_text_file(const std::string& path, const std::string& text) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw Error(ErrorCode::Io, "cannot write '" + path + "'");
  out << text;
  if (!out.flush()) throw Error(ErrorCode::Io, "cannot write '" + path + "'");
}

}  // namespace skillplan
