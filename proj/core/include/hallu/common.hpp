#pragma once

#include <cstdint>
#include <stdexcept>
#include <string>
#include <string_view>

namespace hallu {

using TokenId = std::uint32_t;

// Reserved IDs. Regular tokens start at kFirstRegularToken.
inline constexpr TokenId kPad = 0;
inline constexpr TokenId kSubjectTok = 1;
inline constexpr TokenId kPredicateTok = 2;
inline constexpr TokenId kObjectTok = 3;
inline constexpr TokenId kEos = 4;
inline constexpr TokenId kFirstRegularToken = 5;

inline constexpr std::string_view kPadLiteral = "<PAD>";
inline constexpr std::string_view kSubjectLiteral = "<S_TKN>";
inline constexpr std::string_view kPredicateLiteral = "<P_TKN>";
inline constexpr std::string_view kObjectLiteral = "<O_TKN>";
inline constexpr std::string_view kEosLiteral = "<EOS>";

bool is_special_literal(std::string_view s) noexcept;
inline constexpr bool is_special_token(TokenId id) noexcept { return id < kFirstRegularToken; }

// Error taxonomy. The CLI maps these to exit codes.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

class ParseError : public Error {
 public:
  ParseError(std::string what, std::size_t line)
      : Error(std::move(what)), line_(line) {}
  std::size_t line() const noexcept { return line_; }

 private:
  std::size_t line_;
};

class ConfigError : public Error {
 public:
  using Error::Error;
};

class DependencyError : public Error {
 public:
  using Error::Error;
};

class NumericalError : public Error {
 public:
  using Error::Error;
};

class IoError : public Error {
 public:
  using Error::Error;
};

// Stable hashing for seeds and split assignment. Unlike std::hash these are
// identical across platforms and runs.
std::uint64_t fnv1a64(std::string_view data, std::uint64_t basis = 0xcbf29ce484222325ULL) noexcept;
std::uint64_t mix64(std::uint64_t x) noexcept;
std::uint64_t hash_combine(std::uint64_t a, std::uint64_t b) noexcept;
std::uint64_t seeded_hash(std::string_view data, std::uint64_t seed) noexcept;
// Maps the top 53 bits to [0, 1).
double unit_interval(std::uint64_t h) noexcept;

}  // namespace hallu
