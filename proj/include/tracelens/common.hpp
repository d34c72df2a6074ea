#pragma once

#include <cstddef>
#include <cstdint>
#include <functional>
#include <stdexcept>
#include <string>
#include <string_view>

namespace tracelens {

inline constexpr std::string_view kToolVersion = "tracelens 0.1.0";

// Typed runtime error. `kind` is a stable machine-readable tag; the CLI
// surfaces it in its error JSON.
class Error : public std::runtime_error {
public:
    Error(std::string kind, const std::string& message)
        : std::runtime_error(message), kind_(std::move(kind)) {}

    const std::string& kind() const noexcept { return kind_; }

private:
    std::string kind_;
};

[[noreturn]] inline void fail(std::string kind, const std::string& message) {
    throw Error(std::move(kind), message);
}

// ---- logging ----------------------------------------------------------

enum class LogLevel : int { error = 0, info = 1, debug = 2 };

LogLevel log_level();  // from TRACELENS_LOG={error,info,debug}; default info
void log_line(LogLevel level, const std::string& msg);

inline void log_error(const std::string& m) { log_line(LogLevel::error, m); }
inline void log_info(const std::string& m) { log_line(LogLevel::info, m); }
inline void log_debug(const std::string& m) { log_line(LogLevel::debug, m); }

// ---- hashing -----------------------------------------------------------

// FNV-1a, 64 bit. Used for dataset fingerprints, config hashes and artifact
// hashes. Stable across platforms.
class Fnv1a {
public:
    Fnv1a& feed(const void* data, size_t len);
    Fnv1a& feed(std::string_view s) { return feed(s.data(), s.size()); }
    Fnv1a& feed_u64(uint64_t v);
    Fnv1a& feed_f64(double v);

    uint64_t value() const noexcept { return state_; }
    std::string hex() const;

private:
    uint64_t state_ = 1469598103934665603ull;
};

uint64_t fnv1a64(std::string_view s);
std::string hash_file(const std::string& path);  // hex digest of file bytes

// ---- parallel loop -----------------------------------------------------

// Splits [0, n) into contiguous chunks, one thread per chunk. Bodies must
// write only to disjoint slots so results are independent of `threads`.
void parallel_for(size_t n, int threads, const std::function<void(size_t, size_t)>& body);

int resolve_threads(int requested);  // <=0 => hardware concurrency

}  // namespace tracelens
