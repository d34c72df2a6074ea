#include "tracelens/common.hpp"

#include <algorithm>
#include <cstdio>
#include <cstdlib>
#include <cstring>
#include <fstream>
#include <mutex>
#include <thread>
#include <vector>

namespace tracelens {

LogLevel log_level() {
    static LogLevel level = [] {
        const char* env = std::getenv("TRACELENS_LOG");
        if (!env) return LogLevel::info;
        std::string_view v(env);
        if (v == "error") return LogLevel::error;
        if (v == "debug") return LogLevel::debug;
        return LogLevel::info;
    }();
    return level;
}

void log_line(LogLevel level, const std::string& msg) {
    if (static_cast<int>(level) > static_cast<int>(log_level())) return;
    static std::mutex mu;
    std::lock_guard<std::mutex> lock(mu);
    const char* tag = level == LogLevel::error ? "error" : level == LogLevel::info ? "info" : "debug";
    std::fprintf(stderr, "[tracelens %s] %s\n", tag, msg.c_str());
}

Fnv1a& Fnv1a::feed(const void* data, size_t len) {
    const auto* p = static_cast<const unsigned char*>(data);
    for (size_t i = 0; i < len; ++i) {
        state_ ^= p[i];
        state_ *= 1099511628211ull;
    }
    return *this;
}

Fnv1a& Fnv1a::feed_u64(uint64_t v) {
    unsigned char buf[8];
    for (int i = 0; i < 8; ++i) buf[i] = static_cast<unsigned char>(v >> (8 * i));
    return feed(buf, 8);
}

Fnv1a& Fnv1a::feed_f64(double v) {
    uint64_t bits;
    std::memcpy(&bits, &v, 8);
    return feed_u64(bits);
}

std::string Fnv1a::hex() const {
    static const char* digits = "0123456789abcdef";
    std::string out(16, '0');
    uint64_t v = state_;
    for (int i = 15; i >= 0; --i) {
        out[static_cast<size_t>(i)] = digits[v & 0xf];
        v >>= 4;
    }
    return out;
}

uint64_t fnv1a64(std::string_view s) {
    Fnv1a h;
    h.feed(s);
    return h.value();
}

std::string hash_file(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) fail("io", "cannot open file for hashing: " + path);
    Fnv1a h;
    char buf[1 << 16];
    while (in) {
        in.read(buf, sizeof(buf));
        h.feed(buf, static_cast<size_t>(in.gcount()));
    }
    return h.hex();
}

int resolve_threads(int requested) {
    if (requested > 0) return requested;
    unsigned hw = std::thread::hardware_concurrency();
    return hw == 0 ? 1 : static_cast<int>(hw);
}

void parallel_for(size_t n, int threads, const std::function<void(size_t, size_t)>& body) {
    if (n == 0) return;
    int t = std::min<size_t>(static_cast<size_t>(resolve_threads(threads)), n);
    if (t <= 1) {
        body(0, n);
        return;
    }
    std::vector<std::thread> workers;
    workers.reserve(static_cast<size_t>(t));
    size_t chunk = (n + static_cast<size_t>(t) - 1) / static_cast<size_t>(t);
    for (int i = 0; i < t; ++i) {
        size_t begin = static_cast<size_t>(i) * chunk;
        size_t end = std::min(n, begin + chunk);
        if (begin >= end) break;
        workers.emplace_back([&body, begin, end] { body(begin, end); });
    }
    for (auto& w : workers) w.join();
}

}  // namespace tracelens
