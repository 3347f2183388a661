#pragma once

#include <cstdio>
#include <cstdlib>
#include <istream>
#include <ostream>
#include <stdexcept>
#include <string>
#include <vector>

namespace ecnet {

struct CheckpointError : std::runtime_error {
    using std::runtime_error::runtime_error;
};

// Checkpoint primitives: whitespace-separated tokens, doubles written as C99
// hex floats so every value round-trips bit-exactly through text.
inline void write_f64(std::ostream& os, double x) {
    char buf[40];
    std::snprintf(buf, sizeof buf, "%a", x);
    os << buf << '\n';
}

inline double read_f64(std::istream& is) {
    std::string tok;
    if (!(is >> tok)) throw CheckpointError("checkpoint: unexpected end of stream");
    char* end = nullptr;
    const double x = std::strtod(tok.c_str(), &end);
    if (end == tok.c_str() || *end != '\0')
        throw CheckpointError("checkpoint: malformed number '" + tok + "'");
    return x;
}

inline void write_u64(std::ostream& os, std::uint64_t v) { os << v << '\n'; }

inline std::uint64_t read_u64(std::istream& is) {
    std::uint64_t v = 0;
    if (!(is >> v)) throw CheckpointError("checkpoint: expected an integer");
    return v;
}

inline void write_i64(std::ostream& os, long long v) { os << v << '\n'; }

inline long long read_i64(std::istream& is) {
    long long v = 0;
    if (!(is >> v)) throw CheckpointError("checkpoint: expected an integer");
    return v;
}

inline void write_vec(std::ostream& os, const std::vector<double>& v) {
    write_u64(os, v.size());
    for (double x : v) write_f64(os, x);
}

inline std::vector<double> read_vec(std::istream& is) {
    const std::uint64_t n = read_u64(is);
    std::vector<double> v(n);
    for (double& x : v) x = read_f64(is);
    return v;
}

// Fills an existing buffer so the expected size doubles as a shape check.
inline void read_vec_into(std::istream& is, std::vector<double>& v) {
    const std::uint64_t n = read_u64(is);
    if (n != v.size()) throw CheckpointError("checkpoint: vector size mismatch");
    for (double& x : v) x = read_f64(is);
}

inline void expect_tag(std::istream& is, const std::string& tag) {
    std::string tok;
    if (!(is >> tok) || tok != tag)
        throw CheckpointError("checkpoint: expected tag '" + tag + "', got '" + tok + "'");
}

}  // namespace ecnet
