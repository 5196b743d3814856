#include "textpix/rng.hpp"

#include <cmath>
#include <numbers>
#include <sstream>

#include "textpix/error.hpp"

namespace textpix {

namespace {

std::uint64_t splitmix64(std::uint64_t x) {
    x += 0x9e3779b97f4a7c15ull;
    x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ull;
    x = (x ^ (x >> 27)) * 0x94d049bb133111ebull;
    return x ^ (x >> 31);
}

}  // namespace

Rng::Rng(std::uint64_t seed) : seed_(seed), engine_(splitmix64(seed)) {}

Rng Rng::split(std::uint64_t stream) const {
    return Rng(splitmix64(seed_ ^ splitmix64(stream + 0xa0761d6478bd642full)));
}

std::uint64_t Rng::next_u64() { return engine_(); }

double Rng::next_uniform() {
    // 53 random mantissa bits.
    return static_cast<double>(next_u64() >> 11) * 0x1.0p-53;
}

double Rng::next_uniform(double lo, double hi) {
    return lo + (hi - lo) * next_uniform();
}

double Rng::next_normal() {
    // u1 in (0, 1] so the log is finite.
    const double u1 = (static_cast<double>(next_u64() >> 11) + 1.0) * 0x1.0p-53;
    const double u2 = next_uniform();
    return std::sqrt(-2.0 * std::log(u1)) * std::cos(2.0 * std::numbers::pi * u2);
}

std::string Rng::serialize() const {
    std::ostringstream out;
    out << seed_ << ' ' << engine_;
    return out.str();
}

Rng Rng::deserialize(const std::string& text) {
    std::istringstream in(text);
    std::uint64_t seed = 0;
    if (!(in >> seed)) {
        throw IoError("malformed rng state");
    }
    Rng rng(seed);
    if (!(in >> rng.engine_)) {
        throw IoError("malformed rng engine state");
    }
    return rng;
}

}  // namespace textpix
