#pragma once

#include <cmath>
#include <cstdint>
#include <random>
#include <string_view>

namespace unfold {

inline std::uint64_t splitmix64(std::uint64_t x) noexcept {
	x += 0x9e3779b97f4a7c15ULL;
	x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
	x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
	return x ^ (x >> 31);
}

inline std::uint64_t fnv1a64(std::string_view s, std::uint64_t h = 0xcbf29ce484222325ULL) noexcept {
	for (unsigned char ch : s) {
		h ^= ch;
		h *= 0x100000001b3ULL;
	}
	return h;
}

/// Mixes a master seed with a stream label into an independent sub-seed.
inline std::uint64_t derive_seed(std::uint64_t seed, std::string_view label) noexcept {
	return splitmix64(seed ^ fnv1a64(label));
}

inline std::uint64_t derive_seed(std::uint64_t seed, std::uint64_t index) noexcept {
	return splitmix64(splitmix64(seed) + index);
}

/// mt19937_64 with distribution code pinned here so streams do not depend on the standard library vendor.
class Rng {
public:
	explicit Rng(std::uint64_t seed) : engine_(seed) {}

	std::uint64_t next() { return engine_(); }

	/// Uniform in [0, 1).
	double uniform() { return static_cast<double>(engine_() >> 11) * 0x1.0p-53; }

	double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }

	/// Uniform integer in [lo, hi].
	int uniform_int(int lo, int hi) {
		const auto span = static_cast<std::uint64_t>(hi - lo + 1);
		return lo + static_cast<int>(engine_() % span);
	}

	double normal() {
		// Box-Muller; one value per call keeps the stream position easy to reason about.
		double u1 = uniform();
		while (u1 <= 0.0) u1 = uniform();
		const double u2 = uniform();
		return std::sqrt(-2.0 * std::log(u1)) * std::cos(2.0 * 3.14159265358979323846 * u2);
	}

private:
	std::mt19937_64 engine_;
};

}  // namespace unfold
