#pragma once

#include <array>
#include <bit>
#include <cmath>
#include <cstdint>
#include <fstream>
#include <string>
#include <vector>

#include "unfold/core/error.hpp"
#include "unfold/core/feature_map.hpp"

namespace unfold::io {

inline constexpr float kFloTag = 202021.25f;

/// Middlebury .flo: "PIEH" (float 202021.25), int32 width, int32 height, then (u,v) float pairs row by row.
template <class T>
void write_flo(const std::string& path, const FlowField<T>& flow) {
	std::ofstream f(path, std::ios::binary);
	if (!f) throw DatasetError(path, "cannot open for writing");
	auto put32 = [&](std::uint32_t v) {
		const char b[4] = {static_cast<char>(v & 0xFF), static_cast<char>((v >> 8) & 0xFF),
						   static_cast<char>((v >> 16) & 0xFF), static_cast<char>((v >> 24) & 0xFF)};
		f.write(b, 4);
	};
	put32(std::bit_cast<std::uint32_t>(kFloTag));
	put32(static_cast<std::uint32_t>(flow.width()));
	put32(static_cast<std::uint32_t>(flow.height()));
	for (int y = 0; y < flow.height(); ++y)
		for (int x = 0; x < flow.width(); ++x) {
			put32(std::bit_cast<std::uint32_t>(static_cast<float>(flow.u(y, x))));
			put32(std::bit_cast<std::uint32_t>(static_cast<float>(flow.v(y, x))));
		}
	if (!f) throw DatasetError(path, "write failed");
}

template <class T = float>
FlowField<T> read_flo(const std::string& path) {
	std::ifstream f(path, std::ios::binary);
	if (!f) throw DatasetError(path, "cannot open");
	auto get32 = [&]() {
		unsigned char b[4];
		if (!f.read(reinterpret_cast<char*>(b), 4)) throw DatasetError(path, "truncated .flo file");
		return static_cast<std::uint32_t>(b[0]) | static_cast<std::uint32_t>(b[1]) << 8 |
			   static_cast<std::uint32_t>(b[2]) << 16 | static_cast<std::uint32_t>(b[3]) << 24;
	};
	if (std::bit_cast<float>(get32()) != kFloTag) throw DatasetError(path, "bad .flo tag");
	const auto w = static_cast<std::int32_t>(get32());
	const auto h = static_cast<std::int32_t>(get32());
	if (w < 1 || h < 1 || w > (1 << 16) || h > (1 << 16)) throw DatasetError(path, "bad .flo dimensions");
	FlowField<T> flow(h, w);
	for (int y = 0; y < h; ++y)
		for (int x = 0; x < w; ++x) {
			flow.u(y, x) = static_cast<T>(std::bit_cast<float>(get32()));
			flow.v(y, x) = static_cast<T>(std::bit_cast<float>(get32()));
		}
	return flow;
}

namespace flo_detail {

/// Middlebury color wheel: RY 15, YG 6, GC 4, CB 11, BM 13, MR 6 hues.
inline std::vector<std::array<double, 3>> color_wheel() {
	const int segments[6] = {15, 6, 4, 11, 13, 6};
	std::vector<std::array<double, 3>> wheel;
	auto ramp = [](int i, int n) { return 255.0 * i / n; };
	for (int i = 0; i < segments[0]; ++i) wheel.push_back({255, ramp(i, segments[0]), 0});
	for (int i = 0; i < segments[1]; ++i) wheel.push_back({255 - ramp(i, segments[1]), 255, 0});
	for (int i = 0; i < segments[2]; ++i) wheel.push_back({0, 255, ramp(i, segments[2])});
	for (int i = 0; i < segments[3]; ++i) wheel.push_back({0, 255 - ramp(i, segments[3]), 255});
	for (int i = 0; i < segments[4]; ++i) wheel.push_back({ramp(i, segments[4]), 0, 255});
	for (int i = 0; i < segments[5]; ++i) wheel.push_back({255, 0, 255 - ramp(i, segments[5])});
	return wheel;
}

}  // namespace flo_detail

/// Color-wheel visualization in [0,1]: hue encodes direction, saturation encodes magnitude relative to
/// `max_radius` (the field's own maximum when <= 0). Zero flow maps to white.
template <class T>
FeatureMap<float> flow_to_color(const FlowField<T>& flow, double max_radius = 0.0) {
	if (max_radius <= 0.0) {
		for (int y = 0; y < flow.height(); ++y)
			for (int x = 0; x < flow.width(); ++x)
				max_radius = std::max(max_radius, std::hypot(static_cast<double>(flow.u(y, x)), static_cast<double>(flow.v(y, x))));
	}
	if (max_radius <= 0.0) max_radius = 1.0;
	static const auto wheel = flo_detail::color_wheel();
	const int ncols = static_cast<int>(wheel.size());
	FeatureMap<float> out(3, flow.height(), flow.width());
	for (int y = 0; y < flow.height(); ++y)
		for (int x = 0; x < flow.width(); ++x) {
			const double u = flow.u(y, x) / max_radius;
			const double v = flow.v(y, x) / max_radius;
			const double rad = std::min(1.0, std::hypot(u, v));
			const double angle = std::atan2(-v, -u) / M_PI;
			const double fk = (angle + 1.0) / 2.0 * (ncols - 1);
			const int k0 = static_cast<int>(std::floor(fk));
			const int k1 = (k0 + 1) % ncols;
			const double f = fk - k0;
			for (int c = 0; c < 3; ++c) {
				const double col = ((1.0 - f) * wheel[k0][c] + f * wheel[k1][c]) / 255.0;
				out(c, y, x) = static_cast<float>(1.0 - rad * (1.0 - col));
			}
		}
	return out;
}

}  // namespace unfold::io
