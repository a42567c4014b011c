#pragma once

#include <cmath>
#include <cstdint>
#include <fstream>
#include <string>
#include <vector>

#include "unfold/core/error.hpp"
#include "unfold/core/feature_map.hpp"
#include "unfold/io/png.hpp"

namespace unfold::io {

namespace gif_detail {

/// Packs variable-width codes LSB-first into 255-byte sub-blocks.
class BitWriter {
public:
	void put(unsigned code, int bits) {
		acc_ |= static_cast<std::uint32_t>(code) << used_;
		used_ += bits;
		while (used_ >= 8) {
			bytes_.push_back(static_cast<std::uint8_t>(acc_ & 0xFF));
			acc_ >>= 8;
			used_ -= 8;
		}
	}

	std::vector<std::uint8_t> finish() {
		if (used_ > 0) bytes_.push_back(static_cast<std::uint8_t>(acc_ & 0xFF));
		acc_ = 0;
		used_ = 0;
		return std::move(bytes_);
	}

private:
	std::vector<std::uint8_t> bytes_;
	std::uint32_t acc_ = 0;
	int used_ = 0;
};

/// GIF-flavoured LZW of 8-bit indices (minimum code size 8, 12-bit cap, clear on a full table).
inline std::vector<std::uint8_t> lzw_encode(const std::vector<std::uint8_t>& indices) {
	constexpr unsigned kClear = 256;
	constexpr unsigned kEnd = 257;
	constexpr unsigned kMaxCodes = 4096;
	std::vector<int> table(static_cast<std::size_t>(kMaxCodes) * 256, -1);
	unsigned next = 258;
	int bits = 9;
	BitWriter out;
	auto emit = [&](unsigned code) {
		while (bits < 12 && next - 1 >= (1u << bits)) ++bits;
		out.put(code, bits);
	};
	auto reset = [&] {
		std::fill(table.begin(), table.end(), -1);
		next = 258;
		bits = 9;
	};
	out.put(kClear, bits);
	if (indices.empty()) {
		out.put(kEnd, bits);
		return out.finish();
	}
	unsigned cur = indices[0];
	for (std::size_t i = 1; i < indices.size(); ++i) {
		const std::uint8_t px = indices[i];
		const std::size_t key = static_cast<std::size_t>(cur) * 256 + px;
		if (table[key] >= 0) {
			cur = static_cast<unsigned>(table[key]);
			continue;
		}
		emit(cur);
		table[key] = static_cast<int>(next++);
		if (next == kMaxCodes) {
			emit(kClear);
			reset();
		}
		cur = px;
	}
	emit(cur);
	// The decoder adds an entry after reading the last code, one more than the encoder has made.
	++next;
	emit(kEnd);
	return out.finish();
}

/// 3-3-2 RGB palette index.
inline std::uint8_t palette_index(std::uint8_t r, std::uint8_t g, std::uint8_t b) {
	return static_cast<std::uint8_t>(((r >> 5) << 5) | ((g >> 5) << 2) | (b >> 6));
}

inline void put16(std::vector<std::uint8_t>& out, unsigned v) {
	out.push_back(static_cast<std::uint8_t>(v & 0xFF));
	out.push_back(static_cast<std::uint8_t>((v >> 8) & 0xFF));
}

}  // namespace gif_detail

/// Looping animated GIF with a fixed 3-3-2 palette. GIF delays have 10 ms resolution, so `delay_ms` is
/// rounded to the nearest centisecond.
template <class T>
void write_gif(const std::string& path, const std::vector<FeatureMap<T>>& frames, int delay_ms = 111) {
	using namespace gif_detail;
	if (frames.empty()) throw ShapeError("write_gif", "frame count", "must be >= 1");
	const int W = frames.front().width();
	const int H = frames.front().height();
	for (const auto& f : frames) {
		frames.front().require_same_shape("write_gif", f);
		if (f.channels() != 3) throw ShapeError("write_gif", "channels", 3, f.channels());
	}
	if (W > 65535 || H > 65535) throw ShapeError("write_gif", "size", "must be < 65536");

	std::vector<std::uint8_t> out{'G', 'I', 'F', '8', '9', 'a'};
	put16(out, static_cast<unsigned>(W));
	put16(out, static_cast<unsigned>(H));
	out.push_back(0xF7);  // global color table, 8 bits per primary, 256 entries
	out.push_back(0);
	out.push_back(0);
	for (unsigned i = 0; i < 256; ++i) {
		out.push_back(static_cast<std::uint8_t>(((i >> 5) & 7) * 255 / 7));
		out.push_back(static_cast<std::uint8_t>(((i >> 2) & 7) * 255 / 7));
		out.push_back(static_cast<std::uint8_t>((i & 3) * 255 / 3));
	}
	// NETSCAPE2.0 application extension: loop forever
	const std::uint8_t loop[] = {0x21, 0xFF, 0x0B, 'N', 'E', 'T', 'S', 'C', 'A', 'P', 'E', '2', '.', '0', 0x03, 0x01, 0, 0, 0};
	out.insert(out.end(), std::begin(loop), std::end(loop));

	const unsigned delay_cs = static_cast<unsigned>(std::lround(std::max(0, delay_ms) / 10.0));
	for (const auto& f : frames) {
		out.insert(out.end(), {0x21, 0xF9, 0x04, 0x04});
		put16(out, delay_cs);
		out.insert(out.end(), {0x00, 0x00});
		out.push_back(0x2C);
		put16(out, 0);
		put16(out, 0);
		put16(out, static_cast<unsigned>(W));
		put16(out, static_cast<unsigned>(H));
		out.push_back(0x00);
		std::vector<std::uint8_t> indices(static_cast<std::size_t>(W) * H);
		for (int y = 0; y < H; ++y)
			for (int x = 0; x < W; ++x)
				indices[static_cast<std::size_t>(y) * W + x] =
					palette_index(quantize8(f(0, y, x)), quantize8(f(1, y, x)), quantize8(f(2, y, x)));
		out.push_back(8);
		const auto data = lzw_encode(indices);
		for (std::size_t i = 0; i < data.size(); i += 255) {
			const std::size_t n = std::min<std::size_t>(255, data.size() - i);
			out.push_back(static_cast<std::uint8_t>(n));
			out.insert(out.end(), data.begin() + static_cast<std::ptrdiff_t>(i), data.begin() + static_cast<std::ptrdiff_t>(i + n));
		}
		out.push_back(0x00);
	}
	out.push_back(0x3B);

	std::ofstream file(path, std::ios::binary);
	if (!file) throw DatasetError(path, "cannot open for writing");
	file.write(reinterpret_cast<const char*>(out.data()), static_cast<std::streamsize>(out.size()));
	if (!file) throw DatasetError(path, "write failed");
}

}  // namespace unfold::io
