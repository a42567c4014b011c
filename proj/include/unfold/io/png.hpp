#pragma once

#include <png.h>

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <cstring>
#include <string>
#include <vector>

#include "unfold/core/error.hpp"
#include "unfold/core/feature_map.hpp"

namespace unfold::io {

/// [0,1] -> 0..255 with clamping and round-half-up.
template <class T>
std::uint8_t quantize8(T v) {
	const double c = std::clamp(static_cast<double>(v), 0.0, 1.0);
	return static_cast<std::uint8_t>(std::floor(c * 255.0 + 0.5));
}

/// Writes interleaved 8-bit pixels (1 = gray, 3 = RGB).
inline void write_png_bytes(const std::string& path, int width, int height, int channels,
							const std::vector<std::uint8_t>& pixels) {
	if (channels != 1 && channels != 3) throw ShapeError("write_png", "channels", "must be 1 or 3");
	if (pixels.size() != static_cast<std::size_t>(width) * height * channels)
		throw ShapeError("write_png", "pixel count", static_cast<long long>(width) * height * channels,
						 static_cast<long long>(pixels.size()));
	png_image image;
	std::memset(&image, 0, sizeof image);
	image.version = PNG_IMAGE_VERSION;
	image.width = static_cast<png_uint_32>(width);
	image.height = static_cast<png_uint_32>(height);
	image.format = channels == 3 ? PNG_FORMAT_RGB : PNG_FORMAT_GRAY;
	if (!png_image_write_to_file(&image, path.c_str(), 0, pixels.data(), 0, nullptr)) {
		const std::string msg = image.message;
		png_image_free(&image);
		throw DatasetError(path, "cannot write PNG: " + msg);
	}
}

/// Writes a 1- or 3-channel map with values in [0,1] (clamped) as an 8-bit PNG.
template <class T>
void write_png(const std::string& path, const FeatureMap<T>& img) {
	const int C = img.channels();
	if (C != 1 && C != 3) throw ShapeError("write_png", "channels", "must be 1 or 3, found " + std::to_string(C));
	std::vector<std::uint8_t> pixels(img.size());
	for (int y = 0; y < img.height(); ++y)
		for (int x = 0; x < img.width(); ++x)
			for (int c = 0; c < C; ++c)
				pixels[(static_cast<std::size_t>(y) * img.width() + x) * C + c] = quantize8(img(c, y, x));
	write_png_bytes(path, img.width(), img.height(), C, pixels);
}

/// Reads any PNG as RGB with values k/255.
template <class T = float>
FeatureMap<T> read_png(const std::string& path) {
	png_image image;
	std::memset(&image, 0, sizeof image);
	image.version = PNG_IMAGE_VERSION;
	if (!png_image_begin_read_from_file(&image, path.c_str())) {
		const std::string msg = image.message;
		png_image_free(&image);
		throw DatasetError(path, "cannot read PNG: " + msg);
	}
	image.format = PNG_FORMAT_RGB;
	std::vector<std::uint8_t> pixels(PNG_IMAGE_SIZE(image));
	if (!png_image_finish_read(&image, nullptr, pixels.data(), 0, nullptr)) {
		const std::string msg = image.message;
		png_image_free(&image);
		throw DatasetError(path, "cannot decode PNG: " + msg);
	}
	const int W = static_cast<int>(image.width);
	const int H = static_cast<int>(image.height);
	FeatureMap<T> out(3, H, W);
	for (int y = 0; y < H; ++y)
		for (int x = 0; x < W; ++x)
			for (int c = 0; c < 3; ++c)
				out(c, y, x) = static_cast<T>(pixels[(static_cast<std::size_t>(y) * W + x) * 3 + c] / 255.0);
	return out;
}

}  // namespace unfold::io
