#pragma once

#include <array>
#include <cmath>
#include <limits>
#include <vector>

#include "unfold/core/feature_map.hpp"

namespace unfold {

/// 10 log10(peak^2 / MSE); +infinity when the images are identical.
template <class T>
double psnr(const FeatureMap<T>& a, const FeatureMap<T>& b, double peak = 1.0) {
	a.require_same_shape("psnr", b);
	double sum = 0.0;
	for (std::size_t i = 0; i < a.size(); ++i) {
		const double d = static_cast<double>(a.data()[i]) - b.data()[i];
		sum += d * d;
	}
	const double mse = sum / static_cast<double>(a.size());
	if (mse == 0.0) return std::numeric_limits<double>::infinity();
	return 10.0 * std::log10(peak * peak / mse);
}

struct SsimOptions {
	int window = 11;
	double sigma = 1.5;
	double k1 = 0.01;
	double k2 = 0.03;
	double peak = 1.0;
};

namespace detail {

inline std::vector<double> gaussian_kernel(int size, double sigma) {
	std::vector<double> k(size);
	double sum = 0.0;
	const double c = (size - 1) / 2.0;
	for (int i = 0; i < size; ++i) {
		k[i] = std::exp(-(i - c) * (i - c) / (2.0 * sigma * sigma));
		sum += k[i];
	}
	for (auto& v : k) v /= sum;
	return k;
}

/// Separable 'valid' filtering of an H x W plane.
inline std::vector<double> filter_valid(const std::vector<double>& plane, int H, int W, const std::vector<double>& k) {
	const int K = static_cast<int>(k.size());
	const int oh = H - K + 1;
	const int ow = W - K + 1;
	std::vector<double> rows(static_cast<std::size_t>(H) * ow);
	for (int y = 0; y < H; ++y)
		for (int x = 0; x < ow; ++x) {
			double s = 0.0;
			for (int i = 0; i < K; ++i) s += k[i] * plane[static_cast<std::size_t>(y) * W + x + i];
			rows[static_cast<std::size_t>(y) * ow + x] = s;
		}
	std::vector<double> out(static_cast<std::size_t>(oh) * ow);
	for (int y = 0; y < oh; ++y)
		for (int x = 0; x < ow; ++x) {
			double s = 0.0;
			for (int i = 0; i < K; ++i) s += k[i] * rows[static_cast<std::size_t>(y + i) * ow + x];
			out[static_cast<std::size_t>(y) * ow + x] = s;
		}
	return out;
}

}  // namespace detail

/// Gaussian-windowed SSIM (11x11, sigma 1.5, K1 0.01, K2 0.03), averaged over the fully covered pixels of
/// every channel.
template <class T>
double ssim(const FeatureMap<T>& a, const FeatureMap<T>& b, const SsimOptions& opt = {}) {
	a.require_same_shape("ssim", b);
	if (a.height() < opt.window) throw ShapeError("ssim", "height", "must be >= window size");
	if (a.width() < opt.window) throw ShapeError("ssim", "width", "must be >= window size");
	const auto k = detail::gaussian_kernel(opt.window, opt.sigma);
	const double c1 = (opt.k1 * opt.peak) * (opt.k1 * opt.peak);
	const double c2 = (opt.k2 * opt.peak) * (opt.k2 * opt.peak);
	const int H = a.height();
	const int W = a.width();
	double total = 0.0;
	std::size_t count = 0;
	for (int c = 0; c < a.channels(); ++c) {
		std::vector<double> x(a.plane()), y(a.plane()), xx(a.plane()), yy(a.plane()), xy(a.plane());
		for (int i = 0; i < a.plane(); ++i) {
			x[i] = a.channel(c)[i];
			y[i] = b.channel(c)[i];
			xx[i] = x[i] * x[i];
			yy[i] = y[i] * y[i];
			xy[i] = x[i] * y[i];
		}
		const auto mx = detail::filter_valid(x, H, W, k);
		const auto my = detail::filter_valid(y, H, W, k);
		const auto sxx = detail::filter_valid(xx, H, W, k);
		const auto syy = detail::filter_valid(yy, H, W, k);
		const auto sxy = detail::filter_valid(xy, H, W, k);
		for (std::size_t i = 0; i < mx.size(); ++i) {
			const double vx = sxx[i] - mx[i] * mx[i];
			const double vy = syy[i] - my[i] * my[i];
			const double cov = sxy[i] - mx[i] * my[i];
			total += ((2 * mx[i] * my[i] + c1) * (2 * cov + c2)) /
					 ((mx[i] * mx[i] + my[i] * my[i] + c1) * (vx + vy + c2));
		}
		count += mx.size();
	}
	return total / static_cast<double>(count);
}

}  // namespace unfold
