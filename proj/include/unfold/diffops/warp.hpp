#pragma once

#include <algorithm>
#include <cmath>

#include "unfold/core/feature_map.hpp"

namespace unfold {

namespace detail {

/// Bilinear tap along one axis with replicate-border clamping. `grad_live` is false when the
/// coordinate was clamped, in which case the sample does not move with the flow.
template <class T>
struct AxisTap {
	int i0, i1;
	T frac;
	bool grad_live;
};

template <class T>
inline AxisTap<T> axis_tap(T coord, int extent) {
	if (extent == 1) return {0, 0, T(0), false};
	const T hi = static_cast<T>(extent - 1);
	// A NaN coordinate keeps valid indices and propagates through the weight.
	if (std::isnan(coord)) return {0, 1, coord, false};
	bool live = true;
	if (coord < T(0)) {
		coord = T(0);
		live = false;
	} else if (coord > hi) {
		coord = hi;
		live = false;
	}
	int i0 = static_cast<int>(std::floor(coord));
	if (i0 > extent - 2) i0 = extent - 2;
	return {i0, i0 + 1, coord - static_cast<T>(i0), live};
}

}  // namespace detail

/// Backward warp: out(c, y, x) = image(c, y + v(y,x), x + u(y,x)) sampled bilinearly, coordinates clamped
/// to the image border. The same displacement applies to every channel.
template <class T>
FeatureMap<T> bilinear_warp(const FeatureMap<T>& image, const FlowField<T>& flow) {
	if (image.height() != flow.height()) throw ShapeError("bilinear_warp", "height", image.height(), flow.height());
	if (image.width() != flow.width()) throw ShapeError("bilinear_warp", "width", image.width(), flow.width());
	const int H = image.height();
	const int W = image.width();
	FeatureMap<T> out(image.shape());
	for (int y = 0; y < H; ++y) {
		for (int x = 0; x < W; ++x) {
			const auto tx = detail::axis_tap<T>(static_cast<T>(x) + flow.u(y, x), W);
			const auto ty = detail::axis_tap<T>(static_cast<T>(y) + flow.v(y, x), H);
			const T w00 = (T(1) - tx.frac) * (T(1) - ty.frac);
			const T w01 = tx.frac * (T(1) - ty.frac);
			const T w10 = (T(1) - tx.frac) * ty.frac;
			const T w11 = tx.frac * ty.frac;
			for (int c = 0; c < image.channels(); ++c) {
				out(c, y, x) = w00 * image(c, ty.i0, tx.i0) + w01 * image(c, ty.i0, tx.i1) +
							   w10 * image(c, ty.i1, tx.i0) + w11 * image(c, ty.i1, tx.i1);
			}
		}
	}
	return out;
}

template <class T>
struct WarpGrads {
	FeatureMap<T> image;  // empty when not requested
	FlowField<T> flow;
};

template <class T>
WarpGrads<T> bilinear_warp_backward(const FeatureMap<T>& image, const FlowField<T>& flow, const FeatureMap<T>& out_grad,
									bool need_image_grad = true) {
	image.require_same_shape("bilinear_warp_backward", out_grad);
	const int H = image.height();
	const int W = image.width();
	WarpGrads<T> g;
	if (need_image_grad) g.image = FeatureMap<T>(image.shape());
	g.flow = FlowField<T>(H, W);
	for (int y = 0; y < H; ++y) {
		for (int x = 0; x < W; ++x) {
			const auto tx = detail::axis_tap<T>(static_cast<T>(x) + flow.u(y, x), W);
			const auto ty = detail::axis_tap<T>(static_cast<T>(y) + flow.v(y, x), H);
			T du = 0;
			T dv = 0;
			for (int c = 0; c < image.channels(); ++c) {
				const T d = out_grad(c, y, x);
				const T a = image(c, ty.i0, tx.i0);
				const T b = image(c, ty.i0, tx.i1);
				const T cc = image(c, ty.i1, tx.i0);
				const T e = image(c, ty.i1, tx.i1);
				if (tx.grad_live) du += d * ((T(1) - ty.frac) * (b - a) + ty.frac * (e - cc));
				if (ty.grad_live) dv += d * ((T(1) - tx.frac) * (cc - a) + tx.frac * (e - b));
				if (need_image_grad) {
					g.image(c, ty.i0, tx.i0) += d * (T(1) - tx.frac) * (T(1) - ty.frac);
					g.image(c, ty.i0, tx.i1) += d * tx.frac * (T(1) - ty.frac);
					g.image(c, ty.i1, tx.i0) += d * (T(1) - tx.frac) * ty.frac;
					g.image(c, ty.i1, tx.i1) += d * tx.frac * ty.frac;
				}
			}
			g.flow.u(y, x) = du;
			g.flow.v(y, x) = dv;
		}
	}
	return g;
}

}  // namespace unfold
