#pragma once

#include <algorithm>

#include "unfold/core/feature_map.hpp"

namespace unfold {

/// 2x2 mean pooling.
template <class T>
FeatureMap<T> avg_downsample2(const FeatureMap<T>& x) {
	if (x.height() % 2 != 0) throw ShapeError("avg_downsample2", "height", "must be even, found " + std::to_string(x.height()));
	if (x.width() % 2 != 0) throw ShapeError("avg_downsample2", "width", "must be even, found " + std::to_string(x.width()));
	FeatureMap<T> out(x.channels(), x.height() / 2, x.width() / 2);
	for (int c = 0; c < x.channels(); ++c)
		for (int y = 0; y < out.height(); ++y)
			for (int xx = 0; xx < out.width(); ++xx)
				out(c, y, xx) = (x(c, 2 * y, 2 * xx) + x(c, 2 * y, 2 * xx + 1) + x(c, 2 * y + 1, 2 * xx) +
								 x(c, 2 * y + 1, 2 * xx + 1)) * T(0.25);
	return out;
}

template <class T>
FeatureMap<T> avg_downsample2_backward(const FeatureMap<T>& out_grad) {
	FeatureMap<T> dx(out_grad.channels(), out_grad.height() * 2, out_grad.width() * 2);
	for (int c = 0; c < dx.channels(); ++c)
		for (int y = 0; y < dx.height(); ++y)
			for (int x = 0; x < dx.width(); ++x) dx(c, y, x) = out_grad(c, y / 2, x / 2) * T(0.25);
	return dx;
}

namespace detail {

// Half-pixel-centred 2x bilinear upsampling: output index 2i samples input i-0.25, 2i+1 samples i+0.25,
// i.e. weights 3/4 on the nearer and 1/4 on the farther neighbour, clamped at the border.
inline void upsample_taps(int out_index, int in_extent, int& near, int& far) {
	const int i = out_index / 2;
	near = i;
	far = (out_index % 2 == 0) ? std::max(i - 1, 0) : std::min(i + 1, in_extent - 1);
}

template <class T>
FeatureMap<T> upsample2_bilinear(const FeatureMap<T>& x, T scale) {
	const int H = x.height() * 2;
	const int W = x.width() * 2;
	FeatureMap<T> out(x.channels(), H, W);
	for (int c = 0; c < x.channels(); ++c) {
		for (int y = 0; y < H; ++y) {
			int yn, yf;
			upsample_taps(y, x.height(), yn, yf);
			for (int xx = 0; xx < W; ++xx) {
				int xn, xf;
				upsample_taps(xx, x.width(), xn, xf);
				const T v = T(0.5625) * x(c, yn, xn) + T(0.1875) * x(c, yn, xf) + T(0.1875) * x(c, yf, xn) +
							T(0.0625) * x(c, yf, xf);
				out(c, y, xx) = v * scale;
			}
		}
	}
	return out;
}

template <class T>
FeatureMap<T> upsample2_bilinear_backward(const FeatureMap<T>& out_grad, T scale) {
	FeatureMap<T> dx(out_grad.channels(), out_grad.height() / 2, out_grad.width() / 2);
	for (int c = 0; c < out_grad.channels(); ++c) {
		for (int y = 0; y < out_grad.height(); ++y) {
			int yn, yf;
			upsample_taps(y, dx.height(), yn, yf);
			for (int xx = 0; xx < out_grad.width(); ++xx) {
				int xn, xf;
				upsample_taps(xx, dx.width(), xn, xf);
				const T g = out_grad(c, y, xx) * scale;
				dx(c, yn, xn) += T(0.5625) * g;
				dx(c, yn, xf) += T(0.1875) * g;
				dx(c, yf, xn) += T(0.1875) * g;
				dx(c, yf, xf) += T(0.0625) * g;
			}
		}
	}
	return dx;
}

}  // namespace detail

/// Doubles the flow grid bilinearly; displacements are multiplied by 2 to stay in pixels of the new grid.
template <class T>
FlowField<T> upsample_flow2(const FlowField<T>& flow) {
	return FlowField<T>(detail::upsample2_bilinear(flow.map(), T(2)));
}

template <class T>
FlowField<T> upsample_flow2_backward(const FlowField<T>& out_grad) {
	return FlowField<T>(detail::upsample2_bilinear_backward(out_grad.map(), T(2)));
}

}  // namespace unfold
