#pragma once

#include <span>
#include <string>
#include <vector>

// Always take the packed GEMM path: its summation order depends only on matrix sizes, never on pointer
// alignment, which keeps results bit-identical across runs.
#ifndef EIGEN_GEMM_TO_COEFFBASED_THRESHOLD
#define EIGEN_GEMM_TO_COEFFBASED_THRESHOLD 0
#endif
#include <Eigen/Core>

#include "unfold/core/error.hpp"
#include "unfold/core/feature_map.hpp"

namespace unfold {

/// Geometry of a convolution. Weights are [out][in][k][k] for conv2d and [in][out][k][k] for deconv2d.
struct ConvSpec {
	int in_channels = 0;
	int out_channels = 0;
	int kernel_size = 3;
	int stride = 1;
	int padding = 1;

	static ConvSpec same(int in, int out, int kernel = 3) { return {in, out, kernel, 1, kernel / 2}; }
	static ConvSpec down(int in, int out) { return {in, out, 3, 2, 1}; }
	static ConvSpec up(int in, int out) { return {in, out, 4, 2, 1}; }

	std::size_t weight_count() const {
		return static_cast<std::size_t>(in_channels) * out_channels * kernel_size * kernel_size;
	}

	/// Only size-preserving (stride 1) and exact-halving (stride 2) geometries are legal.
	void validate(const std::string& op) const {
		if (in_channels < 1) throw ShapeError(op, "in_channels", "must be >= 1");
		if (out_channels < 1) throw ShapeError(op, "out_channels", "must be >= 1");
		const bool ok = (kernel_size == 1 && stride == 1 && padding == 0) ||
						(kernel_size == 3 && (stride == 1 || stride == 2) && padding == 1) ||
						(kernel_size == 4 && stride == 2 && padding == 1);
		if (!ok)
			throw ShapeError(op, "kernel_size/stride/padding",
							 "unsupported geometry k=" + std::to_string(kernel_size) + " s=" + std::to_string(stride) +
								 " p=" + std::to_string(padding));
	}

	friend bool operator==(const ConvSpec&, const ConvSpec&) = default;
};

namespace detail {

template <class T>
using RowMat = Eigen::Matrix<T, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
template <class T>
using ConstMatMap = Eigen::Map<const RowMat<T>>;
template <class T>
using MatMap = Eigen::Map<RowMat<T>>;

struct PatchGeometry {
	int channels, height, width;  // the dense ("image") side
	int kernel, stride, pad;
	int out_h, out_w;              // the patch grid
};

/// cols[(c*k+ky)*k+kx][oy*out_w+ox] = image[c][oy*s-p+ky][ox*s-p+kx], zero outside.
template <class T>
void im2col(const T* image, const PatchGeometry& g, T* cols) {
	const int cols_n = g.out_h * g.out_w;
	for (int c = 0; c < g.channels; ++c) {
		const T* plane = image + static_cast<std::size_t>(c) * g.height * g.width;
		for (int ky = 0; ky < g.kernel; ++ky) {
			for (int kx = 0; kx < g.kernel; ++kx) {
				T* row = cols + static_cast<std::size_t>((c * g.kernel + ky) * g.kernel + kx) * cols_n;
				for (int oy = 0; oy < g.out_h; ++oy) {
					const int iy = oy * g.stride - g.pad + ky;
					T* dst = row + oy * g.out_w;
					if (iy < 0 || iy >= g.height) {
						std::fill(dst, dst + g.out_w, T(0));
						continue;
					}
					const T* src = plane + static_cast<std::size_t>(iy) * g.width;
					if (g.stride == 1) {
						for (int ox = 0; ox < g.out_w; ++ox) {
							const int ix = ox - g.pad + kx;
							dst[ox] = (ix >= 0 && ix < g.width) ? src[ix] : T(0);
						}
					} else {
						for (int ox = 0; ox < g.out_w; ++ox) {
							const int ix = ox * g.stride - g.pad + kx;
							dst[ox] = (ix >= 0 && ix < g.width) ? src[ix] : T(0);
						}
					}
				}
			}
		}
	}
}

/// Adjoint of im2col: scatters-and-adds columns back onto the image grid.
template <class T>
void col2im(const T* cols, const PatchGeometry& g, T* image) {
	const int cols_n = g.out_h * g.out_w;
	for (int c = 0; c < g.channels; ++c) {
		T* plane = image + static_cast<std::size_t>(c) * g.height * g.width;
		for (int ky = 0; ky < g.kernel; ++ky) {
			for (int kx = 0; kx < g.kernel; ++kx) {
				const T* row = cols + static_cast<std::size_t>((c * g.kernel + ky) * g.kernel + kx) * cols_n;
				for (int oy = 0; oy < g.out_h; ++oy) {
					const int iy = oy * g.stride - g.pad + ky;
					if (iy < 0 || iy >= g.height) continue;
					const T* src = row + oy * g.out_w;
					T* dst = plane + static_cast<std::size_t>(iy) * g.width;
					for (int ox = 0; ox < g.out_w; ++ox) {
						const int ix = ox * g.stride - g.pad + kx;
						if (ix >= 0 && ix < g.width) dst[ix] += src[ox];
					}
				}
			}
		}
	}
}

inline bool is_pointwise(const PatchGeometry& g) { return g.kernel == 1 && g.stride == 1 && g.pad == 0; }

inline void check_weights(const std::string& op, std::size_t expected, std::size_t found) {
	if (expected != found)
		throw ShapeError(op, "weights", static_cast<long long>(expected), static_cast<long long>(found));
}

inline void check_bias(const std::string& op, int expected, std::size_t found) {
	if (static_cast<std::size_t>(expected) != found)
		throw ShapeError(op, "bias", expected, static_cast<long long>(found));
}

}  // namespace detail

/// Output extent along one axis.
inline int conv_output_extent(int input, const ConvSpec& spec) {
	return (input + 2 * spec.padding - spec.kernel_size) / spec.stride + 1;
}

/// Cross-correlation with zero padding.
template <class T>
FeatureMap<T> conv2d(const FeatureMap<T>& input, std::span<const T> weights, std::span<const T> bias,
					 const ConvSpec& spec) {
	spec.validate("conv2d");
	if (input.channels() != spec.in_channels) throw ShapeError("conv2d", "input channels", spec.in_channels, input.channels());
	if (input.height() % spec.stride != 0) throw ShapeError("conv2d", "input height", "not divisible by stride");
	if (input.width() % spec.stride != 0) throw ShapeError("conv2d", "input width", "not divisible by stride");
	detail::check_weights("conv2d", spec.weight_count(), weights.size());
	detail::check_bias("conv2d", spec.out_channels, bias.size());

	const detail::PatchGeometry g{input.channels(), input.height(), input.width(), spec.kernel_size, spec.stride,
								  spec.padding, conv_output_extent(input.height(), spec),
								  conv_output_extent(input.width(), spec)};
	const int k_rows = spec.in_channels * spec.kernel_size * spec.kernel_size;
	const int n = g.out_h * g.out_w;
	FeatureMap<T> out(spec.out_channels, g.out_h, g.out_w);

	std::vector<T> scratch;
	const T* cols = input.data();
	if (!detail::is_pointwise(g)) {
		scratch.resize(static_cast<std::size_t>(k_rows) * n);
		detail::im2col(input.data(), g, scratch.data());
		cols = scratch.data();
	}
	detail::ConstMatMap<T> w(weights.data(), spec.out_channels, k_rows);
	detail::ConstMatMap<T> x(cols, k_rows, n);
	detail::MatMap<T> y(out.data(), spec.out_channels, n);
	y.noalias() = w * x;
	for (int o = 0; o < spec.out_channels; ++o) y.row(o).array() += bias[o];
	return out;
}

/// Backward of conv2d. Adds into `weight_grad`/`bias_grad` and returns the input gradient
/// (an empty map when `need_input_grad` is false).
template <class T>
FeatureMap<T> conv2d_backward(const FeatureMap<T>& input, std::span<const T> weights, const FeatureMap<T>& out_grad,
							  const ConvSpec& spec, std::span<T> weight_grad, std::span<T> bias_grad,
							  bool need_input_grad = true) {
	const detail::PatchGeometry g{input.channels(), input.height(), input.width(), spec.kernel_size, spec.stride,
								  spec.padding, conv_output_extent(input.height(), spec),
								  conv_output_extent(input.width(), spec)};
	if (out_grad.channels() != spec.out_channels)
		throw ShapeError("conv2d_backward", "output channels", spec.out_channels, out_grad.channels());
	if (out_grad.height() != g.out_h) throw ShapeError("conv2d_backward", "output height", g.out_h, out_grad.height());
	if (out_grad.width() != g.out_w) throw ShapeError("conv2d_backward", "output width", g.out_w, out_grad.width());
	const int k_rows = spec.in_channels * spec.kernel_size * spec.kernel_size;
	const int n = g.out_h * g.out_w;

	std::vector<T> scratch;
	const T* cols = input.data();
	if (!detail::is_pointwise(g)) {
		scratch.resize(static_cast<std::size_t>(k_rows) * n);
		detail::im2col(input.data(), g, scratch.data());
		cols = scratch.data();
	}
	detail::ConstMatMap<T> x(cols, k_rows, n);
	detail::ConstMatMap<T> dy(out_grad.data(), spec.out_channels, n);
	if (!weight_grad.empty()) {
		detail::MatMap<T> dw(weight_grad.data(), spec.out_channels, k_rows);
		dw.noalias() += dy * x.transpose();
	}
	if (!bias_grad.empty())
		for (int o = 0; o < spec.out_channels; ++o) {
			// Scalar loop: a vectorized reduction's rounding depends on the buffer's alignment.
			const T* row = out_grad.data() + static_cast<std::size_t>(o) * n;
			T acc = T(0);
			for (int k = 0; k < n; ++k) acc += row[k];
			bias_grad[o] += acc;
		}

	if (!need_input_grad) return {};
	FeatureMap<T> input_grad(input.shape());
	detail::ConstMatMap<T> w(weights.data(), spec.out_channels, k_rows);
	if (detail::is_pointwise(g)) {
		detail::MatMap<T> dx(input_grad.data(), k_rows, n);
		dx.noalias() = w.transpose() * dy;
	} else {
		std::vector<T> dcols(static_cast<std::size_t>(k_rows) * n);
		detail::MatMap<T> dc(dcols.data(), k_rows, n);
		dc.noalias() = w.transpose() * dy;
		detail::col2im(dcols.data(), g, input_grad.data());
	}
	return input_grad;
}

/// Transposed convolution (4x4, stride 2, padding 1): doubles height and width exactly.
/// Equals the input-gradient of conv2d with the same kernel.
template <class T>
FeatureMap<T> deconv2d(const FeatureMap<T>& input, std::span<const T> weights, std::span<const T> bias,
					   const ConvSpec& spec) {
	spec.validate("deconv2d");
	if (spec.kernel_size != 4 || spec.stride != 2) throw ShapeError("deconv2d", "kernel_size/stride", "must be 4x4 stride 2");
	if (input.channels() != spec.in_channels)
		throw ShapeError("deconv2d", "input channels", spec.in_channels, input.channels());
	detail::check_weights("deconv2d", spec.weight_count(), weights.size());
	detail::check_bias("deconv2d", spec.out_channels, bias.size());

	const detail::PatchGeometry g{spec.out_channels, input.height() * 2, input.width() * 2, spec.kernel_size,
								  spec.stride, spec.padding, input.height(), input.width()};
	const int k_rows = spec.out_channels * spec.kernel_size * spec.kernel_size;
	const int n = input.plane();
	std::vector<T> cols(static_cast<std::size_t>(k_rows) * n);
	detail::ConstMatMap<T> w(weights.data(), spec.in_channels, k_rows);
	detail::ConstMatMap<T> x(input.data(), spec.in_channels, n);
	detail::MatMap<T> c(cols.data(), k_rows, n);
	c.noalias() = w.transpose() * x;

	FeatureMap<T> out(spec.out_channels, g.height, g.width);
	detail::col2im(cols.data(), g, out.data());
	for (int o = 0; o < spec.out_channels; ++o) {
		T* p = out.channel(o);
		for (int i = 0; i < out.plane(); ++i) p[i] += bias[o];
	}
	return out;
}

template <class T>
FeatureMap<T> deconv2d_backward(const FeatureMap<T>& input, std::span<const T> weights, const FeatureMap<T>& out_grad,
								const ConvSpec& spec, std::span<T> weight_grad, std::span<T> bias_grad,
								bool need_input_grad = true) {
	const detail::PatchGeometry g{spec.out_channels, input.height() * 2, input.width() * 2, spec.kernel_size,
								  spec.stride, spec.padding, input.height(), input.width()};
	if (out_grad.channels() != spec.out_channels)
		throw ShapeError("deconv2d_backward", "output channels", spec.out_channels, out_grad.channels());
	if (out_grad.height() != g.height) throw ShapeError("deconv2d_backward", "output height", g.height, out_grad.height());
	if (out_grad.width() != g.width) throw ShapeError("deconv2d_backward", "output width", g.width, out_grad.width());
	const int k_rows = spec.out_channels * spec.kernel_size * spec.kernel_size;
	const int n = input.plane();

	std::vector<T> cols(static_cast<std::size_t>(k_rows) * n);
	detail::im2col(out_grad.data(), g, cols.data());
	detail::ConstMatMap<T> dc(cols.data(), k_rows, n);
	detail::ConstMatMap<T> x(input.data(), spec.in_channels, n);
	if (!weight_grad.empty()) {
		detail::MatMap<T> dw(weight_grad.data(), spec.in_channels, k_rows);
		dw.noalias() += x * dc.transpose();
	}
	if (!bias_grad.empty()) {
		for (int o = 0; o < spec.out_channels; ++o) {
			const T* p = out_grad.channel(o);
			T s = 0;
			for (int i = 0; i < out_grad.plane(); ++i) s += p[i];
			bias_grad[o] += s;
		}
	}
	if (!need_input_grad) return {};
	FeatureMap<T> input_grad(input.shape());
	detail::ConstMatMap<T> w(weights.data(), spec.in_channels, k_rows);
	detail::MatMap<T> dx(input_grad.data(), spec.in_channels, n);
	dx.noalias() = w * dc;
	return input_grad;
}

}  // namespace unfold
