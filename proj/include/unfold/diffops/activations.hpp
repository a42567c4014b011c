#pragma once

#include <cmath>

#include "unfold/core/feature_map.hpp"

namespace unfold {

inline constexpr double kLeakySlope = 0.2;

template <class T>
FeatureMap<T> leaky_relu(const FeatureMap<T>& x, T slope = T(kLeakySlope)) {
	FeatureMap<T> y(x.shape());
	const T* src = x.data();
	T* dst = y.data();
	for (std::size_t i = 0; i < x.size(); ++i) dst[i] = src[i] > T(0) ? src[i] : slope * src[i];
	return y;
}

/// Gradient through leaky_relu evaluated at pre-activation `x`; slope is used at x == 0.
template <class T>
FeatureMap<T> leaky_relu_backward(const FeatureMap<T>& x, const FeatureMap<T>& out_grad, T slope = T(kLeakySlope)) {
	x.require_same_shape("leaky_relu_backward", out_grad);
	FeatureMap<T> dx(x.shape());
	const T* src = x.data();
	const T* dy = out_grad.data();
	T* dst = dx.data();
	for (std::size_t i = 0; i < x.size(); ++i) dst[i] = src[i] > T(0) ? dy[i] : slope * dy[i];
	return dx;
}

template <class T>
inline T sigmoid(T x) {
	return T(1) / (T(1) + std::exp(-x));
}

}  // namespace unfold
