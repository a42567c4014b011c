#pragma once

#include <cmath>
#include <span>
#include <vector>

#include "unfold/core/error.hpp"
#include "unfold/core/feature_map.hpp"

namespace unfold {

enum class Mode { train, infer };

inline constexpr double kBatchNormEpsilon = 1e-5;
inline constexpr double kBatchNormMomentum = 0.1;

template <class T>
struct BatchNormCache {
	std::vector<FeatureMap<T>> normalized;  // x-hat per batch item
	std::vector<T> inv_std;                 // per channel
};

/// Per-channel normalization over batch and space. Train mode uses batch statistics and updates the running
/// moments in place (unbiased variance, momentum 0.1); infer mode reads the running moments.
template <class T>
std::vector<FeatureMap<T>> batch_norm(const std::vector<FeatureMap<T>>& batch, std::span<const T> gamma,
									  std::span<const T> beta, std::span<T> running_mean, std::span<T> running_var,
									  Mode mode, BatchNormCache<T>* cache = nullptr) {
	if (batch.empty()) throw ShapeError("batch_norm", "batch size", "must be >= 1");
	if (mode == Mode::train && batch.size() < 2)
		throw ShapeError("batch_norm", "batch size", "train mode requires >= 2, found " + std::to_string(batch.size()));
	const int channels = batch.front().channels();
	for (const auto& x : batch) batch.front().require_same_shape("batch_norm", x);
	if (gamma.size() != static_cast<std::size_t>(channels))
		throw ShapeError("batch_norm", "gamma", channels, static_cast<long long>(gamma.size()));
	if (beta.size() != static_cast<std::size_t>(channels))
		throw ShapeError("batch_norm", "beta", channels, static_cast<long long>(beta.size()));
	if (running_mean.size() != static_cast<std::size_t>(channels) || running_var.size() != static_cast<std::size_t>(channels))
		throw ShapeError("batch_norm", "running moments", channels, static_cast<long long>(running_mean.size()));

	const int plane = batch.front().plane();
	const double count = static_cast<double>(plane) * batch.size();
	std::vector<FeatureMap<T>> out;
	out.reserve(batch.size());
	for (const auto& x : batch) out.emplace_back(x.shape());
	if (cache) {
		cache->normalized.assign(batch.size(), FeatureMap<T>(batch.front().shape()));
		cache->inv_std.assign(channels, T(0));
	}

	for (int c = 0; c < channels; ++c) {
		double mean = 0.0;
		double var = 0.0;
		if (mode == Mode::train) {
			for (const auto& x : batch) {
				const T* p = x.channel(c);
				for (int i = 0; i < plane; ++i) mean += p[i];
			}
			mean /= count;
			for (const auto& x : batch) {
				const T* p = x.channel(c);
				for (int i = 0; i < plane; ++i) {
					const double d = p[i] - mean;
					var += d * d;
				}
			}
			var /= count;
			running_mean[c] = static_cast<T>((1.0 - kBatchNormMomentum) * running_mean[c] + kBatchNormMomentum * mean);
			running_var[c] = static_cast<T>((1.0 - kBatchNormMomentum) * running_var[c] +
											kBatchNormMomentum * var * count / (count - 1.0));
		} else {
			mean = running_mean[c];
			var = running_var[c];
		}
		const T inv_std = static_cast<T>(1.0 / std::sqrt(var + kBatchNormEpsilon));
		const T m = static_cast<T>(mean);
		if (cache) cache->inv_std[c] = inv_std;
		for (std::size_t b = 0; b < batch.size(); ++b) {
			const T* p = batch[b].channel(c);
			T* q = out[b].channel(c);
			T* xhat = cache ? cache->normalized[b].channel(c) : nullptr;
			for (int i = 0; i < plane; ++i) {
				const T h = (p[i] - m) * inv_std;
				if (xhat) xhat[i] = h;
				q[i] = gamma[c] * h + beta[c];
			}
		}
	}
	return out;
}

/// Train-mode backward. Adds into gamma_grad/beta_grad; returns per-item input gradients.
template <class T>
std::vector<FeatureMap<T>> batch_norm_backward(const BatchNormCache<T>& cache, std::span<const T> gamma,
											   const std::vector<FeatureMap<T>>& out_grad, std::span<T> gamma_grad,
											   std::span<T> beta_grad) {
	if (out_grad.size() != cache.normalized.size())
		throw ShapeError("batch_norm_backward", "batch size", static_cast<long long>(cache.normalized.size()),
						 static_cast<long long>(out_grad.size()));
	const int channels = static_cast<int>(cache.inv_std.size());
	const int plane = cache.normalized.front().plane();
	const double count = static_cast<double>(plane) * out_grad.size();
	std::vector<FeatureMap<T>> in_grad;
	in_grad.reserve(out_grad.size());
	for (const auto& g : out_grad) in_grad.emplace_back(g.shape());

	for (int c = 0; c < channels; ++c) {
		double sum_dy = 0.0;
		double sum_dy_xhat = 0.0;
		for (std::size_t b = 0; b < out_grad.size(); ++b) {
			const T* dy = out_grad[b].channel(c);
			const T* xh = cache.normalized[b].channel(c);
			for (int i = 0; i < plane; ++i) {
				sum_dy += dy[i];
				sum_dy_xhat += static_cast<double>(dy[i]) * xh[i];
			}
		}
		if (!gamma_grad.empty()) gamma_grad[c] += static_cast<T>(sum_dy_xhat);
		if (!beta_grad.empty()) beta_grad[c] += static_cast<T>(sum_dy);
		const double scale = gamma[c] * cache.inv_std[c] / count;
		for (std::size_t b = 0; b < out_grad.size(); ++b) {
			const T* dy = out_grad[b].channel(c);
			const T* xh = cache.normalized[b].channel(c);
			T* dx = in_grad[b].channel(c);
			for (int i = 0; i < plane; ++i)
				dx[i] = static_cast<T>(scale * (count * dy[i] - sum_dy - xh[i] * sum_dy_xhat));
		}
	}
	return in_grad;
}

}  // namespace unfold
