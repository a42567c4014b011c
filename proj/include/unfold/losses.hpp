#pragma once

#include <algorithm>
#include <array>
#include <cmath>
#include <span>
#include <utility>
#include <vector>

#include "unfold/core/video.hpp"

namespace unfold {

/// Per-scale reconstruction weights (coarsest first), smoothness weight, and whether the stage-2 loss
/// forgives a global temporal flip.
struct LossWeights {
	std::array<double, 4> scale{0.25, 0.25, 0.25, 0.25};
	double smoothness = 0.01;
	bool ordering_invariant = true;

	void validate() const {
		bool any = false;
		for (double w : scale) {
			if (!(w >= 0.0)) throw ConfigError("reconstruction weights must be >= 0");
			any = any || w > 0.0;
		}
		if (!any) throw ConfigError("at least one reconstruction weight must be > 0");
		if (!(smoothness >= 0.0)) throw ConfigError("smoothness weight must be >= 0");
	}
};

namespace detail {

template <class T>
void require_matching(const char* op, std::span<const FeatureMap<T>> a, std::span<const FeatureMap<T>> b) {
	if (a.size() != b.size())
		throw ShapeError(op, "frame count", static_cast<long long>(b.size()), static_cast<long long>(a.size()));
	for (std::size_t i = 0; i < a.size(); ++i) b[i].require_same_shape(op, a[i]);
}

/// Sums per-frame terms pairwise from both ends inward, so reversing the frame order gives the identical
/// floating-point result.
inline double mirrored_sum(const std::vector<double>& terms) {
	const std::size_t N = terms.size();
	double sum = 0.0;
	for (std::size_t n = 0; n < N / 2; ++n) sum += terms[n] + terms[N - 1 - n];
	if (N % 2 == 1) sum += terms[N / 2];
	return sum;
}

/// Per-frame sums of f(pred, target) against the target in forward and in reversed order.
template <class T, class F>
std::pair<double, double> directional_sums(const char* op, const VideoSequence<T>& pred, const VideoSequence<T>& target,
										   F&& f) {
	require_matching<T>(op, pred.frames, target.frames);
	const std::size_t N = pred.frames.size();
	std::vector<double> fwd(N, 0.0), bwd(N, 0.0);
	for (std::size_t n = 0; n < N; ++n) {
		const auto& p = pred.frames[n];
		const auto& a = target.frames[n];
		const auto& b = target.frames[N - 1 - n];
		for (std::size_t k = 0; k < p.size(); ++k) {
			fwd[n] += f(static_cast<double>(p.data()[k]), static_cast<double>(a.data()[k]));
			bwd[n] += f(static_cast<double>(p.data()[k]), static_cast<double>(b.data()[k]));
		}
	}
	return {mirrored_sum(fwd), mirrored_sum(bwd)};
}

}  // namespace detail

/// Mean squared error over every frame, channel and pixel. If `grad` is given it receives
/// d(loss)/d(pred) scaled by `grad_scale`.
template <class T>
double recon_loss(std::span<const FeatureMap<T>> pred, std::span<const FeatureMap<T>> target,
				  std::vector<FeatureMap<T>>* grad = nullptr, double grad_scale = 1.0) {
	detail::require_matching("recon_loss", pred, target);
	std::size_t count = 0;
	for (const auto& f : pred) count += f.size();
	if (count == 0) return 0.0;
	double sum = 0.0;
	for (std::size_t i = 0; i < pred.size(); ++i) {
		const T* p = pred[i].data();
		const T* t = target[i].data();
		for (std::size_t k = 0; k < pred[i].size(); ++k) {
			const double d = static_cast<double>(p[k]) - static_cast<double>(t[k]);
			sum += d * d;
		}
	}
	if (grad) {
		grad->resize(pred.size());
		const double s = 2.0 * grad_scale / static_cast<double>(count);
		for (std::size_t i = 0; i < pred.size(); ++i) {
			FeatureMap<T> g(pred[i].shape());
			const T* p = pred[i].data();
			const T* t = target[i].data();
			for (std::size_t k = 0; k < pred[i].size(); ++k)
				g.data()[k] = static_cast<T>(s * (static_cast<double>(p[k]) - static_cast<double>(t[k])));
			(*grad)[i] = std::move(g);
		}
	}
	return sum / static_cast<double>(count);
}

template <class T>
double recon_loss(const VideoSequence<T>& pred, const VideoSequence<T>& target) {
	return recon_loss<T>(std::span<const FeatureMap<T>>(pred.frames), std::span<const FeatureMap<T>>(target.frames));
}

/// min(recon(pred, target), recon(pred, reverse(target))), exactly invariant to reversing either argument.
template <class T>
double ordering_invariant_loss(const VideoSequence<T>& pred, const VideoSequence<T>& target) {
	const auto [fwd, bwd] = detail::directional_sums("ordering_invariant_loss", pred, target,
													 [](double p, double t) { return (p - t) * (p - t); });
	std::size_t count = 0;
	for (const auto& f : pred.frames) count += f.size();
	if (count == 0) return 0.0;
	return std::min(fwd, bwd) / static_cast<double>(count);
}

/// Anisotropic total variation of one flow field: mean|dx u| + mean|dy u| + mean|dx v| + mean|dy v| with
/// forward differences over the pixels where they exist. Adds `grad_scale` * gradient into `grad` if given.
template <class T>
double flow_total_variation(const FlowField<T>& flow, FlowField<T>* grad = nullptr, double grad_scale = 1.0) {
	const int H = flow.height();
	const int W = flow.width();
	double total = 0.0;
	for (int c = 0; c < 2; ++c) {
		const auto& m = flow.map();
		if (W > 1) {
			const double n = static_cast<double>(H) * (W - 1);
			double s = 0.0;
			for (int y = 0; y < H; ++y)
				for (int x = 0; x + 1 < W; ++x) {
					const double d = static_cast<double>(m(c, y, x + 1)) - m(c, y, x);
					s += std::abs(d);
					if (grad && d != 0.0) {
						const T g = static_cast<T>((d > 0 ? 1.0 : -1.0) * grad_scale / n);
						grad->map()(c, y, x + 1) += g;
						grad->map()(c, y, x) -= g;
					}
				}
			total += s / n;
		}
		if (H > 1) {
			const double n = static_cast<double>(H - 1) * W;
			double s = 0.0;
			for (int y = 0; y + 1 < H; ++y)
				for (int x = 0; x < W; ++x) {
					const double d = static_cast<double>(m(c, y + 1, x)) - m(c, y, x);
					s += std::abs(d);
					if (grad && d != 0.0) {
						const T g = static_cast<T>((d > 0 ? 1.0 : -1.0) * grad_scale / n);
						grad->map()(c, y + 1, x) += g;
						grad->map()(c, y, x) -= g;
					}
				}
			total += s / n;
		}
	}
	return total;
}

/// Mean flow total variation over every (time step, scale) pair. If `grads` is given it is resized to match
/// and receives `grad_scale` * gradient.
template <class T>
double smoothness_loss(const std::vector<FlowPyramid<T>>& flows, std::vector<FlowPyramid<T>>* grads = nullptr,
					   double grad_scale = 1.0) {
	if (flows.empty()) throw ShapeError("smoothness_loss", "time steps", "must be >= 1");
	const double terms = static_cast<double>(flows.size()) * 4.0;
	if (grads) {
		grads->resize(flows.size());
		for (std::size_t n = 0; n < flows.size(); ++n)
			for (int l = 0; l < 4; ++l)
				if ((*grads)[n].level[l].empty())
					(*grads)[n].level[l] = FlowField<T>(flows[n].level[l].height(), flows[n].level[l].width());
	}
	double sum = 0.0;
	for (std::size_t n = 0; n < flows.size(); ++n)
		for (int l = 0; l < 4; ++l)
			sum += flow_total_variation(flows[n].level[l], grads ? &(*grads)[n].level[l] : nullptr, grad_scale / terms);
	return sum / terms;
}

/// Mean absolute error on a 0-255 intensity scale, minimized over the two global temporal directions.
template <class T>
double ambiguity_invariant_error(const VideoSequence<T>& pred, const VideoSequence<T>& gt) {
	const auto [fwd, bwd] = detail::directional_sums("ambiguity_invariant_error", pred, gt,
													 [](double p, double t) { return std::abs(p - t); });
	std::size_t count = 0;
	for (const auto& f : pred.frames) count += f.size();
	if (count == 0) return 0.0;
	return 255.0 * std::min(fwd, bwd) / static_cast<double>(count);
}

}  // namespace unfold
