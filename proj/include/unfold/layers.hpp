#pragma once

#include <array>
#include <string>
#include <vector>

#include "unfold/diffops/activations.hpp"
#include "unfold/diffops/batch_norm.hpp"
#include "unfold/diffops/conv.hpp"
#include "unfold/diffops/convlstm.hpp"
#include "unfold/params.hpp"

// Parameterized building blocks. Each layer binds to arrays inside a ParamStore (creating them on first
// use) and keeps raw references, so the store must outlive the layer.

namespace unfold {

template <class T>
class Conv {
public:
	Conv() = default;
	Conv(ParamStore<T>& store, const std::string& name, ConvSpec spec, Init weight_init = Init::fan_in)
		: spec_(spec),
		  w_(&store.require(name + ".w", {spec.out_channels, spec.in_channels, spec.kernel_size, spec.kernel_size},
							weight_init)),
		  b_(&store.require(name + ".b", {spec.out_channels}, Init::zeros)) {
		spec.validate(name);
	}

	FeatureMap<T> forward(const FeatureMap<T>& x) const { return conv2d<T>(x, w_->value, b_->value, spec_); }

	FeatureMap<T> backward(const FeatureMap<T>& x, const FeatureMap<T>& dy, bool need_input_grad = true) const {
		return conv2d_backward<T>(x, w_->value, dy, spec_, w_->grad, b_->grad, need_input_grad);
	}

	const ConvSpec& spec() const noexcept { return spec_; }

private:
	ConvSpec spec_;
	Param<T>* w_ = nullptr;
	Param<T>* b_ = nullptr;
};

template <class T>
class Deconv {
public:
	Deconv() = default;
	Deconv(ParamStore<T>& store, const std::string& name, int in_channels, int out_channels)
		: spec_(ConvSpec::up(in_channels, out_channels)),
		  w_(&store.require(name + ".w", {in_channels, out_channels, 4, 4})),
		  b_(&store.require(name + ".b", {out_channels}, Init::zeros)) {}

	FeatureMap<T> forward(const FeatureMap<T>& x) const { return deconv2d<T>(x, w_->value, b_->value, spec_); }

	FeatureMap<T> backward(const FeatureMap<T>& x, const FeatureMap<T>& dy) const {
		return deconv2d_backward<T>(x, w_->value, dy, spec_, w_->grad, b_->grad, true);
	}

	const ConvSpec& spec() const noexcept { return spec_; }

private:
	ConvSpec spec_;
	Param<T>* w_ = nullptr;
	Param<T>* b_ = nullptr;
};

template <class T>
class ConvLstm {
public:
	ConvLstm() = default;
	ConvLstm(ParamStore<T>& store, const std::string& name, int input_channels, int hidden_channels)
		: input_channels_(input_channels), hidden_channels_(hidden_channels),
		  w_(&store.require(name + ".w", {4 * hidden_channels, input_channels + hidden_channels, 3, 3})),
		  b_(&store.require(name + ".b", {4 * hidden_channels}, Init::zeros)) {}

	LstmState<T> forward(const FeatureMap<T>& x, const LstmState<T>& s, ConvLstmCache<T>* cache) const {
		return convlstm_step<T>(x, s, w_->value, b_->value, cache);
	}

	ConvLstmGrads<T> backward(const ConvLstmCache<T>& cache, const FeatureMap<T>& dh, const FeatureMap<T>& dc,
							  bool need_input_grad = true) const {
		return convlstm_step_backward<T>(cache, w_->value, dh, dc, w_->grad, b_->grad, need_input_grad);
	}

	int hidden_channels() const noexcept { return hidden_channels_; }
	int input_channels() const noexcept { return input_channels_; }

private:
	int input_channels_ = 0;
	int hidden_channels_ = 0;
	Param<T>* w_ = nullptr;
	Param<T>* b_ = nullptr;
};

template <class T>
class BatchNorm {
public:
	BatchNorm() = default;
	BatchNorm(ParamStore<T>& store, const std::string& name, int channels)
		: gamma_(&store.require(name + ".gamma", {channels}, Init::ones)),
		  beta_(&store.require(name + ".beta", {channels}, Init::zeros)),
		  mean_(&store.require(name + ".running_mean", {channels}, Init::zeros)),
		  var_(&store.require(name + ".running_var", {channels}, Init::ones)) {}

	std::vector<FeatureMap<T>> forward(const std::vector<FeatureMap<T>>& x, Mode mode, BatchNormCache<T>* cache) const {
		return batch_norm<T>(x, gamma_->value, beta_->value, mean_->value, var_->value, mode, cache);
	}

	std::vector<FeatureMap<T>> backward(const BatchNormCache<T>& cache, const std::vector<FeatureMap<T>>& dy) const {
		return batch_norm_backward<T>(cache, gamma_->value, dy, gamma_->grad, beta_->grad);
	}

private:
	Param<T>* gamma_ = nullptr;
	Param<T>* beta_ = nullptr;
	Param<T>* mean_ = nullptr;
	Param<T>* var_ = nullptr;
};

/// x + conv2(lrelu(conv1(x))), both 3x3 stride 1.
template <class T>
class ResBlock {
public:
	struct Cache {
		FeatureMap<T> input;
		FeatureMap<T> pre;  // conv1 output
		FeatureMap<T> act;  // lrelu(pre)
	};

	ResBlock() = default;
	ResBlock(ParamStore<T>& store, const std::string& name, int channels)
		: conv1_(store, name + ".conv1", ConvSpec::same(channels, channels)),
		  conv2_(store, name + ".conv2", ConvSpec::same(channels, channels)) {}

	FeatureMap<T> forward(const FeatureMap<T>& x, Cache& cache) const {
		cache.input = x;
		cache.pre = conv1_.forward(x);
		cache.act = leaky_relu(cache.pre);
		FeatureMap<T> y = conv2_.forward(cache.act);
		y += x;
		return y;
	}

	FeatureMap<T> backward(const Cache& cache, const FeatureMap<T>& dy) const {
		FeatureMap<T> dact = conv2_.backward(cache.act, dy);
		FeatureMap<T> dx = conv1_.backward(cache.input, leaky_relu_backward(cache.pre, dact));
		dx += dy;
		return dx;
	}

private:
	Conv<T> conv1_;
	Conv<T> conv2_;
};

/// Four-block convolutional encoder: a stride-1 conv, then three [stride-2 conv + ResBlock] stages.
/// Returns the features of every block (full, 1/2, 1/4 and 1/8 resolution).
template <class T>
class EncoderTower {
public:
	struct Features {
		FeatureMap<T> level[4];
	};

	struct Cache {
		FeatureMap<T> input;
		FeatureMap<T> pre0;
		Features out;
		FeatureMap<T> pre[3];
		typename ResBlock<T>::Cache res[3];
	};

	EncoderTower() = default;
	EncoderTower(ParamStore<T>& store, const std::string& name, int input_channels, const std::array<int, 4>& widths)
		: conv0_(store, name + ".block0.conv", ConvSpec::same(input_channels, widths[0])) {
		for (int i = 0; i < 3; ++i) {
			const std::string block = name + ".block" + std::to_string(i + 1);
			down_[i] = Conv<T>(store, block + ".down", ConvSpec::down(widths[i], widths[i + 1]));
			res_[i] = ResBlock<T>(store, block + ".res", widths[i + 1]);
		}
	}

	const Features& forward(const FeatureMap<T>& x, Cache& cache) const {
		cache.input = x;
		cache.pre0 = conv0_.forward(x);
		cache.out.level[0] = leaky_relu(cache.pre0);
		for (int i = 0; i < 3; ++i) {
			cache.pre[i] = down_[i].forward(cache.out.level[i]);
			cache.out.level[i + 1] = res_[i].forward(leaky_relu(cache.pre[i]), cache.res[i]);
		}
		return cache.out;
	}

	/// `grads.level[i]` may be empty (no gradient at that level). Returns the input gradient, or an empty
	/// map when `need_input_grad` is false.
	FeatureMap<T> backward(const Cache& cache, const Features& grads, bool need_input_grad) const {
		FeatureMap<T> d = grads.level[3].empty() ? zeros_like(cache.out.level[3]) : grads.level[3];
		for (int i = 2; i >= 0; --i) {
			FeatureMap<T> dact = res_[i].backward(cache.res[i], d);
			FeatureMap<T> dprev = down_[i].backward(cache.out.level[i], leaky_relu_backward(cache.pre[i], dact));
			accumulate(dprev, grads.level[i]);
			d = std::move(dprev);
		}
		return conv0_.backward(cache.input, leaky_relu_backward(cache.pre0, d), need_input_grad);
	}

private:
	Conv<T> conv0_;
	Conv<T> down_[3];
	ResBlock<T> res_[3];
};

}  // namespace unfold
