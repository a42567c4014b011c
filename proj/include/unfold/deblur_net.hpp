#pragma once

#include <array>
#include <string>
#include <vector>

#include "unfold/layers.hpp"

namespace unfold {

struct RDBSpec {
	int in_channels = 32;
	int num_layers = 4;
	int growth = 16;
};

/// Residual dense block: each 3x3 conv sees the concatenation of the block input and every earlier layer
/// output; a 1x1 projection maps the full stack back to `in_channels` and the block input is added.
template <class T>
class ResidualDenseBlock {
public:
	struct Cache {
		std::vector<FeatureMap<T>> stack;  // stack[l]: input of conv l; stack[num_layers]: input of the projection
		std::vector<FeatureMap<T>> pre;
	};

	ResidualDenseBlock() = default;
	ResidualDenseBlock(ParamStore<T>& store, const std::string& name, const RDBSpec& spec, Init proj_init = Init::fan_in)
		: spec_(spec) {
		int c = spec.in_channels;
		for (int l = 0; l < spec.num_layers; ++l) {
			convs_.emplace_back(store, name + ".conv" + std::to_string(l + 1), ConvSpec::same(c, spec.growth));
			c += spec.growth;
		}
		proj_ = Conv<T>(store, name + ".proj", ConvSpec::same(c, spec.in_channels, 1), proj_init);
	}

	FeatureMap<T> forward(const FeatureMap<T>& x, Cache& cache) const {
		if (x.channels() != spec_.in_channels) throw ShapeError("rdb_forward", "channels", spec_.in_channels, x.channels());
		cache.stack.assign(1, x);
		cache.pre.clear();
		for (const auto& conv : convs_) {
			cache.pre.push_back(conv.forward(cache.stack.back()));
			const FeatureMap<T> act = leaky_relu(cache.pre.back());
			cache.stack.push_back(concat_channels({&cache.stack.back(), &act}));
		}
		FeatureMap<T> y = proj_.forward(cache.stack.back());
		y += x;
		return y;
	}

	FeatureMap<T> backward(const Cache& cache, const FeatureMap<T>& dy) const {
		FeatureMap<T> dstack = proj_.backward(cache.stack.back(), dy);
		for (int l = spec_.num_layers - 1; l >= 0; --l) {
			auto parts = split_channels(dstack, {cache.stack[l].channels(), spec_.growth});
			FeatureMap<T> dprev = std::move(parts[0]);
			dprev += convs_[l].backward(cache.stack[l], leaky_relu_backward(cache.pre[l], parts[1]));
			dstack = std::move(dprev);
		}
		dstack += dy;
		return dstack;
	}

	const RDBSpec& spec() const noexcept { return spec_; }

private:
	RDBSpec spec_;
	std::vector<Conv<T>> convs_;
	Conv<T> proj_;
};

/// Binds (creating if needed) an RDB named "rdb" in `params` and runs it.
template <class T>
FeatureMap<T> rdb_forward(const FeatureMap<T>& x, const RDBSpec& spec, ParamStore<T>& params) {
	ResidualDenseBlock<T> block(params, "rdb", spec);
	typename ResidualDenseBlock<T>::Cache cache;
	return block.forward(x, cache);
}

struct DeblurConfig {
	int base_width = 32;
	int rdbs_per_scale = 2;
	int rdb_layers = 4;
	int growth = 16;

	/// Channel width at full, 1/2, 1/4 and 1/8 resolution.
	std::array<int, 4> widths() const { return {base_width, base_width, 2 * base_width, 4 * base_width}; }

	void validate() const {
		if (base_width < 1 || rdbs_per_scale < 0 || rdb_layers < 1 || growth < 1)
			throw ConfigError("deblur config: widths and counts must be positive");
	}
};

/// U-shaped deblurring network. Encoder: head conv, then three [stride-2 conv + RDB cascade] stages.
/// Decoder: three up-sampling blocks (1x1 bottleneck + 4x4 deconv), each merged with the encoder feature of
/// the same resolution by a 1x1 projection, then two tail convs. The result is added to the input.
template <class T>
class DeblurNet {
public:
	struct Cache {
		FeatureMap<T> input;
		FeatureMap<T> head_pre;
		std::array<FeatureMap<T>, 4> skip;  // encoder output per resolution
		std::array<FeatureMap<T>, 3> down_in;
		std::array<FeatureMap<T>, 3> down_pre;
		std::array<std::vector<typename ResidualDenseBlock<T>::Cache>, 3> rdb;
		std::array<FeatureMap<T>, 3> bottleneck_in, bottleneck_pre, deconv_in, deconv_pre, merge_in, merge_pre;
		FeatureMap<T> tail_in, tail_pre, tail_act;
	};

	DeblurNet(const DeblurConfig& cfg, ParamStore<T>& store) : cfg_(cfg) {
		cfg.validate();
		const auto w = cfg.widths();
		head_ = Conv<T>(store, "dm.head", ConvSpec::same(3, w[0]));
		for (int s = 0; s < 3; ++s) {
			const std::string stage = "dm.enc" + std::to_string(s + 1);
			down_[s] = Conv<T>(store, stage + ".down", ConvSpec::down(w[s], w[s + 1]));
			for (int r = 0; r < cfg.rdbs_per_scale; ++r)
				rdbs_[s].emplace_back(store, stage + ".rdb" + std::to_string(r + 1),
									  RDBSpec{w[s + 1], cfg.rdb_layers, cfg.growth});
		}
		for (int k = 0; k < 3; ++k) {
			const int from = 3 - k;
			const int to = from - 1;
			const std::string block = "dm.up" + std::to_string(k + 1);
			bottleneck_[k] = Conv<T>(store, block + ".bottleneck", ConvSpec::same(w[from], w[to], 1));
			deconv_[k] = Deconv<T>(store, block + ".deconv", w[to], w[to]);
			merge_[k] = Conv<T>(store, block + ".merge", ConvSpec::same(2 * w[to], w[to], 1));
		}
		tail1_ = Conv<T>(store, "dm.tail1", ConvSpec::same(w[0], w[0]));
		tail2_ = Conv<T>(store, "dm.tail2", ConvSpec::same(w[0], 3), Init::zeros);
	}

	FeatureMap<T> forward(const FeatureMap<T>& blurred, Cache* cache = nullptr) const {
		if (blurred.channels() != 3) throw ShapeError("deblur", "channels", 3, blurred.channels());
		if (blurred.height() % 8 != 0) throw ShapeError("deblur", "height", "must be divisible by 8");
		if (blurred.width() % 8 != 0) throw ShapeError("deblur", "width", "must be divisible by 8");
		Cache local;
		Cache& c = cache ? *cache : local;
		c.input = blurred;
		c.head_pre = head_.forward(blurred);
		c.skip[0] = leaky_relu(c.head_pre);
		for (int s = 0; s < 3; ++s) {
			c.down_in[s] = c.skip[s];
			c.down_pre[s] = down_[s].forward(c.down_in[s]);
			FeatureMap<T> x = leaky_relu(c.down_pre[s]);
			c.rdb[s].assign(rdbs_[s].size(), {});
			for (std::size_t r = 0; r < rdbs_[s].size(); ++r) x = rdbs_[s][r].forward(x, c.rdb[s][r]);
			c.skip[s + 1] = std::move(x);
		}
		FeatureMap<T> x = c.skip[3];
		for (int k = 0; k < 3; ++k) {
			c.bottleneck_in[k] = std::move(x);
			c.bottleneck_pre[k] = bottleneck_[k].forward(c.bottleneck_in[k]);
			c.deconv_in[k] = leaky_relu(c.bottleneck_pre[k]);
			c.deconv_pre[k] = deconv_[k].forward(c.deconv_in[k]);
			const FeatureMap<T> up = leaky_relu(c.deconv_pre[k]);
			c.merge_in[k] = concat_channels({&up, &c.skip[2 - k]});
			c.merge_pre[k] = merge_[k].forward(c.merge_in[k]);
			x = leaky_relu(c.merge_pre[k]);
		}
		c.tail_in = std::move(x);
		c.tail_pre = tail1_.forward(c.tail_in);
		c.tail_act = leaky_relu(c.tail_pre);
		FeatureMap<T> out = tail2_.forward(c.tail_act);
		out += blurred;
		return out;
	}

	/// Accumulates parameter gradients for d(loss)/d(output).
	void backward(const Cache& c, const FeatureMap<T>& dout) const {
		FeatureMap<T> d = tail1_.backward(c.tail_in, leaky_relu_backward(c.tail_pre, tail2_.backward(c.tail_act, dout)));
		std::array<FeatureMap<T>, 4> dskip;
		for (int k = 2; k >= 0; --k) {
			FeatureMap<T> dm = merge_[k].backward(c.merge_in[k], leaky_relu_backward(c.merge_pre[k], d));
			const int wc = c.deconv_pre[k].channels();
			auto parts = split_channels(dm, {wc, wc});
			dskip[2 - k] = std::move(parts[1]);
			FeatureMap<T> ddec = deconv_[k].backward(c.deconv_in[k], leaky_relu_backward(c.deconv_pre[k], parts[0]));
			d = bottleneck_[k].backward(c.bottleneck_in[k], leaky_relu_backward(c.bottleneck_pre[k], ddec));
		}
		// d is now the gradient w.r.t. skip[3]
		for (int s = 2; s >= 0; --s) {
			for (int r = static_cast<int>(rdbs_[s].size()) - 1; r >= 0; --r) d = rdbs_[s][r].backward(c.rdb[s][r], d);
			FeatureMap<T> dprev = down_[s].backward(c.down_in[s], leaky_relu_backward(c.down_pre[s], d));
			accumulate(dprev, dskip[s]);
			d = std::move(dprev);
		}
		head_.backward(c.input, leaky_relu_backward(c.head_pre, d), false);
	}

private:
	DeblurConfig cfg_;
	Conv<T> head_;
	std::array<Conv<T>, 3> down_;
	std::array<std::vector<ResidualDenseBlock<T>>, 3> rdbs_;
	std::array<Conv<T>, 3> bottleneck_;
	std::array<Deconv<T>, 3> deconv_;
	std::array<Conv<T>, 3> merge_;
	Conv<T> tail1_;
	Conv<T> tail2_;
};

template <class T>
ParamStore<T> make_deblur_params(const DeblurConfig& cfg, std::uint64_t seed) {
	ParamStore<T> store;
	{ DeblurNet<T> net(cfg, store); }
	init_params(store, derive_seed(seed, "dm"));
	return store;
}

template <class T>
FeatureMap<T> deblur(const FeatureMap<T>& blurred, const DeblurConfig& cfg, ParamStore<T>& params) {
	DeblurNet<T> net(cfg, params);
	return net.forward(blurred);
}

/// Trainable scalars of the same network with every RDB replaced by a plain residual block of equal depth
/// (`rdb_layers` 3x3 convs at the block width).
inline std::size_t plain_residual_parameter_count(const DeblurConfig& cfg) {
	ParamStore<float> store;
	DeblurNet<float> net(cfg, store);
	std::size_t total = store.parameter_count();
	const auto w = cfg.widths();
	for (int s = 0; s < 3; ++s) {
		const std::size_t c = static_cast<std::size_t>(w[s + 1]);
		std::size_t rdb = 0;
		std::size_t in = c;
		for (int l = 0; l < cfg.rdb_layers; ++l) {
			rdb += in * cfg.growth * 9 + cfg.growth;
			in += cfg.growth;
		}
		rdb += in * c + c;
		const std::size_t plain = static_cast<std::size_t>(cfg.rdb_layers) * (c * c * 9 + c);
		total = total - cfg.rdbs_per_scale * rdb + cfg.rdbs_per_scale * plain;
	}
	return total;
}

}  // namespace unfold
