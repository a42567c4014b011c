#pragma once

#include <array>
#include <string>
#include <vector>

#include "unfold/motion_codec.hpp"

namespace unfold {

/// Blurred-image encoder: seven 3x3 conv layers over [blurred ; central], layers 2, 4 and 6 with stride 2.
/// Layers 1-6 are followed by batch norm and leaky ReLU, layer 7 is linear and emits hidden || cell.
template <class T>
class BlurEncoder {
public:
	static constexpr int kLayers = 7;

	struct Cache {
		std::array<std::vector<FeatureMap<T>>, kLayers> input;  // input of each conv
		std::array<std::vector<FeatureMap<T>>, kLayers - 1> normed;  // batch-norm output (pre-activation)
		std::array<BatchNormCache<T>, kLayers - 1> bn;
	};

	static std::array<int, kLayers> widths(const CodecConfig& cfg) {
		constexpr std::array<int, 6> base{32, 64, 64, 128, 128, 256};
		std::array<int, kLayers> w{};
		for (int i = 0; i < 6; ++i) w[i] = std::max(1, static_cast<int>(std::lround(base[i] * cfg.channel_mult)));
		w[6] = 2 * cfg.lstm_channels();
		return w;
	}

	BlurEncoder(const CodecConfig& cfg, ParamStore<T>& store) : lstm_channels_(cfg.lstm_channels()) {
		const auto w = widths(cfg);
		int in = 6;
		for (int i = 0; i < kLayers; ++i) {
			const std::string name = "bie.conv" + std::to_string(i + 1);
			const ConvSpec spec = (i == 1 || i == 3 || i == 5) ? ConvSpec::down(in, w[i]) : ConvSpec::same(in, w[i]);
			conv_[i] = Conv<T>(store, name, spec);
			if (i < kLayers - 1) bn_[i] = BatchNorm<T>(store, "bie.bn" + std::to_string(i + 1), w[i]);
			in = w[i];
		}
	}

	/// Encodes a batch. Train mode needs at least two items (batch statistics).
	std::vector<MotionState<T>> encode(const std::vector<FeatureMap<T>>& blurred, const std::vector<FeatureMap<T>>& central,
									   Mode mode, Cache* cache = nullptr) const {
		if (blurred.size() != central.size())
			throw ShapeError("encode_blurred", "batch size", static_cast<long long>(blurred.size()),
							 static_cast<long long>(central.size()));
		if (blurred.empty()) throw ShapeError("encode_blurred", "batch size", "must be >= 1");
		std::vector<FeatureMap<T>> x;
		for (std::size_t b = 0; b < blurred.size(); ++b) {
			blurred[b].require_same_shape("encode_blurred", central[b]);
			if (blurred[b].channels() != 3) throw ShapeError("encode_blurred", "channels", 3, blurred[b].channels());
			if (blurred[b].height() % 8 != 0) throw ShapeError("encode_blurred", "height", "must be divisible by 8");
			if (blurred[b].width() % 8 != 0) throw ShapeError("encode_blurred", "width", "must be divisible by 8");
			blurred.front().require_same_shape("encode_blurred", blurred[b]);
			x.push_back(concat_channels({&blurred[b], &central[b]}));
		}
		Cache local;
		Cache& c = cache ? *cache : local;
		for (int i = 0; i < kLayers; ++i) {
			std::vector<FeatureMap<T>> y;
			y.reserve(x.size());
			for (const auto& item : x) y.push_back(conv_[i].forward(item));
			c.input[i] = std::move(x);
			if (i == kLayers - 1) {
				x = std::move(y);
				break;
			}
			c.normed[i] = bn_[i].forward(y, mode, mode == Mode::train ? &c.bn[i] : nullptr);
			x.clear();
			for (const auto& item : c.normed[i]) x.push_back(leaky_relu(item));
		}
		std::vector<MotionState<T>> states;
		for (auto& out : x) {
			auto parts = split_channels(out, {lstm_channels_, lstm_channels_});
			states.push_back({std::move(parts[0]), std::move(parts[1])});
		}
		return states;
	}

	/// Train-mode backward given d(loss)/d(state) per batch item.
	void backward(const Cache& c, const std::vector<MotionState<T>>& state_grads) const {
		std::vector<FeatureMap<T>> d;
		for (const auto& g : state_grads) d.push_back(concat_channels({&g.hidden, &g.cell}));
		for (int i = kLayers - 1; i >= 0; --i) {
			if (i < kLayers - 1) {
				std::vector<FeatureMap<T>> dn;
				for (std::size_t b = 0; b < d.size(); ++b) dn.push_back(leaky_relu_backward(c.normed[i][b], d[b]));
				d = bn_[i].backward(c.bn[i], dn);
			}
			std::vector<FeatureMap<T>> dx;
			for (std::size_t b = 0; b < d.size(); ++b) dx.push_back(conv_[i].backward(c.input[i][b], d[b], i > 0));
			d = std::move(dx);
		}
	}

private:
	int lstm_channels_;
	std::array<Conv<T>, kLayers> conv_;
	std::array<BatchNorm<T>, kLayers - 1> bn_;
};

template <class T>
ParamStore<T> make_bie_params(const CodecConfig& cfg, std::uint64_t seed) {
	ParamStore<T> store;
	{ BlurEncoder<T> e(cfg, store); }
	init_params(store, derive_seed(seed, "bie"));
	return store;
}

/// Single-image convenience wrapper (inference mode).
template <class T>
MotionState<T> encode_blurred(const FeatureMap<T>& blurred, const FeatureMap<T>& central, const CodecConfig& cfg,
							  ParamStore<T>& params) {
	BlurEncoder<T> e(cfg, params);
	return e.encode({blurred}, {central}, Mode::infer).front();
}

}  // namespace unfold
