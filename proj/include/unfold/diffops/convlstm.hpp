#pragma once

#include <cmath>
#include <span>

#include "unfold/core/feature_map.hpp"
#include "unfold/diffops/activations.hpp"
#include "unfold/diffops/conv.hpp"

namespace unfold {

/// Hidden and cell activations of a ConvLSTM.
template <class T>
struct LstmState {
	FeatureMap<T> hidden;
	FeatureMap<T> cell;

	friend bool operator==(const LstmState&, const LstmState&) = default;
};

/// Gate convolution geometry: [x ; h] -> 4*hidden channels, 3x3 stride 1. Gate order in the output is i, f, o, g.
inline ConvSpec convlstm_spec(int input_channels, int hidden_channels) {
	return ConvSpec::same(input_channels + hidden_channels, 4 * hidden_channels, 3);
}

template <class T>
struct ConvLstmCache {
	FeatureMap<T> stacked;   // [x ; h_prev]
	FeatureMap<T> gates;     // activated i, f, o, g
	FeatureMap<T> cell_prev;
	FeatureMap<T> cell_tanh;  // tanh(c')
	int input_channels = 0;
};

/// One step of a peephole-free four-gate ConvLSTM:
///   i,f,o = sigmoid(W*[x;h] + b), g = tanh(W*[x;h] + b), c' = f.c + i.g, h' = o.tanh(c')
template <class T>
LstmState<T> convlstm_step(const FeatureMap<T>& x, const LstmState<T>& state, std::span<const T> weights,
						   std::span<const T> bias, ConvLstmCache<T>* cache = nullptr) {
	const int hc = state.hidden.channels();
	state.hidden.require_same_shape("convlstm_step (hidden vs cell)", state.cell);
	if (x.height() != state.hidden.height()) throw ShapeError("convlstm_step", "height", state.hidden.height(), x.height());
	if (x.width() != state.hidden.width()) throw ShapeError("convlstm_step", "width", state.hidden.width(), x.width());

	FeatureMap<T> stacked = concat_channels({&x, &state.hidden});
	FeatureMap<T> pre = conv2d(stacked, weights, bias, convlstm_spec(x.channels(), hc));
	const int plane = x.plane();
	LstmState<T> next{FeatureMap<T>(state.cell.shape()), FeatureMap<T>(state.cell.shape())};
	FeatureMap<T> cell_tanh(state.cell.shape());
	const std::size_t n = static_cast<std::size_t>(hc) * plane;
	T* gi = pre.data();
	T* gf = gi + n;
	T* go = gf + n;
	T* gg = go + n;
	const T* c = state.cell.data();
	for (std::size_t k = 0; k < n; ++k) {
		gi[k] = sigmoid(gi[k]);
		gf[k] = sigmoid(gf[k]);
		go[k] = sigmoid(go[k]);
		gg[k] = std::tanh(gg[k]);
		const T cn = gf[k] * c[k] + gi[k] * gg[k];
		const T tc = std::tanh(cn);
		next.cell.data()[k] = cn;
		cell_tanh.data()[k] = tc;
		next.hidden.data()[k] = go[k] * tc;
	}
	if (cache) {
		cache->stacked = std::move(stacked);
		cache->gates = std::move(pre);
		cache->cell_prev = state.cell;
		cache->cell_tanh = std::move(cell_tanh);
		cache->input_channels = x.channels();
	}
	return next;
}

template <class T>
struct ConvLstmGrads {
	FeatureMap<T> input;
	LstmState<T> state;
};

/// Backward of convlstm_step. `hidden_grad`/`cell_grad` may be empty (treated as zero).
template <class T>
ConvLstmGrads<T> convlstm_step_backward(const ConvLstmCache<T>& cache, std::span<const T> weights,
										const FeatureMap<T>& hidden_grad, const FeatureMap<T>& cell_grad,
										std::span<T> weight_grad, std::span<T> bias_grad, bool need_input_grad = true) {
	const int hc = cache.cell_prev.channels();
	const std::size_t n = cache.cell_prev.size();
	FeatureMap<T> dpre(cache.gates.shape());
	FeatureMap<T> dcell_prev(cache.cell_prev.shape());
	const T* gi = cache.gates.data();
	const T* gf = gi + n;
	const T* go = gf + n;
	const T* gg = go + n;
	T* di = dpre.data();
	T* df = di + n;
	T* dout = df + n;
	T* dg = dout + n;
	const T* dh = hidden_grad.empty() ? nullptr : hidden_grad.data();
	const T* dcn = cell_grad.empty() ? nullptr : cell_grad.data();
	for (std::size_t k = 0; k < n; ++k) {
		const T dhk = dh ? dh[k] : T(0);
		const T tc = cache.cell_tanh.data()[k];
		T dc = (dcn ? dcn[k] : T(0)) + dhk * go[k] * (T(1) - tc * tc);
		dout[k] = dhk * tc * go[k] * (T(1) - go[k]);
		di[k] = dc * gg[k] * gi[k] * (T(1) - gi[k]);
		df[k] = dc * cache.cell_prev.data()[k] * gf[k] * (T(1) - gf[k]);
		dg[k] = dc * gi[k] * (T(1) - gg[k] * gg[k]);
		dcell_prev.data()[k] = dc * gf[k];
	}
	FeatureMap<T> dstacked = conv2d_backward(cache.stacked, weights, dpre, convlstm_spec(cache.input_channels, hc),
											 weight_grad, bias_grad, true);
	auto parts = split_channels(dstacked, {cache.input_channels, hc});
	ConvLstmGrads<T> grads;
	if (need_input_grad) grads.input = std::move(parts[0]);
	grads.state.hidden = std::move(parts[1]);
	grads.state.cell = std::move(dcell_prev);
	return grads;
}

}  // namespace unfold
