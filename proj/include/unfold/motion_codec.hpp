#pragma once

#include <array>
#include <cmath>
#include <string>
#include <vector>

#include "unfold/core/video.hpp"
#include "unfold/diffops/warp.hpp"
#include "unfold/layers.hpp"

namespace unfold {

/// Size of the video autoencoder. Channel widths are 16/32/64/128 times `channel_mult`.
struct CodecConfig {
	int n_frames = 9;
	double channel_mult = 1.0;

	std::array<int, 4> widths() const {
		constexpr std::array<int, 4> base{16, 32, 64, 128};
		std::array<int, 4> w{};
		for (int i = 0; i < 4; ++i) w[i] = std::max(1, static_cast<int>(std::lround(base[i] * channel_mult)));
		return w;
	}
	int lstm_channels() const { return widths()[3]; }

	void validate() const {
		if (n_frames < 3 || n_frames % 2 == 0)
			throw ConfigError("n_frames must be odd and >= 3, got " + std::to_string(n_frames));
		if (!(channel_mult > 0.0)) throw ConfigError("channel multiplier must be positive");
	}
};

/// Latent motion representation handed from an encoder (RVE or BIE) to the decoder.
template <class T>
using MotionState = LstmState<T>;

/// Recurrent video encoder: per-frame conv tower feeding a ConvLSTM; the final state is the motion code.
template <class T>
class VideoEncoder {
public:
	struct Cache {
		std::vector<typename EncoderTower<T>::Cache> tower;
		std::vector<ConvLstmCache<T>> lstm;
	};

	VideoEncoder(const CodecConfig& cfg, ParamStore<T>& store)
		: cfg_(cfg), tower_(store, "rve.enc", 3, cfg.widths()),
		  lstm_(store, "rve.lstm", cfg.lstm_channels(), cfg.lstm_channels()) {}

	/// Frames are consumed in temporal order starting from a zero state.
	MotionState<T> encode(const VideoSequence<T>& video, Cache* cache = nullptr) const {
		if (video.frames.empty()) throw ShapeError("encode_video", "frame count", "must be >= 1");
		const auto& first = video.frames.front();
		if (first.channels() != 3) throw ShapeError("encode_video", "channels", 3, first.channels());
		if (first.height() % 8 != 0) throw ShapeError("encode_video", "height", "must be divisible by 8");
		if (first.width() % 8 != 0) throw ShapeError("encode_video", "width", "must be divisible by 8");
		for (const auto& f : video.frames) first.require_same_shape("encode_video", f);

		const int C = cfg_.lstm_channels();
		MotionState<T> s{FeatureMap<T>(C, first.height() / 8, first.width() / 8),
						 FeatureMap<T>(C, first.height() / 8, first.width() / 8)};
		if (cache) {
			cache->tower.assign(video.frames.size(), {});
			cache->lstm.assign(video.frames.size(), {});
		}
		typename EncoderTower<T>::Cache local_tower;
		ConvLstmCache<T> local_lstm;
		for (std::size_t n = 0; n < video.frames.size(); ++n) {
			auto& tc = cache ? cache->tower[n] : local_tower;
			const auto& feats = tower_.forward(video.frames[n], tc);
			s = lstm_.forward(feats.level[3], s, cache ? &cache->lstm[n] : nullptr);
		}
		return s;
	}

	/// Accumulates parameter gradients given d(loss)/d(final state).
	void backward(const Cache& cache, const MotionState<T>& state_grad) const {
		FeatureMap<T> dh = state_grad.hidden;
		FeatureMap<T> dc = state_grad.cell;
		for (int n = static_cast<int>(cache.lstm.size()) - 1; n >= 0; --n) {
			auto g = lstm_.backward(cache.lstm[n], dh, dc);
			typename EncoderTower<T>::Features tg;
			tg.level[3] = std::move(g.input);
			tower_.backward(cache.tower[n], tg, false);
			dh = std::move(g.state.hidden);
			dc = std::move(g.state.cell);
		}
	}

private:
	CodecConfig cfg_;
	EncoderTower<T> tower_;
	ConvLstm<T> lstm_;
};

/// Recurrent video decoder: a flow encoder over the previous full-resolution flow, a ConvLSTM seeded with
/// the motion code, and a flow decoder predicting flows at four scales with skip links from the flow
/// encoder. Each finer flow is the upsampled coarser flow plus a predicted correction.
template <class T>
class VideoDecoder {
public:
	struct StepCache {
		typename EncoderTower<T>::Cache tower;
		ConvLstmCache<T> lstm;
		FeatureMap<T> hidden;  // ConvLSTM output h'
		FeatureMap<T> up_pre[3];
		FeatureMap<T> hybrid[3];  // hybrid maps at 1/4, 1/2 and full resolution
	};

	struct StepResult {
		MotionState<T> state;
		FlowPyramid<T> flows;
	};

	struct DecodeResult {
		/// warped[n][l]: central-frame pyramid level l warped by flow level l of step n; warped[n][3] is frame n.
		std::vector<std::array<FeatureMap<T>, 4>> warped;
		std::vector<FlowPyramid<T>> flows;

		VideoSequence<T> video() const {
			VideoSequence<T> v;
			for (const auto& w : warped) v.frames.push_back(w[3]);
			return v;
		}
	};

	struct DecodeCache {
		std::array<FeatureMap<T>, 4> central_levels;
		std::vector<StepCache> steps;
	};

	VideoDecoder(const CodecConfig& cfg, ParamStore<T>& store)
		: cfg_(cfg), widths_(cfg.widths()), tower_(store, "rvd.flow_enc", 2, widths_),
		  lstm_(store, "rvd.lstm", widths_[3], widths_[3]) {
		const auto& w = widths_;
		flow_[0] = Conv<T>(store, "rvd.flow1", ConvSpec::same(w[3], 2), Init::zeros);
		up_[0] = Deconv<T>(store, "rvd.up1", w[3], w[2]);
		flow_[1] = Conv<T>(store, "rvd.flow2", ConvSpec::same(2 * w[2] + 2, 2), Init::zeros);
		up_[1] = Deconv<T>(store, "rvd.up2", 2 * w[2] + 2, w[1]);
		flow_[2] = Conv<T>(store, "rvd.flow3", ConvSpec::same(2 * w[1] + 2, 2), Init::zeros);
		up_[2] = Deconv<T>(store, "rvd.up3", 2 * w[1] + 2, w[0]);
		flow_[3] = Conv<T>(store, "rvd.flow4", ConvSpec::same(2 * w[0] + 2, 2), Init::zeros);
	}

	/// One recurrence step. `prev_flow` is the previous full-resolution flow (zeros on the first step).
	StepResult step(const MotionState<T>& state, const FlowField<T>& prev_flow, StepCache* cache = nullptr) const {
		const int H = prev_flow.height();
		const int W = prev_flow.width();
		if (H % 8 != 0 || W % 8 != 0) throw ShapeError("rvd_step", "flow resolution", "must be divisible by 8");
		if (state.hidden.height() * 8 != H) throw ShapeError("rvd_step", "state height", H / 8, state.hidden.height());
		if (state.hidden.width() * 8 != W) throw ShapeError("rvd_step", "state width", W / 8, state.hidden.width());
		if (state.hidden.channels() != widths_[3])
			throw ShapeError("rvd_step", "state channels", widths_[3], state.hidden.channels());

		StepCache local;
		StepCache& c = cache ? *cache : local;
		const auto& enc = tower_.forward(prev_flow.map(), c.tower);
		StepResult r;
		r.state = lstm_.forward(enc.level[3], state, &c.lstm);
		c.hidden = r.state.hidden;

		r.flows.level[0] = FlowField<T>(flow_[0].forward(c.hidden));
		const FeatureMap<T>* below = &c.hidden;
		for (int s = 0; s < 3; ++s) {
			c.up_pre[s] = up_[s].forward(*below);
			const FeatureMap<T> act = leaky_relu(c.up_pre[s]);
			const FlowField<T> coarse_up = upsample_flow2(r.flows.level[s]);
			c.hybrid[s] = concat_channels({&act, &coarse_up.map(), &enc.level[2 - s]});
			FeatureMap<T> fine = flow_[s + 1].forward(c.hybrid[s]);
			fine += coarse_up.map();
			r.flows.level[s + 1] = FlowField<T>(std::move(fine));
			below = &c.hybrid[s];
		}
		return r;
	}

	struct StepGrads {
		MotionState<T> state;   // d/d(input state)
		FlowField<T> prev_flow;  // d/d(prev_flow)
	};

	/// `state_grad` is d(loss)/d(output state) (members may be empty); `flow_grads.level[l]` may be empty.
	StepGrads step_backward(const StepCache& c, const MotionState<T>& state_grad, const FlowPyramid<T>& flow_grads) const {
		auto flow_grad = [&](int l) {
			const auto& g = flow_grads.level[l];
			return g.empty() ? FeatureMap<T>() : g.map();
		};
		typename EncoderTower<T>::Features enc_grads;
		// g: gradient w.r.t. the flow at the current level, accumulated top-down.
		FeatureMap<T> g = flow_grad(3);
		if (g.empty()) g = FeatureMap<T>(2, c.hybrid[2].height(), c.hybrid[2].width());
		FeatureMap<T> dhybrid_above;  // gradient w.r.t. hybrid[s] coming from up_[s+1]
		for (int s = 2; s >= 0; --s) {
			FeatureMap<T> dhyb = flow_[s + 1].backward(c.hybrid[s], g);
			accumulate(dhyb, dhybrid_above);
			const int act_c = c.up_pre[s].channels();
			const int skip_c = c.hybrid[s].channels() - act_c - 2;
			auto parts = split_channels(dhyb, {act_c, 2, skip_c});
			enc_grads.level[2 - s] = std::move(parts[2]);
			// residual path plus the upsampled-flow channels of the hybrid map
			FeatureMap<T> dup = g;
			dup += parts[1];
			FeatureMap<T> gc = detail::upsample2_bilinear_backward(dup, T(2));
			accumulate(gc, flow_grad(s));
			const FeatureMap<T>& below = s == 0 ? c.hidden : c.hybrid[s - 1];
			dhybrid_above = up_[s].backward(below, leaky_relu_backward(c.up_pre[s], parts[0]));
			g = std::move(gc);
		}
		// dhybrid_above now holds the gradient w.r.t. the ConvLSTM output from up_[0].
		FeatureMap<T> dhidden = flow_[0].backward(c.hidden, g);
		dhidden += dhybrid_above;
		accumulate(dhidden, state_grad.hidden);
		auto lg = lstm_.backward(c.lstm, dhidden, state_grad.cell);
		enc_grads.level[3] = std::move(lg.input);
		StepGrads out;
		out.state = std::move(lg.state);
		out.prev_flow = FlowField<T>(tower_.backward(c.tower, enc_grads, true));
		return out;
	}

	/// Runs N steps from `state` and warps the central frame (and its pyramid) with every predicted flow.
	DecodeResult decode(const MotionState<T>& state, const FeatureMap<T>& central, int n_frames,
						DecodeCache* cache = nullptr) const {
		if (central.height() != state.hidden.height() * 8)
			throw ShapeError("decode_video", "central height", state.hidden.height() * 8, central.height());
		if (central.width() != state.hidden.width() * 8)
			throw ShapeError("decode_video", "central width", state.hidden.width() * 8, central.width());
		if (n_frames < 1) throw ShapeError("decode_video", "frame count", "must be >= 1");
		DecodeCache local;
		DecodeCache& dc = cache ? *cache : local;
		dc.central_levels = image_pyramid(central);
		dc.steps.assign(cache ? n_frames : 1, {});

		DecodeResult out;
		MotionState<T> s = state;
		FlowField<T> prev(central.height(), central.width());
		for (int n = 0; n < n_frames; ++n) {
			auto r = step(s, prev, &dc.steps[cache ? n : 0]);
			std::array<FeatureMap<T>, 4> warped;
			for (int l = 0; l < 4; ++l) warped[l] = bilinear_warp(dc.central_levels[l], r.flows.level[l]);
			out.warped.push_back(std::move(warped));
			prev = r.flows.level[3];
			out.flows.push_back(std::move(r.flows));
			s = std::move(r.state);
		}
		return out;
	}

	/// Backpropagates d(loss)/d(warped) and d(loss)/d(flows) (entries may be empty) through all steps;
	/// returns d(loss)/d(initial motion state).
	MotionState<T> decode_backward(const DecodeCache& cache, const DecodeResult& result,
								   const std::vector<std::array<FeatureMap<T>, 4>>& warped_grads,
								   const std::vector<FlowPyramid<T>>& flow_grads) const {
		const int N = static_cast<int>(cache.steps.size());
		MotionState<T> dstate;
		FeatureMap<T> dprev;  // gradient w.r.t. this step's full-res flow from the next step's input
		for (int n = N - 1; n >= 0; --n) {
			FlowPyramid<T> g;
			for (int l = 0; l < 4; ++l) {
				FeatureMap<T> acc;
				if (!flow_grads.empty() && !flow_grads[n].level[l].empty()) acc = flow_grads[n].level[l].map();
				if (!warped_grads.empty() && !warped_grads[n][l].empty()) {
					auto wg = bilinear_warp_backward(cache.central_levels[l], result.flows[n].level[l],
													 warped_grads[n][l], false);
					accumulate(acc, wg.flow.map());
				}
				if (l == 3) accumulate(acc, dprev);
				if (!acc.empty()) g.level[l] = FlowField<T>(std::move(acc));
			}
			auto sg = step_backward(cache.steps[n], dstate, g);
			dstate = std::move(sg.state);
			dprev = std::move(sg.prev_flow.map());
		}
		return dstate;
	}

	const std::array<int, 4>& widths() const noexcept { return widths_; }

private:
	CodecConfig cfg_;
	std::array<int, 4> widths_;
	EncoderTower<T> tower_;
	ConvLstm<T> lstm_;
	Conv<T> flow_[4];
	Deconv<T> up_[3];
};

/// Parameter stores of the video autoencoder.
template <class T>
struct CodecParams {
	ParamStore<T> rve;
	ParamStore<T> rvd;
};

/// Declares every array of both networks and initializes them from `seed`.
template <class T>
CodecParams<T> make_codec_params(const CodecConfig& cfg, std::uint64_t seed) {
	cfg.validate();
	CodecParams<T> p;
	{
		VideoEncoder<T> e(cfg, p.rve);
		VideoDecoder<T> d(cfg, p.rvd);
	}
	init_params(p.rve, derive_seed(seed, "rve"));
	init_params(p.rvd, derive_seed(seed, "rvd"));
	return p;
}

/// Encodes the video and re-renders it from its ground-truth central frame.
template <class T>
typename VideoDecoder<T>::DecodeResult autoencode(const VideoSequence<T>& video, const CodecConfig& cfg,
												  CodecParams<T>& params) {
	VideoEncoder<T> enc(cfg, params.rve);
	VideoDecoder<T> dec(cfg, params.rvd);
	const auto state = enc.encode(video);
	return dec.decode(state, video.central(), video.size());
}

}  // namespace unfold
