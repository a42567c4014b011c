#pragma once

#include <chrono>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <functional>
#include <numeric>
#include <string>
#include <utility>
#include <vector>

#include "json.hpp"
#include "unfold/blur_encoder.hpp"
#include "unfold/deblur_net.hpp"
#include "unfold/io/checkpoint.hpp"
#include "unfold/losses.hpp"
#include "unfold/metrics.hpp"
#include "unfold/motion_codec.hpp"
#include "unfold/synthdata.hpp"

namespace unfold {

enum class Stage { autoencoder, bie, deblur };

inline std::string stage_name(Stage s) {
	switch (s) {
		case Stage::autoencoder:
			return "autoencoder";
		case Stage::bie:
			return "bie";
		case Stage::deblur:
			return "deblur";
	}
	return "?";
}

inline Stage parse_stage(const std::string& s) {
	if (s == "autoencoder") return Stage::autoencoder;
	if (s == "bie") return Stage::bie;
	if (s == "deblur") return Stage::deblur;
	throw ConfigError("unknown stage '" + s + "'");
}

/// Architecture of every network; stored as model.json next to the checkpoints.
struct ModelConfig {
	CodecConfig codec;
	DeblurConfig dm;

	void validate() const {
		codec.validate();
		dm.validate();
	}

	nlohmann::ordered_json to_json() const {
		return {{"n_frames", codec.n_frames},
				{"channel_mult", codec.channel_mult},
				{"dm", {{"base_width", dm.base_width}, {"rdbs_per_scale", dm.rdbs_per_scale}, {"rdb_layers", dm.rdb_layers}, {"growth", dm.growth}}}};
	}

	static ModelConfig from_json(const nlohmann::json& j) {
		ModelConfig m;
		m.codec.n_frames = j.at("n_frames").get<int>();
		m.codec.channel_mult = j.at("channel_mult").get<double>();
		const auto& d = j.at("dm");
		m.dm.base_width = d.at("base_width").get<int>();
		m.dm.rdbs_per_scale = d.at("rdbs_per_scale").get<int>();
		m.dm.rdb_layers = d.at("rdb_layers").get<int>();
		m.dm.growth = d.at("growth").get<int>();
		m.validate();
		return m;
	}
};

struct TrainConfig {
	Stage stage = Stage::autoencoder;
	double learning_rate = 1e-4;
	double finetune_multiplier = 0.1;  // stage bie: RVD rate = multiplier x BIE rate
	bool bie_from_scratch = false;     // stage bie: fresh RVD trained jointly at the full rate
	int batch_size = 4;
	int iterations = 1000;
	std::uint64_t seed = 0;
	LossWeights weights;
	std::string manifest;
	int checkpoint_every = 0;  // 0: only at the end
	int decay_every = 0;       // 0: constant rate
	double decay_factor = 0.5;

	void validate() const {
		if (!(learning_rate > 0.0)) throw ConfigError("learning rate must be > 0");
		if (!(finetune_multiplier >= 0.0)) throw ConfigError("fine-tune multiplier must be >= 0");
		if (batch_size < 1) throw ConfigError("batch size must be >= 1");
		if (stage == Stage::bie && batch_size < 2) throw ConfigError("stage bie needs batch size >= 2 (batch norm)");
		if (iterations < 0) throw ConfigError("iterations must be >= 0");
		if (checkpoint_every < 0) throw ConfigError("checkpoint cadence must be >= 0");
		if (decay_every < 0 || !(decay_factor > 0.0)) throw ConfigError("bad learning-rate decay");
		weights.validate();
	}

	double rate_at(std::int64_t iteration) const {
		if (decay_every <= 0) return learning_rate;
		return learning_rate * std::pow(decay_factor, static_cast<double>(iteration / decay_every));
	}
};

/// Loss of one step (mean over the batch) with its named components.
struct StepStats {
	double loss = 0.0;
	std::vector<std::pair<std::string, double>> components;

	void add(const std::string& name, double v) {
		for (auto& [n, x] : components)
			if (n == name) {
				x += v;
				return;
			}
		components.emplace_back(name, v);
	}
	double component(const std::string& name) const {
		for (const auto& [n, x] : components)
			if (n == name) return x;
		throw ConfigError("no loss component '" + name + "'");
	}
	void accumulate(const StepStats& o, double w) {
		loss += w * o.loss;
		for (const auto& [n, x] : o.components) add(n, w * x);
	}
};

struct TraceRow {
	std::int64_t iter = 0;
	Stage stage = Stage::autoencoder;
	StepStats stats;
	double wall_ms = 0.0;

	nlohmann::ordered_json to_json() const {
		nlohmann::ordered_json c = nlohmann::ordered_json::object();
		for (const auto& [n, x] : stats.components) c[n] = x;
		return {{"iter", iter}, {"stage", stage_name(stage)}, {"loss", stats.loss}, {"components", c}, {"wall_ms", wall_ms}};
	}
};

namespace train_detail {

/// Multi-scale reconstruction of N frames: sum_l w_l * MSE(warped[.][l], targets[.][l]). Writes per-level
/// gradients (scaled by grad_scale) into `grads` when given.
inline double multiscale_recon(const std::vector<std::array<FeatureMap<float>, 4>>& warped,
							   const std::vector<std::array<FeatureMap<float>, 4>>& targets, const LossWeights& w,
							   std::vector<std::array<FeatureMap<float>, 4>>* grads, double grad_scale,
							   std::array<double, 4>* per_level = nullptr) {
	if (warped.size() != targets.size())
		throw ShapeError("multiscale_recon", "frame count", static_cast<long long>(targets.size()),
						 static_cast<long long>(warped.size()));
	const std::size_t N = warped.size();
	if (grads) grads->assign(N, {});
	double total = 0.0;
	for (int l = 0; l < 4; ++l) {
		std::vector<FeatureMap<float>> p(N), t(N);
		for (std::size_t n = 0; n < N; ++n) {
			p[n] = warped[n][l];
			t[n] = targets[n][l];
		}
		const bool want = grads && w.scale[l] > 0.0;
		std::vector<FeatureMap<float>> g;
		const double mse = recon_loss<float>(p, t, want ? &g : nullptr, grad_scale * w.scale[l]);
		if (per_level) (*per_level)[l] = mse;
		total += w.scale[l] * mse;
		if (want)
			for (std::size_t n = 0; n < N; ++n) (*grads)[n][l] = std::move(g[n]);
	}
	return total;
}

inline std::vector<std::array<FeatureMap<float>, 4>> pyramid_targets(const VideoSequence<float>& video) {
	std::vector<std::array<FeatureMap<float>, 4>> t;
	for (const auto& f : video.frames) t.push_back(image_pyramid(f));
	return t;
}

inline void check_finite(double v, Stage stage, std::int64_t iter, const StepStats& s) {
	if (std::isfinite(v)) return;
	std::string detail;
	for (const auto& [n, x] : s.components) detail += " " + n + "=" + std::to_string(x);
	throw NumericalError("non-finite " + stage_name(stage) + " loss at iteration " + std::to_string(iter) + ":" + detail);
}

}  // namespace train_detail

/// Stage-1 loss of one sequence: multi-scale reconstruction of the ground-truth frames from its own
/// motion code plus lambda x flow smoothness. With grad_scale != 0 it accumulates scaled gradients into both
/// stores.
inline StepStats autoencoder_loss(const VideoSequence<float>& video, const CodecConfig& cfg, CodecParams<float>& params,
								  const LossWeights& w, double grad_scale = 0.0) {
	VideoEncoder<float> enc(cfg, params.rve);
	VideoDecoder<float> dec(cfg, params.rvd);
	const bool backward = grad_scale != 0.0;
	typename VideoEncoder<float>::Cache ec;
	typename VideoDecoder<float>::DecodeCache dc;
	const auto state = enc.encode(video, backward ? &ec : nullptr);
	const auto result = dec.decode(state, video.central(), video.size(), backward ? &dc : nullptr);
	const auto targets = train_detail::pyramid_targets(video);
	std::vector<std::array<FeatureMap<float>, 4>> wg;
	std::array<double, 4> levels{};
	const double recon = train_detail::multiscale_recon(result.warped, targets, w, backward ? &wg : nullptr, grad_scale, &levels);
	std::vector<FlowPyramid<float>> fg;
	const double smooth = smoothness_loss(result.flows, backward && w.smoothness > 0 ? &fg : nullptr, grad_scale * w.smoothness);
	StepStats s;
	s.loss = recon + w.smoothness * smooth;
	s.add("recon", recon);
	s.add("smooth", smooth);
	s.add("mse_full", levels[3]);
	if (backward) enc.backward(ec, dec.decode_backward(dc, result, wg, fg));
	return s;
}

/// Loss of the central-frame-repeated video under the stage-1 objective (zero flows).
inline double repeated_central_loss(const VideoSequence<float>& video, const LossWeights& w) {
	const auto targets = train_detail::pyramid_targets(video);
	const auto levels = image_pyramid(video.central());
	std::vector<std::array<FeatureMap<float>, 4>> rep(video.frames.size(), levels);
	return train_detail::multiscale_recon(rep, targets, w, nullptr, 0.0);
}

/// Stage-2 loss of a batch: the BIE encodes (blurred, central) into a motion code, the RVD renders the video,
/// and the loss is the ordering-invariant multi-scale reconstruction plus lambda x smoothness, averaged over
/// the batch. Gradients reach the BIE only through the decoder. With `rvd_grad` false the decoder
/// parameters receive no gradient.
inline StepStats bie_loss(const std::vector<const VideoSequence<float>*>& videos, const std::vector<const FeatureMap<float>*>& blurred,
						  const CodecConfig& cfg, ParamStore<float>& bie, ParamStore<float>& rvd, const LossWeights& w,
						  Mode mode, bool backward) {
	const std::size_t B = videos.size();
	BlurEncoder<float> encoder(cfg, bie);
	VideoDecoder<float> dec(cfg, rvd);
	std::vector<FeatureMap<float>> xb, xc;
	for (std::size_t b = 0; b < B; ++b) {
		xb.push_back(*blurred[b]);
		xc.push_back(videos[b]->central());
	}
	typename BlurEncoder<float>::Cache cache;
	const auto states = encoder.encode(xb, xc, mode, backward ? &cache : nullptr);
	StepStats total;
	std::vector<MotionState<float>> state_grads(B);
	const double scale = 1.0 / static_cast<double>(B);
	for (std::size_t b = 0; b < B; ++b) {
		typename VideoDecoder<float>::DecodeCache dc;
		const auto result = dec.decode(states[b], videos[b]->central(), videos[b]->size(), backward ? &dc : nullptr);
		const auto fwd = train_detail::pyramid_targets(*videos[b]);
		const auto bwd = train_detail::pyramid_targets(videos[b]->reversed());
		const double lf = train_detail::multiscale_recon(result.warped, fwd, w, nullptr, 0.0);
		const double lb = train_detail::multiscale_recon(result.warped, bwd, w, nullptr, 0.0);
		const bool forward_wins = !w.ordering_invariant || lf <= lb;
		const auto& targets = forward_wins ? fwd : bwd;
		std::vector<std::array<FeatureMap<float>, 4>> wg;
		std::array<double, 4> levels{};
		const double recon = train_detail::multiscale_recon(result.warped, targets, w, backward ? &wg : nullptr, scale, &levels);
		std::vector<FlowPyramid<float>> fg;
		const double smooth = smoothness_loss(result.flows, backward && w.smoothness > 0 ? &fg : nullptr, scale * w.smoothness);
		StepStats s;
		s.loss = recon + w.smoothness * smooth;
		s.add("recon", recon);
		s.add("smooth", smooth);
		s.add("mse_full", levels[3]);
		s.add("reversed", forward_wins ? 0.0 : 1.0);
		total.accumulate(s, scale);
		if (backward) state_grads[b] = dec.decode_backward(dc, result, wg, fg);
	}
	if (backward) encoder.backward(cache, state_grads);
	return total;
}

/// Stage-3 loss of one image: MSE between deblur(blurred) and the sharp central frame.
inline StepStats deblur_loss(const FeatureMap<float>& blurred, const FeatureMap<float>& central, const DeblurConfig& cfg,
							 ParamStore<float>& dm, double grad_scale = 0.0) {
	DeblurNet<float> net(cfg, dm);
	typename DeblurNet<float>::Cache cache;
	const bool backward = grad_scale != 0.0;
	const FeatureMap<float> out = net.forward(blurred, backward ? &cache : nullptr);
	std::vector<FeatureMap<float>> g;
	const double mse = recon_loss<float>(std::span<const FeatureMap<float>>(&out, 1), std::span<const FeatureMap<float>>(&central, 1),
										 backward ? &g : nullptr, grad_scale);
	if (backward) net.backward(cache, g.front());
	StepStats s;
	s.loss = mse;
	s.add("mse", mse);
	return s;
}

/// Sample indices of iteration `iter`: a fresh permutation of the data per epoch, seeded by (seed, epoch),
/// so the schedule depends only on the iteration number and resumes exactly.
inline std::vector<std::size_t> batch_indices(std::uint64_t seed, std::int64_t iter, int batch_size, std::size_t n) {
	std::vector<std::size_t> out;
	std::int64_t cached_epoch = -1;
	std::vector<std::size_t> perm(n);
	for (int b = 0; b < batch_size; ++b) {
		const std::int64_t k = iter * batch_size + b;
		const std::int64_t epoch = k / static_cast<std::int64_t>(n);
		if (epoch != cached_epoch) {
			std::iota(perm.begin(), perm.end(), std::size_t{0});
			Rng rng(derive_seed(seed, static_cast<std::uint64_t>(epoch)));
			for (std::size_t i = n; i > 1; --i) std::swap(perm[i - 1], perm[rng.next() % i]);
			cached_epoch = epoch;
		}
		out.push_back(perm[static_cast<std::size_t>(k % static_cast<std::int64_t>(n))]);
	}
	return out;
}

/// Per-iteration hooks. `on_step` sees every trace row; `on_checkpoint` is called at the configured cadence and
/// at the end; `should_stop` may end training early after any step.
struct TrainHooks {
	std::function<void(const TraceRow&)> on_step;
	std::function<void(std::int64_t)> on_checkpoint;
	std::function<bool(std::int64_t)> should_stop;
};

namespace train_detail {

template <class StepFn>
std::int64_t run_loop(const TrainConfig& cfg, std::int64_t start, StepFn&& step, const TrainHooks& hooks) {
	std::int64_t it = start;
	while (it < cfg.iterations) {
		const auto t0 = std::chrono::steady_clock::now();
		TraceRow row;
		row.stage = cfg.stage;
		row.stats = step(it);
		check_finite(row.stats.loss, cfg.stage, it, row.stats);
		++it;
		row.iter = it;
		row.wall_ms = std::chrono::duration<double, std::milli>(std::chrono::steady_clock::now() - t0).count();
		if (hooks.on_step) hooks.on_step(row);
		const bool stop = hooks.should_stop && hooks.should_stop(it);
		if (hooks.on_checkpoint && cfg.checkpoint_every > 0 && it % cfg.checkpoint_every == 0 && it < cfg.iterations && !stop)
			hooks.on_checkpoint(it);
		if (stop) break;
	}
	if (hooks.on_checkpoint) hooks.on_checkpoint(it);
	return it;
}

}  // namespace train_detail

/// Stage 1: trains RVE and RVD jointly, continuing from the stores' iteration counter. Returns the final
/// iteration.
inline std::int64_t train_autoencoder(const TrainConfig& cfg, const CodecConfig& codec, const std::vector<VideoSequence<float>>& data,
									  CodecParams<float>& params, const TrainHooks& hooks = {}) {
	cfg.validate();
	if (data.empty()) throw ConfigError("train_autoencoder: empty dataset");
	for (const auto& v : data) {
		v.validate("train_autoencoder");
		if (v.size() != codec.n_frames)
			throw ShapeError("train_autoencoder", "frame count", codec.n_frames, v.size());
	}
	auto step = [&](std::int64_t it) {
		params.rve.zero_grad();
		params.rvd.zero_grad();
		const auto idx = batch_indices(cfg.seed, it, cfg.batch_size, data.size());
		StepStats s;
		const double scale = 1.0 / static_cast<double>(idx.size());
		for (std::size_t i : idx) s.accumulate(autoencoder_loss(data[i], codec, params, cfg.weights, scale), scale);
		const double lr = cfg.rate_at(it);
		adam_step(params.rve, lr);
		adam_step(params.rvd, lr);
		return s;
	};
	return train_detail::run_loop(cfg, params.rve.iteration(), step, hooks);
}

/// Stage 2: trains the BIE through the decoder; the RVD is fine-tuned at finetune_multiplier x the rate
/// (skipped when the multiplier is 0).
inline std::int64_t train_bie(const TrainConfig& cfg, const CodecConfig& codec, const std::vector<Sample>& data,
							  ParamStore<float>& bie, ParamStore<float>& rvd, const TrainHooks& hooks = {}) {
	cfg.validate();
	if (data.size() < 2) throw ConfigError("train_bie: need at least 2 sequences");
	for (const auto& s : data)
		if (s.video.size() != codec.n_frames) throw ShapeError("train_bie", "frame count", codec.n_frames, s.video.size());
	const double rvd_mult = cfg.bie_from_scratch ? 1.0 : cfg.finetune_multiplier;
	auto step = [&](std::int64_t it) {
		bie.zero_grad();
		rvd.zero_grad();
		auto idx = batch_indices(cfg.seed, it, cfg.batch_size, data.size());
		std::vector<const VideoSequence<float>*> videos;
		std::vector<const FeatureMap<float>*> blurred;
		for (std::size_t i : idx) {
			videos.push_back(&data[i].video);
			blurred.push_back(&data[i].blurred);
		}
		const StepStats s = bie_loss(videos, blurred, codec, bie, rvd, cfg.weights, Mode::train, true);
		const double lr = cfg.rate_at(it);
		adam_step(bie, lr);
		if (rvd_mult > 0.0) adam_step(rvd, lr * rvd_mult);
		return s;
	};
	return train_detail::run_loop(cfg, bie.iteration(), step, hooks);
}

/// Stage 3: trains the deblurring network on (blurred, central) pairs.
inline std::int64_t train_deblur(const TrainConfig& cfg, const DeblurConfig& dmc, const std::vector<Sample>& data,
								 ParamStore<float>& dm, const TrainHooks& hooks = {}) {
	cfg.validate();
	if (data.empty()) throw ConfigError("train_deblur: empty dataset");
	auto step = [&](std::int64_t it) {
		dm.zero_grad();
		const auto idx = batch_indices(cfg.seed, it, cfg.batch_size, data.size());
		StepStats s;
		const double scale = 1.0 / static_cast<double>(idx.size());
		for (std::size_t i : idx) s.accumulate(deblur_loss(data[i].blurred, data[i].video.central(), dmc, dm, scale), scale);
		adam_step(dm, cfg.rate_at(it));
		return s;
	};
	return train_detail::run_loop(cfg, dm.iteration(), step, hooks);
}

/// Checkpoint directory layout shared by the training stages, unfold and eval.
struct CheckpointDir {
	std::filesystem::path root;

	std::string rve() const { return (root / "rve.unfd").string(); }
	std::string rvd() const { return (root / "rvd.unfd").string(); }
	std::string bie() const { return (root / "bie.unfd").string(); }
	std::string rvd_finetuned() const { return (root / "rvd_finetuned.unfd").string(); }
	std::string dm() const { return (root / "dm.unfd").string(); }
	std::string model() const { return (root / "model.json").string(); }
	std::string trace(Stage s) const { return (root / ("trace_" + stage_name(s) + ".jsonl")).string(); }

	/// Decoder used at inference: the stage-2 fine-tuned one when present.
	std::string inference_rvd() const {
		return std::filesystem::exists(rvd_finetuned()) ? rvd_finetuned() : rvd();
	}

	void write_model(const ModelConfig& m) const {
		std::filesystem::create_directories(root);
		if (std::filesystem::exists(model())) {
			const ModelConfig existing = read_model();
			if (existing.to_json() != m.to_json())
				throw ConfigError("model config differs from " + model() + "; use a fresh checkpoint directory");
			return;
		}
		std::ofstream f(model());
		f << m.to_json().dump(1) << '\n';
		if (!f) throw CheckpointError("cannot write " + model());
	}

	ModelConfig read_model() const {
		std::ifstream f(model());
		if (!f) throw CheckpointError("missing model config " + model());
		try {
			return ModelConfig::from_json(nlohmann::json::parse(f));
		} catch (const nlohmann::json::exception& e) {
			throw CheckpointError("malformed model config " + model() + ": " + e.what());
		}
	}
};

/// Loads a checkpoint into a store declared by the network constructors, checking names and shapes.
inline ParamStore<float> load_into(const std::string& path, ParamStore<float> declared) {
	if (!std::filesystem::exists(path)) throw CheckpointError("missing checkpoint " + path);
	ParamStore<float> loaded = io::load_checkpoint(path);
	if (loaded.array_count() != declared.array_count())
		throw CheckpointError("checkpoint " + path + ": holds " + std::to_string(loaded.array_count()) + " arrays, model declares " +
							  std::to_string(declared.array_count()));
	for (auto& [name, p] : declared) {
		if (!loaded.contains(name)) throw CheckpointError("checkpoint " + path + ": missing array '" + name + "'");
		const auto& q = loaded.at(name);
		if (q.shape != p.shape)
			throw ShapeError("checkpoint " + path + " '" + name + "'", "shape",
							 "expected " + shape_string(p.shape) + ", found " + shape_string(q.shape));
		p.value = q.value;
		p.adam_m = q.adam_m;
		p.adam_v = q.adam_v;
	}
	declared.set_iteration(loaded.iteration());
	return declared;
}

inline ParamStore<float> declare_rve(const CodecConfig& c) {
	ParamStore<float> s;
	VideoEncoder<float> e(c, s);
	return s;
}
inline ParamStore<float> declare_rvd(const CodecConfig& c) {
	ParamStore<float> s;
	VideoDecoder<float> d(c, s);
	return s;
}
inline ParamStore<float> declare_bie(const CodecConfig& c) {
	ParamStore<float> s;
	BlurEncoder<float> e(c, s);
	return s;
}
inline ParamStore<float> declare_dm(const DeblurConfig& c) {
	ParamStore<float> s;
	DeblurNet<float> n(c, s);
	return s;
}

struct TrainReport {
	std::int64_t final_iteration = 0;
	std::vector<TraceRow> trace;
};

/// File-level driver: loads the manifest, initializes or resumes the stage's stores, trains, writes
/// checkpoints and appends the loss trace (JSON lines) under `ckpt`.
///   autoencoder: writes rve.unfd, rvd.unfd
///   bie:         needs rvd.unfd; writes bie.unfd, rvd_finetuned.unfd
///   deblur:      writes dm.unfd (never touches the other networks)
inline TrainReport train_stage(const TrainConfig& cfg, const ModelConfig& model, const CheckpointDir& ckpt, bool resume,
							   std::function<bool(std::int64_t)> should_stop = {}) {
	cfg.validate();
	model.validate();
	const Dataset ds(cfg.manifest);
	if (ds.manifest().n_frames != model.codec.n_frames)
		throw ConfigError("dataset has " + std::to_string(ds.manifest().n_frames) + " frames per sequence, model expects " +
						  std::to_string(model.codec.n_frames));
	if (cfg.stage == Stage::bie && !std::filesystem::exists(ckpt.rvd()) && !cfg.bie_from_scratch)
		throw CheckpointError("stage bie requires the stage-autoencoder decoder checkpoint " + ckpt.rvd());
	ckpt.write_model(model);
	const auto samples = ds.load_all();

	TrainReport report;
	std::ofstream trace(ckpt.trace(cfg.stage), resume ? std::ios::app : std::ios::trunc);
	if (!trace) throw CheckpointError("cannot write " + ckpt.trace(cfg.stage));
	TrainHooks hooks;
	hooks.should_stop = std::move(should_stop);
	hooks.on_step = [&](const TraceRow& r) {
		trace << r.to_json().dump() << '\n';
		trace.flush();
		report.trace.push_back(r);
	};

	switch (cfg.stage) {
		case Stage::autoencoder: {
			CodecParams<float> p;
			if (resume) {
				p.rve = load_into(ckpt.rve(), declare_rve(model.codec));
				p.rvd = load_into(ckpt.rvd(), declare_rvd(model.codec));
			} else {
				p = make_codec_params<float>(model.codec, cfg.seed);
			}
			std::vector<VideoSequence<float>> videos;
			for (const auto& s : samples) videos.push_back(s.video);
			hooks.on_checkpoint = [&](std::int64_t) {
				io::save_checkpoint(p.rve, ckpt.rve());
				io::save_checkpoint(p.rvd, ckpt.rvd());
			};
			report.final_iteration = train_autoencoder(cfg, model.codec, videos, p, hooks);
			break;
		}
		case Stage::bie: {
			ParamStore<float> bie;
			ParamStore<float> rvd;
			if (resume) {
				bie = load_into(ckpt.bie(), declare_bie(model.codec));
				rvd = load_into(ckpt.rvd_finetuned(), declare_rvd(model.codec));
			} else {
				bie = make_bie_params<float>(model.codec, cfg.seed);
				if (cfg.bie_from_scratch) {
					rvd = make_codec_params<float>(model.codec, cfg.seed).rvd;
				} else {
					rvd = load_into(ckpt.rvd(), declare_rvd(model.codec));
					// fine-tuning starts a fresh optimizer
					for (auto& [name, q] : rvd) {
						std::fill(q.adam_m.begin(), q.adam_m.end(), 0.0f);
						std::fill(q.adam_v.begin(), q.adam_v.end(), 0.0f);
					}
					rvd.set_iteration(0);
				}
			}
			hooks.on_checkpoint = [&](std::int64_t) {
				io::save_checkpoint(bie, ckpt.bie());
				io::save_checkpoint(rvd, ckpt.rvd_finetuned());
			};
			report.final_iteration = train_bie(cfg, model.codec, samples, bie, rvd, hooks);
			break;
		}
		case Stage::deblur: {
			ParamStore<float> dm = resume ? load_into(ckpt.dm(), declare_dm(model.dm)) : make_deblur_params<float>(model.dm, cfg.seed);
			hooks.on_checkpoint = [&](std::int64_t) { io::save_checkpoint(dm, ckpt.dm()); };
			report.final_iteration = train_deblur(cfg, model.dm, samples, dm, hooks);
			break;
		}
	}
	return report;
}

/// Mean of the first and last `window` losses of a trace.
inline std::pair<double, double> smoothed_ends(const std::vector<TraceRow>& trace, std::size_t window) {
	if (trace.size() < 2 * window || window == 0) throw ConfigError("trace too short for the smoothing window");
	double a = 0.0;
	double b = 0.0;
	for (std::size_t i = 0; i < window; ++i) {
		a += trace[i].stats.loss;
		b += trace[trace.size() - 1 - i].stats.loss;
	}
	return {a / window, b / window};
}

}  // namespace unfold
