#pragma once

#include <chrono>
#include <cmath>
#include <memory>
#include <string>
#include <vector>

#include "unfold/deblur_net.hpp"
#include "unfold/diffops/grad_check.hpp"
#include "unfold/losses.hpp"
#include "unfold/motion_codec.hpp"

namespace unfold {

namespace probes {

using Arrays = std::vector<std::vector<double>>;
using Map = FeatureMap<double>;

inline Map to_map(const std::vector<double>& v, Shape3 s) {
	Map m(s);
	std::copy(v.begin(), v.end(), m.data());
	return m;
}

inline std::vector<double> flat(const Map& m) { return {m.data(), m.data() + m.size()}; }

inline void append(std::vector<double>& out, const Map& m) { out.insert(out.end(), m.data(), m.data() + m.size()); }

inline std::vector<double> uniform(Rng& rng, std::size_t n, double lo, double hi) {
	std::vector<double> v(n);
	for (auto& x : v) x = rng.uniform(lo, hi);
	return v;
}

/// Values with |x| >= margin so that a finite-difference step never crosses the kink at zero.
inline std::vector<double> away_from_zero(Rng& rng, std::size_t n, double margin, double hi) {
	std::vector<double> v(n);
	for (auto& x : v) x = (rng.uniform() < 0.5 ? -1.0 : 1.0) * rng.uniform(margin, hi);
	return v;
}

inline GradProbe conv2d_probe(std::uint64_t seed) {
	Rng rng(seed);
	const int kinds[3][2] = {{3, 1}, {3, 2}, {1, 1}};
	const auto& k = kinds[rng.uniform_int(0, 2)];
	const ConvSpec spec{2, 3, k[0], k[1], k[0] / 2};
	const Shape3 in{2, 6, 6};
	GradProbe p;
	p.name = "conv2d";
	p.array_names = {"input", "weights", "bias"};
	p.arrays = {uniform(rng, 72, -1, 1), uniform(rng, spec.weight_count(), -1, 1), uniform(rng, 3, -1, 1)};
	p.forward = [=](const Arrays& a) { return flat(conv2d<double>(to_map(a[0], in), a[1], a[2], spec)); };
	p.backward = [=](const Arrays& a, const std::vector<double>& dout) {
		Arrays g{{}, std::vector<double>(a[1].size()), std::vector<double>(a[2].size())};
		const Map x = to_map(a[0], in);
		const Map dy = to_map(dout, {3, conv_output_extent(6, spec), conv_output_extent(6, spec)});
		g[0] = flat(conv2d_backward<double>(x, a[1], dy, spec, g[1], g[2]));
		return g;
	};
	return p;
}

inline GradProbe deconv2d_probe(std::uint64_t seed) {
	Rng rng(seed);
	const ConvSpec spec = ConvSpec::up(2, 3);
	const Shape3 in{2, 4, 4};
	GradProbe p;
	p.name = "deconv2d";
	p.array_names = {"input", "weights", "bias"};
	p.arrays = {uniform(rng, 32, -1, 1), uniform(rng, spec.weight_count(), -1, 1), uniform(rng, 3, -1, 1)};
	p.forward = [=](const Arrays& a) { return flat(deconv2d<double>(to_map(a[0], in), a[1], a[2], spec)); };
	p.backward = [=](const Arrays& a, const std::vector<double>& dout) {
		Arrays g{{}, std::vector<double>(a[1].size()), std::vector<double>(a[2].size())};
		g[0] = flat(deconv2d_backward<double>(to_map(a[0], in), a[1], to_map(dout, {3, 8, 8}), spec, g[1], g[2]));
		return g;
	};
	return p;
}

inline GradProbe leaky_relu_probe(std::uint64_t seed) {
	Rng rng(seed);
	const Shape3 in{2, 5, 5};
	GradProbe p;
	p.name = "leaky_relu";
	p.array_names = {"input"};
	p.arrays = {away_from_zero(rng, 50, 0.01, 2.0)};
	p.forward = [=](const Arrays& a) { return flat(leaky_relu(to_map(a[0], in))); };
	p.backward = [=](const Arrays& a, const std::vector<double>& dout) {
		return Arrays{flat(leaky_relu_backward(to_map(a[0], in), to_map(dout, in)))};
	};
	return p;
}

inline GradProbe batch_norm_probe(std::uint64_t seed) {
	Rng rng(seed);
	const Shape3 in{3, 4, 4};
	const std::size_t item = 48;
	GradProbe p;
	p.name = "batch_norm";
	p.array_names = {"input", "gamma", "beta"};
	p.arrays = {uniform(rng, 2 * item, -1, 1), uniform(rng, 3, 0.5, 1.5), uniform(rng, 3, -0.5, 0.5)};
	auto split = [=](const std::vector<double>& v) {
		return std::vector<Map>{to_map({v.begin(), v.begin() + item}, in), to_map({v.begin() + item, v.end()}, in)};
	};
	p.forward = [=](const Arrays& a) {
		std::vector<double> rm(3, 0.0), rv(3, 1.0);
		std::vector<double> out;
		for (const auto& m : batch_norm<double>(split(a[0]), a[1], a[2], rm, rv, Mode::train)) append(out, m);
		return out;
	};
	p.backward = [=](const Arrays& a, const std::vector<double>& dout) {
		std::vector<double> rm(3, 0.0), rv(3, 1.0);
		BatchNormCache<double> cache;
		batch_norm<double>(split(a[0]), a[1], a[2], rm, rv, Mode::train, &cache);
		Arrays g{{}, std::vector<double>(3), std::vector<double>(3)};
		for (const auto& m : batch_norm_backward<double>(cache, a[1], split(dout), g[1], g[2])) append(g[0], m);
		return g;
	};
	return p;
}

inline GradProbe convlstm_probe(std::uint64_t seed) {
	Rng rng(seed);
	const int in_c = 2;
	const int hid = 2;
	const Shape3 xs{in_c, 4, 4};
	const Shape3 hs{hid, 4, 4};
	const ConvSpec spec = convlstm_spec(in_c, hid);
	GradProbe p;
	p.name = "convlstm_step";
	p.array_names = {"x", "hidden", "cell", "weights", "bias"};
	p.arrays = {uniform(rng, 32, -1, 1), uniform(rng, 32, -1, 1), uniform(rng, 32, -1, 1),
				uniform(rng, spec.weight_count(), -0.5, 0.5), uniform(rng, 4 * hid, -0.5, 0.5)};
	p.forward = [=](const Arrays& a) {
		const auto s = convlstm_step<double>(to_map(a[0], xs), {to_map(a[1], hs), to_map(a[2], hs)}, a[3], a[4]);
		std::vector<double> out = flat(s.hidden);
		append(out, s.cell);
		return out;
	};
	p.backward = [=](const Arrays& a, const std::vector<double>& dout) {
		ConvLstmCache<double> cache;
		convlstm_step<double>(to_map(a[0], xs), {to_map(a[1], hs), to_map(a[2], hs)}, a[3], a[4], &cache);
		const std::size_t n = 32;
		Arrays g(5);
		g[3].assign(a[3].size(), 0.0);
		g[4].assign(a[4].size(), 0.0);
		auto r = convlstm_step_backward<double>(cache, a[3], to_map({dout.begin(), dout.begin() + n}, hs),
												to_map({dout.begin() + n, dout.end()}, hs), g[3], g[4]);
		g[0] = flat(r.input);
		g[1] = flat(r.state.hidden);
		g[2] = flat(r.state.cell);
		return g;
	};
	return p;
}

/// Flows keep every sample point inside the image and at least 0.1 px away from integer coordinates.
inline GradProbe bilinear_warp_probe(std::uint64_t seed) {
	Rng rng(seed);
	const int H = 6;
	const int W = 6;
	const Shape3 img{2, H, W};
	std::vector<double> flow(2 * H * W);
	for (int c = 0; c < 2; ++c)
		for (int y = 0; y < H; ++y)
			for (int x = 0; x < W; ++x) {
				const int pos = c == 0 ? x : y;
				const int extent = c == 0 ? W : H;
				const int target = rng.uniform_int(0, extent - 2);
				flow[(c * H + y) * W + x] = target + rng.uniform(0.1, 0.9) - pos;
			}
	GradProbe p;
	p.name = "bilinear_warp";
	p.array_names = {"image", "flow"};
	p.arrays = {uniform(rng, img.channels * H * W, 0, 1), flow};
	p.forward = [=](const Arrays& a) {
		return flat(bilinear_warp(to_map(a[0], img), FlowField<double>(to_map(a[1], {2, H, W}))));
	};
	p.backward = [=](const Arrays& a, const std::vector<double>& dout) {
		auto g = bilinear_warp_backward(to_map(a[0], img), FlowField<double>(to_map(a[1], {2, H, W})), to_map(dout, img));
		return Arrays{flat(g.image), flat(g.flow.map())};
	};
	return p;
}

inline GradProbe avg_downsample2_probe(std::uint64_t seed) {
	Rng rng(seed);
	const Shape3 in{2, 6, 8};
	GradProbe p;
	p.name = "avg_downsample2";
	p.array_names = {"input"};
	p.arrays = {uniform(rng, 96, -1, 1)};
	p.forward = [=](const Arrays& a) { return flat(avg_downsample2(to_map(a[0], in))); };
	p.backward = [=](const Arrays&, const std::vector<double>& dout) {
		return Arrays{flat(avg_downsample2_backward(to_map(dout, {2, 3, 4})))};
	};
	return p;
}

inline GradProbe upsample_flow2_probe(std::uint64_t seed) {
	Rng rng(seed);
	GradProbe p;
	p.name = "upsample_flow2";
	p.array_names = {"flow"};
	p.arrays = {uniform(rng, 2 * 3 * 4, -2, 2)};
	p.forward = [=](const Arrays& a) { return flat(upsample_flow2(FlowField<double>(to_map(a[0], {2, 3, 4}))).map()); };
	p.backward = [=](const Arrays&, const std::vector<double>& dout) {
		return Arrays{flat(upsample_flow2_backward(FlowField<double>(to_map(dout, {2, 6, 8}))).map())};
	};
	return p;
}

/// Two time steps x two scales. Each flow is a separable staircase with steps of at least 0.1 px, so no
/// forward difference sits at the kink of |.|.
inline GradProbe smoothness_loss_probe(std::uint64_t seed) {
	Rng rng(seed);
	const int sizes[2] = {4, 8};
	GradProbe p;
	p.name = "smoothness_loss";
	for (int n = 0; n < 2; ++n)
		for (int l = 0; l < 2; ++l) {
			const int s = sizes[l];
			std::vector<double> f(2 * s * s);
			for (int c = 0; c < 2; ++c) {
				const auto rows = away_from_zero(rng, s, 0.1, 1.0);
				const auto cols = away_from_zero(rng, s, 0.1, 1.0);
				double ry = 0.0;
				for (int y = 0; y < s; ++y) {
					ry += rows[y];
					double cx = 0.0;
					for (int x = 0; x < s; ++x) {
						cx += cols[x];
						f[(c * s + y) * s + x] = ry + cx + rng.uniform(-0.02, 0.02);
					}
				}
			}
			p.array_names.push_back("flow[" + std::to_string(n) + "][" + std::to_string(l) + "]");
			p.arrays.push_back(std::move(f));
		}
	auto pyramids = [=](const Arrays& a) {
		// Only two levels are varied; the remaining two are fixed constant fields contributing zero.
		std::vector<FlowPyramid<double>> flows(2);
		for (int n = 0; n < 2; ++n) {
			for (int l = 0; l < 2; ++l) {
				const int s = sizes[l];
				flows[n].level[l] = FlowField<double>(to_map(a[n * 2 + l], {2, s, s}));
			}
			flows[n].level[2] = FlowField<double>(16, 16);
			flows[n].level[3] = FlowField<double>(32, 32);
		}
		return flows;
	};
	p.forward = [=](const Arrays& a) { return std::vector<double>{smoothness_loss(pyramids(a))}; };
	p.backward = [=](const Arrays& a, const std::vector<double>& dout) {
		std::vector<FlowPyramid<double>> grads;
		smoothness_loss(pyramids(a), &grads, dout[0]);
		Arrays g;
		for (int n = 0; n < 2; ++n)
			for (int l = 0; l < 2; ++l) g.push_back(flat(grads[n].level[l].map()));
		return g;
	};
	return p;
}

/// Parameters of a composite probe, shared by its forward and backward closures.
struct StoreProbe {
	ParamStore<double> store;
	std::vector<std::string> names;
};

inline GradProbe rdb_probe(std::uint64_t seed) {
	Rng rng(seed);
	const RDBSpec spec{3, 2, 2};
	const Shape3 in{3, 8, 8};
	auto state = std::make_shared<StoreProbe>();
	{ ResidualDenseBlock<double> b(state->store, "rdb", spec); }
	init_params(state->store, derive_seed(seed, "rdb"));
	GradProbe p;
	p.name = "rdb_forward";
	p.array_names.push_back("x");
	p.arrays.push_back(uniform(rng, 3 * 64, -1, 1));
	for (auto& [name, param] : state->store) {
		for (auto& v : param.value) v = rng.uniform(-0.5, 0.5);  // biases too, so no layer is exactly linear at zero
		state->names.push_back(name);
		p.array_names.push_back(name);
		p.arrays.push_back({param.value.begin(), param.value.end()});
	}
	auto load = [state](const Arrays& a) {
		for (std::size_t i = 0; i < state->names.size(); ++i) state->store.at(state->names[i]).value = a[i + 1];
	};
	p.forward = [=](const Arrays& a) {
		load(a);
		return flat(rdb_forward(to_map(a[0], in), spec, state->store));
	};
	p.backward = [=](const Arrays& a, const std::vector<double>& dout) {
		load(a);
		state->store.zero_grad();
		ResidualDenseBlock<double> b(state->store, "rdb", spec);
		ResidualDenseBlock<double>::Cache cache;
		b.forward(to_map(a[0], in), cache);
		Arrays g{flat(b.backward(cache, to_map(dout, in)))};
		for (const auto& name : state->names) g.push_back(state->store.at(name).grad);
		return g;
	};
	return p;
}

/// One decoder recurrence step on a 16x16 grid with random (non-zero) flow heads. Output: all four flows
/// followed by the next state.
inline GradProbe rvd_step_probe(std::uint64_t seed) {
	Rng rng(seed);
	CodecConfig cfg;
	cfg.channel_mult = 0.125;  // widths 2/4/8/16
	const int C = cfg.lstm_channels();
	const Shape3 st{C, 2, 2};
	auto state = std::make_shared<StoreProbe>();
	{ VideoDecoder<double> d(cfg, state->store); }
	init_params(state->store, derive_seed(seed, "rvd"));
	for (auto& [name, param] : state->store) {
		if (name.rfind("rvd.flow", 0) == 0 && name.find("flow_enc") == std::string::npos)
			for (auto& v : param.value) v = rng.uniform(-0.3, 0.3);
		state->names.push_back(name);
	}
	GradProbe p;
	p.name = "rvd_step";
	p.array_names = {"hidden", "cell", "prev_flow"};
	p.arrays = {uniform(rng, C * 4, -1, 1), uniform(rng, C * 4, -1, 1), uniform(rng, 2 * 256, -2, 2)};
	for (const auto& name : state->names) {
		p.array_names.push_back(name);
		const auto& v = state->store.at(name).value;
		p.arrays.push_back({v.begin(), v.end()});
	}
	auto load = [state](const Arrays& a) {
		for (std::size_t i = 0; i < state->names.size(); ++i) state->store.at(state->names[i]).value = a[i + 3];
	};
	auto run = [=](const Arrays& a, VideoDecoder<double>::StepCache* cache) {
		load(a);
		VideoDecoder<double> d(cfg, state->store);
		return d.step({to_map(a[0], st), to_map(a[1], st)}, FlowField<double>(to_map(a[2], {2, 16, 16})), cache);
	};
	p.forward = [=](const Arrays& a) {
		const auto r = run(a, nullptr);
		std::vector<double> out;
		for (const auto& f : r.flows.level) append(out, f.map());
		append(out, r.state.hidden);
		append(out, r.state.cell);
		return out;
	};
	p.backward = [=](const Arrays& a, const std::vector<double>& dout) {
		VideoDecoder<double>::StepCache cache;
		const auto r = run(a, &cache);
		state->store.zero_grad();
		FlowPyramid<double> fg;
		std::size_t k = 0;
		auto take = [&](Shape3 s) {
			Map m(s);
			std::copy(dout.begin() + k, dout.begin() + k + m.size(), m.data());
			k += m.size();
			return m;
		};
		for (int l = 0; l < 4; ++l)
			fg.level[l] = FlowField<double>(take({2, r.flows.level[l].height(), r.flows.level[l].width()}));
		MotionState<double> sg;
		sg.hidden = take(st);
		sg.cell = take(st);
		VideoDecoder<double> d(cfg, state->store);
		const auto g = d.step_backward(cache, sg, fg);
		Arrays out{flat(g.state.hidden), flat(g.state.cell), flat(g.prev_flow.map())};
		for (const auto& name : state->names) out.push_back(state->store.at(name).grad);
		return out;
	};
	return p;
}

}  // namespace probes

struct GradCheckRow {
	std::string op;
	int probes = 0;
	double max_rel_error = 0.0;
	std::string worst_array;
	double seconds = 0.0;
	bool passed = false;
};

struct GradCheckSuiteOptions {
	int probes_per_op = 10;
	double tolerance = 1e-3;
	std::uint64_t seed = 1;
	GradCheckOptions check;
	/// Step for composites containing leaky ReLUs. A bias perturbation moves every pre-activation at once,
	/// so at the primitive step some unit almost always crosses the kink.
	double composite_eps = 1e-6;
};

/// Runs every probe family `probes_per_op` times with distinct seeds; a family passes when its worst
/// relative error stays below the tolerance.
inline std::vector<GradCheckRow> gradcheck_suite(const GradCheckSuiteOptions& opt = {}) {
	using Builder = GradProbe (*)(std::uint64_t);
	struct Family {
		const char* op;
		Builder build;
		bool composite;
	};
	const Family families[] = {
		{"conv2d", probes::conv2d_probe, false},
		{"deconv2d", probes::deconv2d_probe, false},
		{"leaky_relu", probes::leaky_relu_probe, false},
		{"batch_norm", probes::batch_norm_probe, false},
		{"convlstm_step", probes::convlstm_probe, false},
		{"bilinear_warp", probes::bilinear_warp_probe, false},
		{"avg_downsample2", probes::avg_downsample2_probe, false},
		{"upsample_flow2", probes::upsample_flow2_probe, false},
		{"smoothness_loss", probes::smoothness_loss_probe, false},
		{"rdb_forward", probes::rdb_probe, true},
		{"rvd_step", probes::rvd_step_probe, true},
	};
	std::vector<GradCheckRow> rows;
	for (const auto& [op, build, composite] : families) {
		GradCheckRow row;
		row.op = op;
		const auto start = std::chrono::steady_clock::now();
		for (int i = 0; i < opt.probes_per_op; ++i) {
			GradProbe probe = build(derive_seed(derive_seed(opt.seed, op), static_cast<std::uint64_t>(i)));
			GradCheckOptions check = opt.check;
			if (composite) check.eps = opt.composite_eps;
			check.seed = derive_seed(check.seed, static_cast<std::uint64_t>(i));
			const auto r = grad_check(probe, check);
			if (r.max_rel_error >= row.max_rel_error) {
				row.max_rel_error = r.max_rel_error;
				row.worst_array = r.worst_array;
			}
			++row.probes;
		}
		row.seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
		row.passed = row.max_rel_error < opt.tolerance;
		rows.push_back(std::move(row));
	}
	return rows;
}

}  // namespace unfold
