#pragma once

#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <limits>
#include <string>
#include <vector>

#include "json.hpp"
#include "unfold/io/flo.hpp"
#include "unfold/io/gif.hpp"
#include "unfold/io/png.hpp"
#include "unfold/training.hpp"

namespace unfold {

/// The three inference networks loaded from a checkpoint directory.
struct Models {
	ModelConfig config;
	ParamStore<float> dm;
	ParamStore<float> bie;
	ParamStore<float> rvd;

	static Models load(const CheckpointDir& dir) {
		Models m;
		m.config = dir.read_model();
		m.dm = load_into(dir.dm(), declare_dm(m.config.dm));
		m.bie = load_into(dir.bie(), declare_bie(m.config.codec));
		m.rvd = load_into(dir.inference_rvd(), declare_rvd(m.config.codec));
		return m;
	}
};

struct UnfoldResult {
	FeatureMap<float> sharp;        // DM estimate of the central frame
	VideoSequence<float> video;     // N rendered frames
	std::vector<FlowField<float>> flows;  // full-resolution flow of every frame
};

/// Blurred image -> sharp central estimate -> motion code -> N frames. With `pin_central` the central
/// frame's flow is replaced by zero, so that frame is the DM output verbatim.
inline UnfoldResult unfold_image(const FeatureMap<float>& blurred, Models& m, bool pin_central = true) {
	if (blurred.channels() != 3) throw ShapeError("unfold", "channels", 3, blurred.channels());
	if (blurred.height() % 8 != 0 || blurred.width() % 8 != 0)
		throw ShapeError("unfold", "size", "height and width must be divisible by 8, got " + std::to_string(blurred.height()) +
											   "x" + std::to_string(blurred.width()));
	UnfoldResult r;
	r.sharp = deblur(blurred, m.config.dm, m.dm);
	const auto state = encode_blurred(blurred, r.sharp, m.config.codec, m.bie);
	VideoDecoder<float> dec(m.config.codec, m.rvd);
	const auto decoded = dec.decode(state, r.sharp, m.config.codec.n_frames);
	r.video = decoded.video();
	for (const auto& f : decoded.flows) r.flows.push_back(f.level[3]);
	if (pin_central) {
		const int c = r.video.central_index();
		r.video.frames[c] = r.sharp;
		r.flows[c] = FlowField<float>(r.sharp.height(), r.sharp.width());
	}
	return r;
}

struct ExportOptions {
	bool png = true;
	bool gif = true;
	bool flows = false;  // .flo files plus color-wheel PNGs
	int gif_delay_ms = 111;
};

/// Writes frame_%02d.png, sharp.png, unfolded.gif and flow_%02d.{flo,png} under `dir`; returns the paths written.
inline std::vector<std::string> export_unfold(const UnfoldResult& r, const std::string& dir, const ExportOptions& opt) {
	namespace fs = std::filesystem;
	fs::create_directories(dir);
	std::vector<std::string> written;
	auto name = [&](const char* fmt, int n) {
		char buf[64];
		std::snprintf(buf, sizeof buf, fmt, n);
		return (fs::path(dir) / buf).string();
	};
	if (opt.png) {
		for (int n = 0; n < r.video.size(); ++n) {
			written.push_back(name("frame_%02d.png", n));
			io::write_png(written.back(), r.video.frames[n]);
		}
		written.push_back((fs::path(dir) / "sharp.png").string());
		io::write_png(written.back(), r.sharp);
	}
	if (opt.gif) {
		written.push_back((fs::path(dir) / "unfolded.gif").string());
		io::write_gif(written.back(), r.video.frames, opt.gif_delay_ms);
	}
	if (opt.flows) {
		double radius = 0.0;
		for (const auto& f : r.flows)
			for (int y = 0; y < f.height(); ++y)
				for (int x = 0; x < f.width(); ++x) radius = std::max(radius, std::hypot(double(f.u(y, x)), double(f.v(y, x))));
		for (int n = 0; n < static_cast<int>(r.flows.size()); ++n) {
			written.push_back(name("flow_%02d.flo", n));
			io::write_flo(written.back(), r.flows[n]);
			written.push_back(name("flow_%02d.png", n));
			io::write_png(written.back(), io::flow_to_color(r.flows[n], radius));
		}
	}
	return written;
}

/// JSON number, or the string "inf" for an infinite PSNR.
inline nlohmann::ordered_json metric_json(double v) {
	if (std::isinf(v)) return v > 0 ? "inf" : "-inf";
	return v;
}

/// Metrics of one evaluated sequence.
struct SequenceMetrics {
	std::string id;
	double psnr_dm = 0.0;
	double ssim_dm = 0.0;
	double psnr_blurred = 0.0;
	double ssim_blurred = 0.0;
	double unfold_error = 0.0;    // ambiguity-invariant error of the unfolded video
	double baseline_error = 0.0;  // same, for the DM output repeated N times
	double unfold_error_gt_central = 0.0;    // unfolded from the true central frame
	double baseline_error_gt_central = 0.0;  // true central frame repeated N times

	static constexpr const char* kNames[] = {"psnr_dm", "ssim_dm", "psnr_blurred", "ssim_blurred", "unfold_error",
											 "baseline_error", "unfold_error_gt_central", "baseline_error_gt_central"};
	std::array<double, 8> values() const {
		return {psnr_dm, ssim_dm, psnr_blurred, ssim_blurred, unfold_error, baseline_error, unfold_error_gt_central,
				baseline_error_gt_central};
	}
};

inline VideoSequence<float> repeat_frame(const FeatureMap<float>& f, int n) {
	return VideoSequence<float>{std::vector<FeatureMap<float>>(static_cast<std::size_t>(n), f)};
}

/// Scores one sequence given every candidate output.
inline SequenceMetrics score_sequence(const std::string& id, const VideoSequence<float>& gt, const FeatureMap<float>& blurred,
									  const FeatureMap<float>& sharp, const VideoSequence<float>& unfolded,
									  const VideoSequence<float>& unfolded_gt_central) {
	SequenceMetrics s;
	s.id = id;
	s.psnr_dm = psnr(sharp, gt.central());
	s.ssim_dm = ssim(sharp, gt.central());
	s.psnr_blurred = psnr(blurred, gt.central());
	s.ssim_blurred = ssim(blurred, gt.central());
	s.unfold_error = ambiguity_invariant_error(unfolded, gt);
	s.baseline_error = ambiguity_invariant_error(repeat_frame(sharp, gt.size()), gt);
	s.unfold_error_gt_central = ambiguity_invariant_error(unfolded_gt_central, gt);
	s.baseline_error_gt_central = ambiguity_invariant_error(repeat_frame(gt.central(), gt.size()), gt);
	return s;
}

struct EvalReport {
	std::vector<SequenceMetrics> sequences;

	/// Mean over sequences; an infinite PSNR makes the mean infinite.
	double mean(const std::string& metric) const {
		for (std::size_t k = 0; k < std::size(SequenceMetrics::kNames); ++k)
			if (metric == SequenceMetrics::kNames[k]) {
				double sum = 0.0;
				for (const auto& s : sequences) sum += s.values()[k];
				return sequences.empty() ? std::numeric_limits<double>::quiet_NaN() : sum / static_cast<double>(sequences.size());
			}
		throw ConfigError("unknown metric '" + metric + "'");
	}

	/// JSON lines: one "sequence" row per sequence, one "aggregate" row per metric, and one "baseline"
	/// row comparing the unfolded video with the central-frame-repeated video.
	std::vector<nlohmann::ordered_json> rows() const {
		std::vector<nlohmann::ordered_json> out;
		for (const auto& s : sequences) {
			nlohmann::ordered_json j{{"row", "sequence"}, {"id", s.id}};
			const auto v = s.values();
			for (std::size_t k = 0; k < v.size(); ++k) j[SequenceMetrics::kNames[k]] = metric_json(v[k]);
			out.push_back(std::move(j));
		}
		for (const char* name : SequenceMetrics::kNames)
			out.push_back({{"row", "aggregate"}, {"metric", name}, {"mean", metric_json(mean(name))}, {"count", sequences.size()}});
		const double u = mean("unfold_error");
		const double b = mean("baseline_error");
		out.push_back({{"row", "baseline"},
					   {"method", "repeated_central"},
					   {"metric", "ambiguity_invariant_error"},
					   {"unfolded", u},
					   {"baseline", b},
					   {"relative_reduction", b > 0 ? (b - u) / b : 0.0}});
		return out;
	}

	void write(const std::string& path) const {
		std::ofstream f(path);
		if (!f) throw DatasetError(path, "cannot open for writing");
		for (const auto& r : rows()) f << r.dump() << '\n';
		if (!f) throw DatasetError(path, "write failed");
	}
};

/// Evaluates every sequence of `ds` in manifest order.
inline EvalReport evaluate(const Dataset& ds, Models& m, bool pin_central = true) {
	if (ds.manifest().n_frames != m.config.codec.n_frames)
		throw ConfigError("dataset has " + std::to_string(ds.manifest().n_frames) + " frames per sequence, model renders " +
						  std::to_string(m.config.codec.n_frames));
	EvalReport report;
	VideoDecoder<float> dec(m.config.codec, m.rvd);
	for (std::size_t i = 0; i < ds.size(); ++i) {
		const Sample s = ds.load(i);
		const UnfoldResult r = unfold_image(s.blurred, m, pin_central);
		const auto state = encode_blurred(s.blurred, s.video.central(), m.config.codec, m.bie);
		const auto gt_central = dec.decode(state, s.video.central(), m.config.codec.n_frames).video();
		report.sequences.push_back(score_sequence(s.id, s.video, s.blurred, r.sharp, r.video, gt_central));
	}
	return report;
}

/// Writes `run.json` (the resolved configuration of a run) into `dir`.
inline void write_run_record(const std::string& dir, const nlohmann::ordered_json& config) {
	std::filesystem::create_directories(dir);
	const std::string path = (std::filesystem::path(dir) / "run.json").string();
	std::ofstream f(path);
	f << config.dump(1) << '\n';
	if (!f) throw DatasetError(path, "write failed");
}

}  // namespace unfold
