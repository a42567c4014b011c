#pragma once

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdint>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <string>
#include <vector>

#include "json.hpp"
#include "unfold/core/error.hpp"
#include "unfold/core/rng.hpp"
#include "unfold/core/video.hpp"
#include "unfold/io/png.hpp"

namespace unfold {

/// Smooth multi-octave value noise around a base color. Octave k has cell size cell / 2^k and amplitude
/// contrast / 2^k.
struct TextureSpec {
	std::uint64_t seed = 0;
	std::array<double, 3> base{0.5, 0.5, 0.5};
	double contrast = 0.3;
	double cell = 12.0;
	int octaves = 2;
};

struct CameraScript {
	double vx = 0.0;  // px/frame; scene content moves by -vx
	double vy = 0.0;
	double spin_deg = 0.0;  // deg/frame about the canvas center
};

struct SpriteScript {
	enum class Shape { rect, ellipse };
	Shape shape = Shape::rect;
	double cx = 0.0;  // center at the central frame, pixels
	double cy = 0.0;
	double half_w = 8.0;
	double half_h = 8.0;
	double vx = 0.0;  // px/frame
	double vy = 0.0;
	double spin_deg = 0.0;  // deg/frame; non-zero makes the motion affine
	TextureSpec texture;
};

/// Seeded description of one sequence. Frame n is rendered at time t = n - N/2, so the central frame is
/// t = 0. Sprites are painted in list order (later sprites are nearer).
struct SceneScript {
	std::uint64_t seed = 0;
	int height = 64;
	int width = 64;
	int n_frames = 9;
	TextureSpec background;
	CameraScript camera;
	std::vector<SpriteScript> sprites;
	double max_translation = 3.0;  // px/frame, camera and sprites
	double max_rotation_deg = 2.0;  // deg/frame

	int half_span() const { return n_frames / 2; }

	/// Fraction of the sprite's bounding box inside the canvas at time t.
	double inside_fraction(const SpriteScript& s, double t) const {
		const double a = s.spin_deg * t * M_PI / 180.0;
		const double ex = std::abs(std::cos(a)) * s.half_w + std::abs(std::sin(a)) * s.half_h;
		const double ey = std::abs(std::sin(a)) * s.half_w + std::abs(std::cos(a)) * s.half_h;
		const double x0 = s.cx + s.vx * t - ex;
		const double x1 = s.cx + s.vx * t + ex;
		const double y0 = s.cy + s.vy * t - ey;
		const double y1 = s.cy + s.vy * t + ey;
		const double ix = std::max(0.0, std::min(x1, width - 1.0) - std::max(x0, 0.0));
		const double iy = std::max(0.0, std::min(y1, height - 1.0) - std::max(y0, 0.0));
		return (ix * iy) / ((x1 - x0) * (y1 - y0));
	}

	void validate() const {
		if (height < 8 || width < 8 || height % 8 != 0 || width % 8 != 0)
			throw ConfigError("scene script: canvas must be at least 8x8 with sides divisible by 8");
		if (n_frames < 3 || n_frames % 2 == 0) throw ConfigError("scene script: n_frames must be odd and >= 3");
		auto check_speed = [&](double vx, double vy, double spin, const std::string& what) {
			if (std::hypot(vx, vy) > max_translation + 1e-12)
				throw ConfigError("scene script: " + what + " translation exceeds " + std::to_string(max_translation) + " px/frame");
			if (std::abs(spin) > max_rotation_deg + 1e-12)
				throw ConfigError("scene script: " + what + " rotation exceeds " + std::to_string(max_rotation_deg) + " deg/frame");
		};
		check_speed(camera.vx, camera.vy, camera.spin_deg, "camera");
		for (std::size_t i = 0; i < sprites.size(); ++i) {
			const auto& s = sprites[i];
			const std::string what = "sprite " + std::to_string(i);
			if (!(s.half_w >= 1.0 && s.half_h >= 1.0)) throw ConfigError("scene script: " + what + " is smaller than 2x2 px");
			check_speed(s.vx, s.vy, s.spin_deg, what);
			for (int n = 0; n < n_frames; ++n)
				if (inside_fraction(s, n - half_span()) < 0.5)
					throw ConfigError("scene script: " + what + " is less than 50% inside the canvas at frame " + std::to_string(n));
		}
		for (const TextureSpec* t : texture_list())
			if (!(t->contrast >= 0.0) || !(t->cell > 0.0) || t->octaves < 1)
				throw ConfigError("scene script: bad texture parameters");
	}

	std::vector<const TextureSpec*> texture_list() const {
		std::vector<const TextureSpec*> t{&background};
		for (const auto& s : sprites) t.push_back(&s.texture);
		return t;
	}
};

/// RGB raster sampled bilinearly with replicate borders; (ox, oy) is the texture position of coordinate 0.
class Texture {
public:
	/// `width` and `height` must be at least 2.
	Texture(const TextureSpec& spec, int width, int height, double ox, double oy)
		: w_(width), h_(height), ox_(ox), oy_(oy), rgb_(static_cast<std::size_t>(width) * height * 3) {
		Rng rng(spec.seed);
		auto smooth = [](double f) { return f * f * (3.0 - 2.0 * f); };
		for (int k = 0; k < spec.octaves; ++k) {
			const double cell = std::max(1.0, spec.cell / std::pow(2.0, k));
			const double amp = spec.contrast / std::pow(2.0, k);
			const int gw = static_cast<int>(std::ceil(width / cell)) + 2;
			const int gh = static_cast<int>(std::ceil(height / cell)) + 2;
			std::vector<double> grid(static_cast<std::size_t>(gw) * gh * 3);
			for (auto& g : grid) g = rng.uniform(-1.0, 1.0);
			for (int y = 0; y < height; ++y)
				for (int x = 0; x < width; ++x) {
					const double gx = x / cell;
					const double gy = y / cell;
					const int ix = static_cast<int>(gx);
					const int iy = static_cast<int>(gy);
					const double fx = smooth(gx - ix);
					const double fy = smooth(gy - iy);
					for (int c = 0; c < 3; ++c) {
						auto at = [&](int yy, int xx) { return grid[(static_cast<std::size_t>(yy) * gw + xx) * 3 + c]; };
						const double v = (1 - fy) * ((1 - fx) * at(iy, ix) + fx * at(iy, ix + 1)) +
										 fy * ((1 - fx) * at(iy + 1, ix) + fx * at(iy + 1, ix + 1));
						rgb_[(static_cast<std::size_t>(y) * width + x) * 3 + c] += amp * v;
					}
				}
		}
		for (int y = 0; y < height; ++y)
			for (int x = 0; x < width; ++x)
				for (int c = 0; c < 3; ++c) {
					auto& v = rgb_[(static_cast<std::size_t>(y) * width + x) * 3 + c];
					v = std::clamp(spec.base[c] + v, 0.0, 1.0);
				}
	}

	std::array<double, 3> sample(double x, double y) const {
		x = std::clamp(x + ox_, 0.0, w_ - 1.0);
		y = std::clamp(y + oy_, 0.0, h_ - 1.0);
		const int x0 = std::min(static_cast<int>(x), w_ - 2);
		const int y0 = std::min(static_cast<int>(y), h_ - 2);
		const int x1 = x0 + 1;
		const int y1 = y0 + 1;
		const double fx = x - x0;
		const double fy = y - y0;
		std::array<double, 3> out{};
		for (int c = 0; c < 3; ++c) {
			auto at = [&](int yy, int xx) { return rgb_[(static_cast<std::size_t>(yy) * w_ + xx) * 3 + c]; };
			out[c] = (1 - fy) * ((1 - fx) * at(y0, x0) + fx * at(y0, x1)) + fy * ((1 - fx) * at(y1, x0) + fx * at(y1, x1));
		}
		return out;
	}

private:
	int w_;
	int h_;
	double ox_;
	double oy_;
	std::vector<double> rgb_;
};

/// Renders the script. Sub-pixel motion comes from bilinear texture sampling; sprite edges are
/// anti-aliased over one pixel.
inline VideoSequence<float> gen_sequence(const SceneScript& script) {
	script.validate();
	const int H = script.height;
	const int W = script.width;
	const double cx = (W - 1) / 2.0;
	const double cy = (H - 1) / 2.0;
	const int half = script.half_span();

	// Background texture must cover every camera sample position.
	double margin = 2.0;
	for (int n = 0; n < script.n_frames; ++n) {
		const double t = n - half;
		const double a = script.camera.spin_deg * t * M_PI / 180.0;
		for (const auto& [px, py] : {std::pair{0.0, 0.0}, {W - 1.0, 0.0}, {0.0, H - 1.0}, {W - 1.0, H - 1.0}}) {
			const double qx = std::cos(a) * (px - cx) - std::sin(a) * (py - cy) + cx + t * script.camera.vx;
			const double qy = std::sin(a) * (px - cx) + std::cos(a) * (py - cy) + cy + t * script.camera.vy;
			margin = std::max({margin, -qx + 2.0, qx - (W - 1) + 2.0, -qy + 2.0, qy - (H - 1) + 2.0});
		}
	}
	const int m = static_cast<int>(std::ceil(margin));
	const Texture background(script.background, W + 2 * m, H + 2 * m, m, m);
	std::vector<Texture> sprite_tex;
	for (const auto& s : script.sprites) {
		const int tw = static_cast<int>(std::ceil(2 * s.half_w)) + 4;
		const int th = static_cast<int>(std::ceil(2 * s.half_h)) + 4;
		sprite_tex.emplace_back(s.texture, tw, th, s.half_w + 2, s.half_h + 2);
	}

	VideoSequence<float> video;
	for (int n = 0; n < script.n_frames; ++n) {
		const double t = n - half;
		FeatureMap<float> frame(3, H, W);
		const double a = script.camera.spin_deg * t * M_PI / 180.0;
		const double ca = std::cos(a);
		const double sa = std::sin(a);
		for (int y = 0; y < H; ++y)
			for (int x = 0; x < W; ++x) {
				const double qx = ca * (x - cx) - sa * (y - cy) + cx + t * script.camera.vx;
				const double qy = sa * (x - cx) + ca * (y - cy) + cy + t * script.camera.vy;
				std::array<double, 3> col = background.sample(qx, qy);
				for (std::size_t k = 0; k < script.sprites.size(); ++k) {
					const auto& s = script.sprites[k];
					const double b = -s.spin_deg * t * M_PI / 180.0;
					const double dx = x - (s.cx + s.vx * t);
					const double dy = y - (s.cy + s.vy * t);
					const double lx = std::cos(b) * dx - std::sin(b) * dy;
					const double ly = std::sin(b) * dx + std::cos(b) * dy;
					double sd;  // approximate signed distance to the outline, pixels
					if (s.shape == SpriteScript::Shape::rect) {
						sd = std::max(std::abs(lx) - s.half_w, std::abs(ly) - s.half_h);
					} else {
						const double r = std::hypot(lx / s.half_w, ly / s.half_h);
						sd = (r - 1.0) * std::min(s.half_w, s.half_h);
					}
					const double alpha = std::clamp(0.5 - sd, 0.0, 1.0);
					if (alpha <= 0.0) continue;
					const auto sc = sprite_tex[k].sample(lx, ly);
					for (int c = 0; c < 3; ++c) col[c] = (1.0 - alpha) * col[c] + alpha * sc[c];
				}
				for (int c = 0; c < 3; ++c) frame(c, y, x) = static_cast<float>(std::clamp(col[c], 0.0, 1.0));
			}
		video.frames.push_back(std::move(frame));
	}
	return video;
}

/// Per-pixel arithmetic mean of all frames (accumulated in double).
template <class T>
FeatureMap<T> synth_blur(const VideoSequence<T>& video) {
	if (video.frames.empty()) throw ShapeError("synth_blur", "frame count", "must be >= 1");
	const auto& first = video.frames.front();
	for (const auto& f : video.frames) first.require_same_shape("synth_blur", f);
	std::vector<double> acc(first.size(), 0.0);
	for (const auto& f : video.frames)
		for (std::size_t i = 0; i < acc.size(); ++i) acc[i] += f.data()[i];
	FeatureMap<T> out(first.shape());
	const double n = static_cast<double>(video.frames.size());
	for (std::size_t i = 0; i < acc.size(); ++i) out.data()[i] = static_cast<T>(acc[i] / n);
	return out;
}

/// Parameters from which scene scripts are sampled.
struct SceneDistribution {
	enum class Kind { translation, mixed };
	Kind kind = Kind::mixed;
	int height = 64;
	int width = 64;
	int n_frames = 9;
	double min_speed = 0.0;  // px/frame
	double max_speed = 3.0;
	double max_rotation_deg = 1.0;
	int min_sprites = 1;
	int max_sprites = 3;
	double contrast = 0.3;
	double cell = 12.0;
	int octaves = 2;

	static SceneDistribution translation() {
		SceneDistribution d;
		d.kind = Kind::translation;
		d.min_sprites = 0;
		d.max_sprites = 0;
		d.max_rotation_deg = 0.0;
		return d;
	}

	void validate() const {
		if (!(min_speed >= 0.0 && max_speed >= min_speed)) throw ConfigError("scene distribution: need 0 <= min_speed <= max_speed");
		if (min_sprites < 0 || max_sprites < min_sprites) throw ConfigError("scene distribution: bad sprite counts");
		if (!(max_rotation_deg >= 0.0)) throw ConfigError("scene distribution: max rotation must be >= 0");
	}

	static Kind parse_kind(const std::string& s) {
		if (s == "translation") return Kind::translation;
		if (s == "mixed") return Kind::mixed;
		throw ConfigError("unknown scene kind '" + s + "' (expected translation or mixed)");
	}
	static std::string kind_name(Kind k) { return k == Kind::translation ? "translation" : "mixed"; }
};

namespace synth_detail {

inline TextureSpec random_texture(Rng& rng, const SceneDistribution& d, double contrast_scale = 1.0) {
	TextureSpec t;
	t.seed = rng.next();
	for (auto& b : t.base) b = rng.uniform(0.25, 0.75);
	t.contrast = d.contrast * contrast_scale;
	t.cell = d.cell;
	t.octaves = d.octaves;
	return t;
}

inline std::pair<double, double> random_velocity(Rng& rng, const SceneDistribution& d) {
	const double speed = rng.uniform(d.min_speed, d.max_speed);
	const double dir = rng.uniform(0.0, 2.0 * M_PI);
	return {speed * std::cos(dir), speed * std::sin(dir)};
}

}  // namespace synth_detail

inline SceneScript sample_script(const SceneDistribution& dist, std::uint64_t seed) {
	dist.validate();
	Rng rng(seed);
	SceneScript s;
	s.seed = seed;
	s.height = dist.height;
	s.width = dist.width;
	s.n_frames = dist.n_frames;
	s.max_translation = std::max(dist.max_speed, 1e-9);
	s.max_rotation_deg = dist.max_rotation_deg;
	s.background = synth_detail::random_texture(rng, dist);
	const auto [vx, vy] = synth_detail::random_velocity(rng, dist);
	s.camera.vx = vx;
	s.camera.vy = vy;
	if (dist.kind == SceneDistribution::Kind::mixed) {
		s.camera.spin_deg = rng.uniform(-dist.max_rotation_deg, dist.max_rotation_deg);
		const int count = rng.uniform_int(dist.min_sprites, dist.max_sprites);
		const int half = dist.n_frames / 2;
		for (int k = 0; k < count; ++k) {
			SpriteScript sp;
			sp.shape = rng.uniform() < 0.5 ? SpriteScript::Shape::rect : SpriteScript::Shape::ellipse;
			sp.texture = synth_detail::random_texture(rng, dist, 1.5);
			const double minside = std::min(dist.width, dist.height);
			// Rejection-sample placement and motion until the sprite stays mostly on screen.
			for (int attempt = 0;; ++attempt) {
				sp.half_w = rng.uniform(0.08, 0.2) * minside;
				sp.half_h = rng.uniform(0.08, 0.2) * minside;
				const auto [svx, svy] = synth_detail::random_velocity(rng, dist);
				sp.vx = svx;
				sp.vy = svy;
				sp.spin_deg = rng.uniform() < 0.5 ? 0.0 : rng.uniform(-dist.max_rotation_deg, dist.max_rotation_deg);
				sp.cx = rng.uniform(0.2, 0.8) * (dist.width - 1);
				sp.cy = rng.uniform(0.2, 0.8) * (dist.height - 1);
				bool ok = true;
				for (int n = 0; n < dist.n_frames && ok; ++n) ok = s.inside_fraction(sp, n - half) >= 0.5;
				if (ok) break;
				if (attempt == 1000) throw ConfigError("sample_script: cannot place sprite inside the canvas");
			}
			s.sprites.push_back(sp);
		}
	}
	s.validate();
	return s;
}

inline nlohmann::ordered_json script_summary(const SceneScript& s) {
	nlohmann::ordered_json j;
	j["camera"] = {{"vx", s.camera.vx}, {"vy", s.camera.vy}, {"spin_deg", s.camera.spin_deg}};
	j["sprites"] = nlohmann::ordered_json::array();
	for (const auto& sp : s.sprites)
		j["sprites"].push_back({{"shape", sp.shape == SpriteScript::Shape::rect ? "rect" : "ellipse"},
								{"vx", sp.vx},
								{"vy", sp.vy},
								{"spin_deg", sp.spin_deg}});
	return j;
}

struct DatasetRecord {
	std::string id;
	std::vector<std::string> frames;  // paths as stored in the manifest (relative to the manifest directory)
	std::string blurred;
	std::uint64_t seed = 0;
	nlohmann::ordered_json script;
};

struct DatasetManifest {
	int version = 1;
	int n_frames = 0;
	int height = 0;
	int width = 0;
	std::vector<DatasetRecord> records;
};

struct Sample {
	std::string id;
	VideoSequence<float> video;
	FeatureMap<float> blurred;
};

/// Renders `count` sequences with per-sequence seeds derive_seed(master_seed, index) and writes
/// `<root>/<id>/frame_%02d.png`, `<root>/<id>/blurred.png` and `<root>/manifest.json`.
inline DatasetManifest build_dataset(int count, const SceneDistribution& dist, const std::string& root,
									 std::uint64_t master_seed) {
	namespace fs = std::filesystem;
	if (count < 1) throw ConfigError("build_dataset: count must be >= 1");
	fs::create_directories(root);
	DatasetManifest m;
	m.n_frames = dist.n_frames;
	m.height = dist.height;
	m.width = dist.width;
	for (int i = 0; i < count; ++i) {
		DatasetRecord r;
		char id[16];
		std::snprintf(id, sizeof id, "seq_%05d", i);
		r.id = id;
		r.seed = derive_seed(master_seed, static_cast<std::uint64_t>(i));
		const SceneScript script = sample_script(dist, r.seed);
		r.script = script_summary(script);
		const auto video = gen_sequence(script);
		fs::create_directories(fs::path(root) / r.id);
		for (int n = 0; n < video.size(); ++n) {
			char name[32];
			std::snprintf(name, sizeof name, "frame_%02d.png", n);
			const std::string rel = r.id + "/" + name;
			io::write_png((fs::path(root) / rel).string(), video.frames[n]);
			r.frames.push_back(rel);
		}
		r.blurred = r.id + "/blurred.png";
		io::write_png((fs::path(root) / r.blurred).string(), synth_blur(video));
		m.records.push_back(std::move(r));
	}

	nlohmann::ordered_json j;
	j["version"] = m.version;
	j["n_frames"] = m.n_frames;
	j["height"] = m.height;
	j["width"] = m.width;
	j["kind"] = SceneDistribution::kind_name(dist.kind);
	j["master_seed"] = master_seed;
	j["records"] = nlohmann::ordered_json::array();
	for (const auto& r : m.records)
		j["records"].push_back(
			{{"id", r.id}, {"frames", r.frames}, {"blurred", r.blurred}, {"seed", r.seed}, {"script", r.script}});
	std::ofstream f(fs::path(root) / "manifest.json");
	f << j.dump(1) << '\n';
	if (!f) throw DatasetError((fs::path(root) / "manifest.json").string(), "write failed");
	return m;
}

/// A loaded manifest; samples are decoded from disk on demand, in manifest order.
class Dataset {
public:
	explicit Dataset(const std::string& manifest_path) : path_(manifest_path) {
		namespace fs = std::filesystem;
		dir_ = fs::path(manifest_path).parent_path();
		std::ifstream f(manifest_path);
		if (!f) throw DatasetError(manifest_path, "cannot open manifest");
		nlohmann::json j;
		try {
			j = nlohmann::json::parse(f);
			manifest_.version = j.at("version").get<int>();
			manifest_.n_frames = j.at("n_frames").get<int>();
			manifest_.height = j.at("height").get<int>();
			manifest_.width = j.at("width").get<int>();
			for (const auto& jr : j.at("records")) {
				DatasetRecord r;
				r.id = jr.at("id").get<std::string>();
				r.frames = jr.at("frames").get<std::vector<std::string>>();
				r.blurred = jr.at("blurred").get<std::string>();
				r.seed = jr.value("seed", std::uint64_t{0});
				if (jr.contains("script")) r.script = jr.at("script");
				manifest_.records.push_back(std::move(r));
			}
		} catch (const nlohmann::json::exception& e) {
			throw DatasetError(manifest_path, std::string("malformed manifest: ") + e.what());
		}
		if (manifest_.version != 1)
			throw DatasetError(manifest_path, "unsupported manifest version " + std::to_string(manifest_.version));
		if (manifest_.records.empty()) throw DatasetError(manifest_path, "manifest has no records");
		for (const auto& r : manifest_.records) {
			if (static_cast<int>(r.frames.size()) != manifest_.n_frames)
				throw DatasetError(manifest_path, "record " + r.id + " has " + std::to_string(r.frames.size()) +
													  " frames, manifest says " + std::to_string(manifest_.n_frames));
			for (const auto& p : r.frames)
				if (!fs::exists(resolve(p))) throw DatasetError(resolve(p), "missing frame file referenced by " + manifest_path);
			if (!fs::exists(resolve(r.blurred)))
				throw DatasetError(resolve(r.blurred), "missing blurred file referenced by " + manifest_path);
		}
	}

	std::size_t size() const noexcept { return manifest_.records.size(); }
	const DatasetManifest& manifest() const noexcept { return manifest_; }
	const std::string& path() const noexcept { return path_; }

	Sample load(std::size_t i) const {
		const auto& r = manifest_.records.at(i);
		Sample s;
		s.id = r.id;
		for (const auto& p : r.frames) s.video.frames.push_back(read_checked(resolve(p)));
		s.blurred = read_checked(resolve(r.blurred));
		return s;
	}

	std::vector<Sample> load_all() const {
		std::vector<Sample> out;
		out.reserve(size());
		for (std::size_t i = 0; i < size(); ++i) out.push_back(load(i));
		return out;
	}

private:
	std::string resolve(const std::string& rel) const { return (dir_ / rel).string(); }

	FeatureMap<float> read_checked(const std::string& p) const {
		auto img = io::read_png<float>(p);
		if (img.height() != manifest_.height || img.width() != manifest_.width)
			throw DatasetError(p, "image is " + std::to_string(img.width()) + "x" + std::to_string(img.height()) +
									  ", manifest says " + std::to_string(manifest_.width) + "x" + std::to_string(manifest_.height));
		return img;
	}

	std::string path_;
	std::filesystem::path dir_;
	DatasetManifest manifest_;
};

inline Dataset load_dataset(const std::string& manifest_path) { return Dataset(manifest_path); }

}  // namespace unfold
