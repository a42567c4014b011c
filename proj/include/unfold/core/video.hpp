#pragma once

#include <algorithm>
#include <array>
#include <vector>

#include "unfold/core/error.hpp"
#include "unfold/core/feature_map.hpp"
#include "unfold/diffops/resample.hpp"

namespace unfold {

/// N sharp frames (3 x H x W, values in [0,1]); the central frame is index N/2.
template <class T>
struct VideoSequence {
	std::vector<FeatureMap<T>> frames;

	int size() const noexcept { return static_cast<int>(frames.size()); }
	int central_index() const noexcept { return size() / 2; }
	const FeatureMap<T>& central() const { return frames.at(central_index()); }

	/// N odd and >= 3, shared shape, H and W divisible by 8.
	void validate(const std::string& op) const {
		if (frames.size() < 3 || frames.size() % 2 == 0)
			throw ShapeError(op, "frame count", "must be odd and >= 3, found " + std::to_string(frames.size()));
		for (const auto& f : frames) frames.front().require_same_shape(op, f);
		if (frames.front().height() % 8 != 0) throw ShapeError(op, "height", "must be divisible by 8");
		if (frames.front().width() % 8 != 0) throw ShapeError(op, "width", "must be divisible by 8");
	}

	VideoSequence reversed() const {
		VideoSequence r{frames};
		std::reverse(r.frames.begin(), r.frames.end());
		return r;
	}

	template <class U>
	VideoSequence<U> cast() const {
		VideoSequence<U> out;
		for (const auto& f : frames) out.frames.push_back(f.template cast<U>());
		return out;
	}

	friend bool operator==(const VideoSequence&, const VideoSequence&) = default;
};

/// Flows f1..f4 at 1/8, 1/4, 1/2 and full resolution; level[0] is the coarsest.
template <class T>
struct FlowPyramid {
	std::array<FlowField<T>, 4> level;
};

/// Image pyramid matching FlowPyramid's resolutions: level[3] is the input, each coarser level is a
/// 2x2 mean pool of the next finer one.
template <class T>
std::array<FeatureMap<T>, 4> image_pyramid(const FeatureMap<T>& image) {
	std::array<FeatureMap<T>, 4> p;
	p[3] = image;
	for (int l = 2; l >= 0; --l) p[l] = avg_downsample2(p[l + 1]);
	return p;
}

}  // namespace unfold
