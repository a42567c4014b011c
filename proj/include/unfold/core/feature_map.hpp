#pragma once

#include <algorithm>
#include <cassert>
#include <cmath>
#include <cstddef>
#include <span>
#include <string>
#include <vector>

#include "unfold/core/error.hpp"

namespace unfold {

struct Shape3 {
	int channels = 0;
	int height = 0;
	int width = 0;

	friend bool operator==(const Shape3&, const Shape3&) = default;
};

/// Dense channels x height x width grid, channel-major. Copies are deep.
template <class T>
class FeatureMap {
public:
	using value_type = T;

	FeatureMap() = default;

	FeatureMap(int channels, int height, int width, T fill = T(0))
		: c_(channels), h_(height), w_(width) {
		if (channels < 1) throw ShapeError("FeatureMap", "channels", "must be >= 1, found " + std::to_string(channels));
		if (height < 1) throw ShapeError("FeatureMap", "height", "must be >= 1, found " + std::to_string(height));
		if (width < 1) throw ShapeError("FeatureMap", "width", "must be >= 1, found " + std::to_string(width));
		data_.assign(static_cast<std::size_t>(channels) * height * width, fill);
	}

	explicit FeatureMap(Shape3 s, T fill = T(0)) : FeatureMap(s.channels, s.height, s.width, fill) {}

	int channels() const noexcept { return c_; }
	int height() const noexcept { return h_; }
	int width() const noexcept { return w_; }
	int plane() const noexcept { return h_ * w_; }
	std::size_t size() const noexcept { return data_.size(); }
	bool empty() const noexcept { return data_.empty(); }
	Shape3 shape() const noexcept { return {c_, h_, w_}; }

	T& operator()(int c, int y, int x) noexcept {
		assert(c >= 0 && c < c_ && y >= 0 && y < h_ && x >= 0 && x < w_);
		return data_[(static_cast<std::size_t>(c) * h_ + y) * w_ + x];
	}
	const T& operator()(int c, int y, int x) const noexcept {
		assert(c >= 0 && c < c_ && y >= 0 && y < h_ && x >= 0 && x < w_);
		return data_[(static_cast<std::size_t>(c) * h_ + y) * w_ + x];
	}

	T* data() noexcept { return data_.data(); }
	const T* data() const noexcept { return data_.data(); }
	T* channel(int c) noexcept { return data_.data() + static_cast<std::size_t>(c) * plane(); }
	const T* channel(int c) const noexcept { return data_.data() + static_cast<std::size_t>(c) * plane(); }
	std::span<T> values() noexcept { return data_; }
	std::span<const T> values() const noexcept { return data_; }

	void fill(T v) { std::fill(data_.begin(), data_.end(), v); }

	FeatureMap& operator+=(const FeatureMap& o) {
		require_same_shape("FeatureMap::operator+=", o);
		for (std::size_t i = 0; i < data_.size(); ++i) data_[i] += o.data_[i];
		return *this;
	}

	template <class U>
	FeatureMap<U> cast() const {
		FeatureMap<U> out(c_, h_, w_);
		std::transform(data_.begin(), data_.end(), out.data(), [](T v) { return static_cast<U>(v); });
		return out;
	}

	void require_same_shape(const std::string& op, const FeatureMap& o) const {
		if (o.c_ != c_) throw ShapeError(op, "channels", c_, o.c_);
		if (o.h_ != h_) throw ShapeError(op, "height", h_, o.h_);
		if (o.w_ != w_) throw ShapeError(op, "width", w_, o.w_);
	}

	bool all_finite() const {
		return std::all_of(data_.begin(), data_.end(), [](T v) { return std::isfinite(v); });
	}

	friend bool operator==(const FeatureMap&, const FeatureMap&) = default;

private:
	int c_ = 0;
	int h_ = 0;
	int w_ = 0;
	std::vector<T> data_;
};

/// Per-pixel displacement (u along width, v along height) in pixels of its own grid.
template <class T>
class FlowField {
public:
	FlowField() = default;
	FlowField(int height, int width) : uv_(2, height, width) {}
	explicit FlowField(FeatureMap<T> uv) : uv_(std::move(uv)) {
		if (uv_.channels() != 2) throw ShapeError("FlowField", "channels", 2, uv_.channels());
	}

	int height() const noexcept { return uv_.height(); }
	int width() const noexcept { return uv_.width(); }
	bool empty() const noexcept { return uv_.empty(); }

	T& u(int y, int x) noexcept { return uv_(0, y, x); }
	T& v(int y, int x) noexcept { return uv_(1, y, x); }
	const T& u(int y, int x) const noexcept { return uv_(0, y, x); }
	const T& v(int y, int x) const noexcept { return uv_(1, y, x); }

	const FeatureMap<T>& map() const noexcept { return uv_; }
	FeatureMap<T>& map() noexcept { return uv_; }

	template <class U>
	FlowField<U> cast() const { return FlowField<U>(uv_.template cast<U>()); }

	friend bool operator==(const FlowField&, const FlowField&) = default;

private:
	FeatureMap<T> uv_;
};

/// Stacks maps along the channel axis. All parts must share height and width.
template <class T>
FeatureMap<T> concat_channels(std::initializer_list<const FeatureMap<T>*> parts) {
	int channels = 0;
	const FeatureMap<T>* first = *parts.begin();
	for (const auto* p : parts) {
		if (p->height() != first->height()) throw ShapeError("concat_channels", "height", first->height(), p->height());
		if (p->width() != first->width()) throw ShapeError("concat_channels", "width", first->width(), p->width());
		channels += p->channels();
	}
	FeatureMap<T> out(channels, first->height(), first->width());
	T* dst = out.data();
	for (const auto* p : parts) dst = std::copy(p->data(), p->data() + p->size(), dst);
	return out;
}

/// Inverse of concat_channels: slices `channels[i]` consecutive channels into each output.
template <class T>
std::vector<FeatureMap<T>> split_channels(const FeatureMap<T>& x, std::initializer_list<int> channels) {
	std::vector<FeatureMap<T>> out;
	const T* src = x.data();
	int total = 0;
	for (int c : channels) total += c;
	if (total != x.channels()) throw ShapeError("split_channels", "channels", total, x.channels());
	for (int c : channels) {
		FeatureMap<T> part(c, x.height(), x.width());
		std::copy(src, src + part.size(), part.data());
		src += part.size();
		out.push_back(std::move(part));
	}
	return out;
}

template <class T>
FeatureMap<T> zeros_like(const FeatureMap<T>& x) {
	return FeatureMap<T>(x.shape());
}

/// In-place a += b, where an empty `a` is treated as zeros.
template <class T>
void accumulate(FeatureMap<T>& a, const FeatureMap<T>& b) {
	if (b.empty()) return;
	if (a.empty()) {
		a = b;
		return;
	}
	a += b;
}

template <class T>
double max_abs_difference(const FeatureMap<T>& a, const FeatureMap<T>& b) {
	a.require_same_shape("max_abs_difference", b);
	double m = 0.0;
	for (std::size_t i = 0; i < a.size(); ++i)
		m = std::max(m, std::abs(static_cast<double>(a.data()[i]) - static_cast<double>(b.data()[i])));
	return m;
}

}  // namespace unfold
