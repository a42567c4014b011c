#pragma once

#include <cmath>
#include <cstdint>
#include <functional>
#include <map>
#include <numeric>
#include <span>
#include <string>
#include <vector>

#include "unfold/core/error.hpp"
#include "unfold/core/rng.hpp"

namespace unfold {

/// How a parameter array is filled by init_params.
enum class Init {
	fan_in,  // uniform with stddev 1/sqrt(fan_in)
	zeros,
	ones,
};

template <class T>
struct Param {
	std::vector<int> shape;
	std::vector<T> value;
	std::vector<T> grad;
	std::vector<T> adam_m;
	std::vector<T> adam_v;
	Init init = Init::fan_in;
	bool trainable = true;

	std::size_t size() const noexcept { return value.size(); }
	std::span<const T> values() const noexcept { return value; }
	std::span<T> grads() noexcept { return grad; }

	/// Product of all dims but the leading one (the receptive field of one output unit).
	std::size_t fan_in() const {
		std::size_t f = 1;
		for (std::size_t i = 1; i < shape.size(); ++i) f *= static_cast<std::size_t>(shape[i]);
		return f;
	}
};

inline std::size_t shape_volume(const std::vector<int>& shape) {
	return std::accumulate(shape.begin(), shape.end(), std::size_t{1},
						   [](std::size_t a, int d) { return a * static_cast<std::size_t>(d); });
}

inline std::string shape_string(const std::vector<int>& shape) {
	std::string s = "[";
	for (std::size_t i = 0; i < shape.size(); ++i) s += (i ? "," : "") + std::to_string(shape[i]);
	return s + "]";
}

/// Running batch-norm moments and similar statistics are stored alongside weights but never optimized.
inline bool is_statistic_name(const std::string& name) {
	auto ends_with = [&](std::string_view suffix) {
		return name.size() >= suffix.size() && name.compare(name.size() - suffix.size(), suffix.size(), suffix) == 0;
	};
	return ends_with(".running_mean") || ends_with(".running_var");
}

/// Ordered name -> array map plus the optimizer step counter. References returned by require()/at()
/// stay valid for the lifetime of the store (node-based storage).
template <class T>
class ParamStore {
public:
	using Map = std::map<std::string, Param<T>>;

	/// Returns the named array, creating it zero-filled if absent. An existing array must match `shape`.
	Param<T>& require(const std::string& name, std::vector<int> shape, Init init = Init::fan_in) {
		auto it = params_.find(name);
		if (it != params_.end()) {
			if (it->second.shape != shape)
				throw ShapeError("ParamStore '" + name + "'", "shape",
								 "expected " + shape_string(shape) + ", found " + shape_string(it->second.shape));
			it->second.init = init;
			it->second.trainable = !is_statistic_name(name);
			return it->second;
		}
		Param<T> p;
		p.shape = std::move(shape);
		const std::size_t n = shape_volume(p.shape);
		p.value.assign(n, T(0));
		p.grad.assign(n, T(0));
		p.adam_m.assign(n, T(0));
		p.adam_v.assign(n, T(0));
		p.init = init;
		p.trainable = !is_statistic_name(name);
		return params_.emplace(name, std::move(p)).first->second;
	}

	/// Inserts a fully specified array (used by checkpoint loading).
	Param<T>& insert(const std::string& name, Param<T> p) {
		if (params_.count(name)) throw ConfigError("ParamStore: duplicate array name '" + name + "'");
		const std::size_t n = p.value.size();
		if (p.grad.size() != n) p.grad.assign(n, T(0));
		if (p.adam_m.size() != n) p.adam_m.assign(n, T(0));
		if (p.adam_v.size() != n) p.adam_v.assign(n, T(0));
		p.trainable = !is_statistic_name(name);
		return params_.emplace(name, std::move(p)).first->second;
	}

	Param<T>& at(const std::string& name) {
		auto it = params_.find(name);
		if (it == params_.end()) throw ConfigError("ParamStore: no array named '" + name + "'");
		return it->second;
	}
	const Param<T>& at(const std::string& name) const {
		auto it = params_.find(name);
		if (it == params_.end()) throw ConfigError("ParamStore: no array named '" + name + "'");
		return it->second;
	}
	bool contains(const std::string& name) const { return params_.count(name) != 0; }

	auto begin() { return params_.begin(); }
	auto end() { return params_.end(); }
	auto begin() const { return params_.begin(); }
	auto end() const { return params_.end(); }
	std::size_t array_count() const noexcept { return params_.size(); }

	std::int64_t iteration() const noexcept { return iteration_; }
	void set_iteration(std::int64_t it) noexcept { iteration_ = it; }

	void zero_grad() {
		for (auto& [name, p] : params_) std::fill(p.grad.begin(), p.grad.end(), T(0));
	}

	/// Number of trainable scalars.
	std::size_t parameter_count() const {
		std::size_t n = 0;
		for (const auto& [name, p] : params_)
			if (p.trainable) n += p.value.size();
		return n;
	}

	/// Copy with every array converted to U (values, grads and moments).
	template <class U>
	ParamStore<U> cast() const {
		ParamStore<U> out;
		for (const auto& [name, p] : params_) {
			Param<U> q;
			q.shape = p.shape;
			auto conv = [](const std::vector<T>& v) { return std::vector<U>(v.begin(), v.end()); };
			q.value = conv(p.value);
			q.grad = conv(p.grad);
			q.adam_m = conv(p.adam_m);
			q.adam_v = conv(p.adam_v);
			q.init = p.init;
			out.insert(name, std::move(q));
		}
		out.set_iteration(iteration_);
		return out;
	}

	friend bool operator==(const ParamStore& a, const ParamStore& b) {
		if (a.iteration_ != b.iteration_ || a.params_.size() != b.params_.size()) return false;
		for (auto ia = a.params_.begin(), ib = b.params_.begin(); ia != a.params_.end(); ++ia, ++ib) {
			if (ia->first != ib->first) return false;
			const auto& pa = ia->second;
			const auto& pb = ib->second;
			if (pa.shape != pb.shape || pa.value != pb.value || pa.adam_m != pb.adam_m || pa.adam_v != pb.adam_v)
				return false;
		}
		return true;
	}

private:
	Map params_;
	std::int64_t iteration_ = 0;
};

/// Fills every array according to its Init kind. Each array draws from its own stream seeded by
/// (seed, name), so the result does not depend on declaration order.
template <class T>
void init_params(ParamStore<T>& store, std::uint64_t seed) {
	for (auto& [name, p] : store) {
		switch (p.init) {
			case Init::zeros:
				std::fill(p.value.begin(), p.value.end(), T(0));
				break;
			case Init::ones:
				std::fill(p.value.begin(), p.value.end(), T(1));
				break;
			case Init::fan_in: {
				Rng rng(derive_seed(seed, name));
				const double bound = std::sqrt(3.0 / static_cast<double>(std::max<std::size_t>(p.fan_in(), 1)));
				for (auto& v : p.value) v = static_cast<T>(rng.uniform(-bound, bound));
				break;
			}
		}
		std::fill(p.grad.begin(), p.grad.end(), T(0));
		std::fill(p.adam_m.begin(), p.adam_m.end(), T(0));
		std::fill(p.adam_v.begin(), p.adam_v.end(), T(0));
	}
	store.set_iteration(0);
}

struct AdamConfig {
	double beta1 = 0.9;
	double beta2 = 0.999;
	double eps = 1e-8;
};

/// Bias-corrected Adam on the gradients accumulated in the store; increments the iteration counter.
template <class T>
void adam_step(ParamStore<T>& store, double lr, const AdamConfig& cfg = {}) {
	const std::int64_t t = store.iteration() + 1;
	const double c1 = 1.0 - std::pow(cfg.beta1, static_cast<double>(t));
	const double c2 = 1.0 - std::pow(cfg.beta2, static_cast<double>(t));
	for (auto& [name, p] : store) {
		if (!p.trainable) continue;
		for (std::size_t i = 0; i < p.value.size(); ++i) {
			const double g = p.grad[i];
			const double m = cfg.beta1 * p.adam_m[i] + (1.0 - cfg.beta1) * g;
			const double v = cfg.beta2 * p.adam_v[i] + (1.0 - cfg.beta2) * g * g;
			p.adam_m[i] = static_cast<T>(m);
			p.adam_v[i] = static_cast<T>(v);
			const double mhat = m / c1;
			const double vhat = v / c2;
			p.value[i] = static_cast<T>(p.value[i] - lr * mhat / (std::sqrt(vhat) + cfg.eps));
		}
	}
	store.set_iteration(t);
}

/// Adam with externally supplied gradients; every trainable array must have a shape-matched entry.
template <class T>
void adam_step(ParamStore<T>& store, const std::map<std::string, std::vector<T>>& grads, double lr,
			   const AdamConfig& cfg = {}) {
	for (auto& [name, p] : store) {
		if (!p.trainable) continue;
		auto it = grads.find(name);
		if (it == grads.end()) throw ShapeError("adam_step", "gradient '" + name + "'", "missing");
		if (it->second.size() != p.value.size())
			throw ShapeError("adam_step", "gradient '" + name + "'", static_cast<long long>(p.value.size()),
							 static_cast<long long>(it->second.size()));
	}
	for (auto& [name, p] : store)
		if (p.trainable) p.grad = grads.at(name);
	adam_step(store, lr, cfg);
}

}  // namespace unfold
