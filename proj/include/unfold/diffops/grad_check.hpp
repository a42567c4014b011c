#pragma once

#include <algorithm>
#include <cmath>
#include <functional>
#include <span>
#include <string>
#include <vector>

#include "unfold/core/rng.hpp"

namespace unfold {

/// A differentiable function of several named double arrays, expressed as
///   forward():  reads the current array values and returns a flat output vector
///   backward(): given d(loss)/d(output), returns d(loss)/d(array) for every array, in order
/// The probe owns the arrays so the checker can perturb them in place.
struct GradProbe {
	std::string name;
	std::vector<std::string> array_names;
	std::vector<std::vector<double>> arrays;
	std::function<std::vector<double>(const std::vector<std::vector<double>>&)> forward;
	std::function<std::vector<std::vector<double>>(const std::vector<std::vector<double>>&, const std::vector<double>&)>
		backward;
};

struct GradCheckResult {
	double max_rel_error = 0.0;
	std::string worst_array;
	std::size_t coordinates_checked = 0;
};

struct GradCheckOptions {
	double eps = 1e-3;
	std::size_t max_coords_per_array = 48;  // random subset for large arrays
	std::uint64_t seed = 7;
	/// Multiplies the analytic gradient; != 1 only when testing the checker itself.
	double corrupt_scale = 1.0;
};

/// Compares the analytic gradient of L = <r, f(arrays)> (r a random projection) with central differences.
/// Per array the error is max_i |analytic_i - numeric_i| / max(max|analytic|, max|numeric|); the worst array wins.
inline GradCheckResult grad_check(GradProbe& probe, const GradCheckOptions& opt = {}) {
	Rng rng(opt.seed);
	const std::vector<double> out = probe.forward(probe.arrays);
	std::vector<double> projection(out.size());
	for (auto& r : projection) r = rng.uniform(-1.0, 1.0);
	auto loss = [&]() {
		const auto y = probe.forward(probe.arrays);
		double s = 0.0;
		for (std::size_t i = 0; i < y.size(); ++i) s += projection[i] * y[i];
		return s;
	};
	const auto analytic = probe.backward(probe.arrays, projection);

	GradCheckResult result;
	for (std::size_t a = 0; a < probe.arrays.size(); ++a) {
		auto& arr = probe.arrays[a];
		std::vector<std::size_t> coords(arr.size());
		for (std::size_t i = 0; i < coords.size(); ++i) coords[i] = i;
		if (coords.size() > opt.max_coords_per_array) {
			for (std::size_t i = 0; i < opt.max_coords_per_array; ++i) {
				const std::size_t j = i + rng.next() % (coords.size() - i);
				std::swap(coords[i], coords[j]);
			}
			coords.resize(opt.max_coords_per_array);
		}
		double max_analytic = 0.0;
		for (double g : analytic[a]) max_analytic = std::max(max_analytic, std::abs(g * opt.corrupt_scale));
		double max_numeric = 0.0;
		double max_diff = 0.0;
		for (std::size_t i : coords) {
			const double saved = arr[i];
			arr[i] = saved + opt.eps;
			const double lp = loss();
			arr[i] = saved - opt.eps;
			const double lm = loss();
			arr[i] = saved;
			const double numeric = (lp - lm) / (2.0 * opt.eps);
			max_numeric = std::max(max_numeric, std::abs(numeric));
			max_diff = std::max(max_diff, std::abs(analytic[a][i] * opt.corrupt_scale - numeric));
		}
		result.coordinates_checked += coords.size();
		const double scale = std::max({max_analytic, max_numeric, 1e-12});
		const double rel = max_diff / scale;
		if (rel >= result.max_rel_error) {
			result.max_rel_error = rel;
			result.worst_array = probe.array_names[a];
		}
	}
	return result;
}

}  // namespace unfold
