#include <gtest/gtest.h>

#include "unfold/unfold.hpp"

using namespace unfold;

TEST(DeblurNet, HasFewerParametersThanThePlainResidualBaseline) {
	const DeblurConfig cfg;
	const auto dm = make_deblur_params<float>(cfg, 1);
	EXPECT_EQ(dm.parameter_count(), 648355u);
	EXPECT_EQ(plain_residual_parameter_count(cfg), 1784931u);
	EXPECT_LT(dm.parameter_count(), plain_residual_parameter_count(cfg));
}

TEST(DeblurNet, ZeroInitializedTailMakesItTheIdentityAtInit) {
	DeblurConfig cfg;
	cfg.base_width = 8;
	cfg.growth = 4;
	auto dm = make_deblur_params<float>(cfg, 2);
	Rng rng(2);
	FeatureMap<float> x(3, 16, 24);
	for (auto& v : x.values()) v = static_cast<float>(rng.uniform());
	EXPECT_EQ(deblur(x, cfg, dm), x);
}

TEST(DeblurNet, RejectsBadInputs) {
	DeblurConfig cfg;
	cfg.base_width = 8;
	cfg.growth = 4;
	auto dm = make_deblur_params<float>(cfg, 3);
	EXPECT_THROW(deblur(FeatureMap<float>(3, 12, 16), cfg, dm), ShapeError);
	EXPECT_THROW(deblur(FeatureMap<float>(1, 16, 16), cfg, dm), ShapeError);
	cfg.growth = 0;
	EXPECT_THROW(cfg.validate(), ConfigError);
}

TEST(ResidualDenseBlock, PreservesShapeAndAddsTheInput) {
	// With a zero projection the block is the identity; with random weights its output differs.
	const RDBSpec spec{6, 3, 4};
	ParamStore<double> store;
	ResidualDenseBlock<double> block(store, "rdb", spec, Init::zeros);
	init_params(store, 4);
	Rng rng(4);
	FeatureMap<double> x(6, 8, 8);
	for (auto& v : x.values()) v = rng.uniform(-1, 1);
	typename ResidualDenseBlock<double>::Cache cache;
	EXPECT_EQ(block.forward(x, cache), x);
	for (double& w : store.at("rdb.proj.w").value) w = rng.uniform(-0.1, 0.1);
	const auto y = block.forward(x, cache);
	EXPECT_EQ(y.shape(), x.shape());
	EXPECT_GT(max_abs_difference(x, y), 0.0);
}

TEST(DeblurNet, BackwardMatchesFiniteDifferences) {
	DeblurConfig cfg;
	cfg.base_width = 4;
	cfg.growth = 2;
	cfg.rdb_layers = 2;
	cfg.rdbs_per_scale = 1;
	auto dm = make_deblur_params<float>(cfg, 5).cast<double>();
	Rng rng(5);
	for (double& w : dm.at("dm.tail2.w").value) w = rng.uniform(-0.2, 0.2);
	for (auto& [name, q] : dm)
		if (name.ends_with(".b"))
			for (double& b : q.value) b = rng.uniform(-0.05, 0.05);
	FeatureMap<double> x(3, 8, 8), target(3, 8, 8);
	for (auto& v : x.values()) v = rng.uniform();
	for (auto& v : target.values()) v = rng.uniform();
	auto loss = [&](bool backward) {
		DeblurNet<double> net(cfg, dm);
		typename DeblurNet<double>::Cache cache;
		const auto y = net.forward(x, backward ? &cache : nullptr);
		std::vector<FeatureMap<double>> g;
		const double l = recon_loss<double>(std::span<const FeatureMap<double>>(&y, 1),
											std::span<const FeatureMap<double>>(&target, 1), backward ? &g : nullptr);
		if (backward) net.backward(cache, g[0]);
		return l;
	};
	dm.zero_grad();
	loss(true);
	double worst = 0.0;
	for (auto& [name, p] : dm) {
		double scale = 0.0;
		for (double g : p.grad) scale = std::max(scale, std::abs(g));
		for (std::size_t k = 0; k < p.value.size(); k += std::max<std::size_t>(1, p.value.size() / 5)) {
			const double keep = p.value[k];
			p.value[k] = keep + 1e-5;
			const double up = loss(false);
			p.value[k] = keep - 1e-5;
			const double down = loss(false);
			p.value[k] = keep;
			const double numeric = (up - down) / 2e-5;
			scale = std::max(scale, std::abs(numeric));
			if (scale > 0) worst = std::max(worst, std::abs(numeric - p.grad[k]) / scale);
		}
	}
	EXPECT_LT(worst, 1e-4);
}
