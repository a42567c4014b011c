#include <gtest/gtest.h>

#include <filesystem>
#include <fstream>
#include <iterator>
#include <set>

#include "unfold/unfold.hpp"

using namespace unfold;
namespace fs = std::filesystem;

namespace {

fs::path scratch(const std::string& name) {
	const fs::path p = fs::temp_directory_path() / ("unfold_test_train_" + name);
	fs::remove_all(p);
	fs::create_directories(p);
	return p;
}

std::vector<char> file_bytes(const fs::path& p) {
	std::ifstream f(p, std::ios::binary);
	return {std::istreambuf_iterator<char>(f), std::istreambuf_iterator<char>()};
}

SceneDistribution small_dist() {
	auto d = SceneDistribution::translation();
	d.height = 32;
	d.width = 32;
	d.min_speed = 1.0;
	d.max_speed = 2.0;
	return d;
}

std::vector<Sample> small_samples(int count, std::uint64_t seed) {
	std::vector<Sample> out;
	for (int i = 0; i < count; ++i) {
		Sample s;
		s.id = std::to_string(i);
		s.video = gen_sequence(sample_script(small_dist(), derive_seed(seed, static_cast<std::uint64_t>(i))));
		s.blurred = synth_blur(s.video);
		out.push_back(std::move(s));
	}
	return out;
}

ModelConfig small_model() {
	ModelConfig m;
	m.codec.channel_mult = 0.125;
	m.dm.base_width = 8;
	m.dm.growth = 4;
	m.dm.rdb_layers = 2;
	m.dm.rdbs_per_scale = 1;
	return m;
}

TrainConfig small_train(Stage stage, int iterations, const std::string& manifest = "") {
	TrainConfig t;
	t.stage = stage;
	t.iterations = iterations;
	t.learning_rate = 1e-3;
	t.batch_size = 4;
	t.seed = 3;
	t.manifest = manifest;
	return t;
}

}  // namespace

TEST(Adam, FirstStepHandValue) {
	ParamStore<double> s;
	s.require("p", {1}, Init::zeros);
	s.at("p").grad[0] = 1.0;
	adam_step(s, 1e-3);
	// m_hat = v_hat = 1, so p = -lr / (1 + eps)
	EXPECT_DOUBLE_EQ(s.at("p").value[0], -1e-3 / (1.0 + 1e-8));
	EXPECT_NEAR(s.at("p").value[0], -9.99999995e-4, 1e-11);
	EXPECT_EQ(s.iteration(), 1);
}

TEST(Adam, ZeroGradientFromZeroMomentsLeavesParameters) {
	ParamStore<double> s;
	s.require("p", {2});
	init_params(s, 1);
	const auto before = s.at("p").value;
	adam_step(s, 1e-2);
	EXPECT_EQ(s.at("p").value, before);
	EXPECT_EQ(s.at("p").adam_m, (std::vector<double>{0.0, 0.0}));
}

TEST(Adam, ZeroGradientDecaysMoments) {
	ParamStore<double> s;
	s.require("p", {2});
	init_params(s, 1);
	s.at("p").adam_m = {0.5, -0.5};
	s.at("p").adam_v = {0.25, 0.5};
	s.set_iteration(3);
	adam_step(s, 1e-2);
	EXPECT_DOUBLE_EQ(s.at("p").adam_m[0], 0.45);
	EXPECT_DOUBLE_EQ(s.at("p").adam_v[1], 0.5 * 0.999);
}

TEST(Adam, IdenticalStateAndGradientsAreBitIdentical) {
	auto a = make_codec_params<float>(small_model().codec, 1).rvd;
	auto b = a;
	Rng rng(1);
	for (auto& [name, p] : a)
		for (auto& g : p.grad) g = static_cast<float>(rng.uniform(-1, 1));
	for (auto& [name, p] : b) p.grad = a.at(name).grad;
	adam_step(a, 1e-3);
	adam_step(b, 1e-3);
	EXPECT_TRUE(a == b);
}

TEST(Adam, ExternalGradientsMustMatchShapes) {
	ParamStore<float> s;
	s.require("p", {3});
	std::map<std::string, std::vector<float>> g{{"p", {1.0f, 2.0f}}};
	EXPECT_THROW(adam_step(s, g, 1e-3), ShapeError);
}

TEST(InitParams, SameSeedIsBitIdenticalAndFlowHeadsAreZero) {
	const auto cfg = small_model().codec;
	EXPECT_TRUE(make_codec_params<float>(cfg, 5).rvd == make_codec_params<float>(cfg, 5).rvd);
	EXPECT_FALSE(make_codec_params<float>(cfg, 5).rve == make_codec_params<float>(cfg, 6).rve);
	const auto p = make_codec_params<float>(cfg, 5);
	for (int l = 1; l <= 4; ++l) {
		const std::string base = "rvd.flow" + std::to_string(l);
		for (float v : p.rvd.at(base + ".w").value) EXPECT_EQ(v, 0.0f);
		for (float v : p.rvd.at(base + ".b").value) EXPECT_EQ(v, 0.0f);
	}
	const auto dm = make_deblur_params<float>(small_model().dm, 5);
	for (float v : dm.at("dm.tail2.w").value) EXPECT_EQ(v, 0.0f);
}

TEST(InitParams, FanInScaledStandardDeviation) {
	ParamStore<double> s;
	s.require("k", {64, 64, 3, 3});
	init_params(s, 11);
	double sum = 0.0, sum2 = 0.0;
	for (double v : s.at("k").value) {
		sum += v;
		sum2 += v * v;
	}
	const double n = static_cast<double>(s.at("k").size());
	const double sd = std::sqrt(sum2 / n - (sum / n) * (sum / n));
	EXPECT_NEAR(sd, 1.0 / std::sqrt(576.0), 0.1 / std::sqrt(576.0));
}

TEST(Autoencoder, IterationZeroLossEqualsRepeatedCentralBaseline) {
	const auto cfg = small_model().codec;
	auto p = make_codec_params<float>(cfg, 7);
	const LossWeights w;
	for (const auto& s : small_samples(5, 7)) {
		const auto stats = autoencoder_loss(s.video, cfg, p, w);
		EXPECT_EQ(stats.loss, repeated_central_loss(s.video, w));
		EXPECT_GT(stats.loss, 0.0);
	}
}

TEST(BatchIndices, EveryEpochIsAPermutation) {
	const std::size_t n = 10;
	std::vector<std::size_t> seen;
	for (std::int64_t it = 0; it < 5; ++it) {
		const auto idx = batch_indices(3, it, 4, n);
		seen.insert(seen.end(), idx.begin(), idx.end());
	}
	ASSERT_EQ(seen.size(), 20u);
	for (int e = 0; e < 2; ++e) {
		std::set<std::size_t> epoch(seen.begin() + e * 10, seen.begin() + (e + 1) * 10);
		EXPECT_EQ(epoch.size(), n);
	}
	EXPECT_NE(std::vector<std::size_t>(seen.begin(), seen.begin() + 10), std::vector<std::size_t>(seen.begin() + 10, seen.end()));
	EXPECT_EQ(batch_indices(3, 2, 4, n), batch_indices(3, 2, 4, n));
}

TEST(TrainStages, TwoHundredIterationsReduceTheSmoothedLoss) {
	const auto model = small_model();
	const auto data = small_samples(20, 21);
	std::vector<VideoSequence<float>> videos;
	for (const auto& s : data) videos.push_back(s.video);

	auto run = [](auto&& train) {
		std::vector<TraceRow> rows;
		TrainHooks h;
		h.on_step = [&](const TraceRow& r) { rows.push_back(r); };
		train(h);
		return rows;
	};

	auto codec = make_codec_params<float>(model.codec, 21);
	const auto ae = run([&](TrainHooks& h) { train_autoencoder(small_train(Stage::autoencoder, 200), model.codec, videos, codec, h); });
	ASSERT_EQ(ae.size(), 200u);
	const auto [ae0, ae1] = smoothed_ends(ae, 20);
	EXPECT_LT(ae1, ae0) << "autoencoder";

	auto bie = make_bie_params<float>(model.codec, 21);
	auto rvd = codec.rvd;
	rvd.set_iteration(0);
	const auto b = run([&](TrainHooks& h) { train_bie(small_train(Stage::bie, 200), model.codec, data, bie, rvd, h); });
	const auto [b0, b1] = smoothed_ends(b, 20);
	EXPECT_LT(b1, b0) << "bie";

	auto dm = make_deblur_params<float>(model.dm, 21);
	const auto d = run([&](TrainHooks& h) { train_deblur(small_train(Stage::deblur, 200), model.dm, data, dm, h); });
	const auto [d0, d1] = smoothed_ends(d, 20);
	EXPECT_LT(d1, d0) << "deblur";
}

TEST(TrainStages, BieReceivesNoGradientWithoutADecoderPath) {
	// With zero flow heads the decoder output ignores the motion code, so the BIE gradient must vanish:
	// there is no direct supervision of the state.
	const auto model = small_model();
	const auto data = small_samples(2, 31);
	auto bie = make_bie_params<float>(model.codec, 31);
	auto rvd = make_codec_params<float>(model.codec, 31).rvd;
	bie.zero_grad();
	rvd.zero_grad();
	bie_loss({&data[0].video, &data[1].video}, {&data[0].blurred, &data[1].blurred}, model.codec, bie, rvd, LossWeights{},
			 Mode::train, true);
	for (const auto& [name, p] : bie)
		for (float g : p.grad) ASSERT_EQ(g, 0.0f) << name;
	double rvd_norm = 0.0;
	for (const auto& [name, p] : rvd)
		for (float g : p.grad) rvd_norm += std::abs(g);
	EXPECT_GT(rvd_norm, 0.0);
}

TEST(TrainStages, ZeroFinetuneMultiplierFreezesTheDecoder) {
	const auto model = small_model();
	const auto data = small_samples(4, 32);
	auto bie = make_bie_params<float>(model.codec, 32);
	auto rvd = make_codec_params<float>(model.codec, 32).rvd;
	const auto frozen = rvd;
	auto cfg = small_train(Stage::bie, 3);
	cfg.finetune_multiplier = 0.0;
	train_bie(cfg, model.codec, data, bie, rvd);
	EXPECT_TRUE(rvd == frozen);
	EXPECT_EQ(bie.iteration(), 3);
}

TEST(TrainStages, NonFiniteLossAborts) {
	const auto model = small_model();
	auto data = small_samples(2, 33);
	data[1].video.frames[0](0, 0, 0) = std::numeric_limits<float>::quiet_NaN();
	std::vector<VideoSequence<float>> videos{data[0].video, data[1].video};
	auto p = make_codec_params<float>(model.codec, 33);
	auto cfg = small_train(Stage::autoencoder, 5);
	cfg.batch_size = 2;
	EXPECT_THROW(train_autoencoder(cfg, model.codec, videos, p), NumericalError);
}

TEST(TrainConfig, Validation) {
	auto c = small_train(Stage::bie, 10);
	c.batch_size = 1;
	EXPECT_THROW(c.validate(), ConfigError);
	c = small_train(Stage::autoencoder, 10);
	c.learning_rate = 0.0;
	EXPECT_THROW(c.validate(), ConfigError);
	c = small_train(Stage::autoencoder, 10);
	c.decay_every = 4;
	EXPECT_DOUBLE_EQ(c.rate_at(9), 1e-3 * 0.25);
}

class FileTraining : public ::testing::Test {
protected:
	static void SetUpTestSuite() {
		root_ = scratch("files");
		build_dataset(8, small_dist(), (root_ / "data").string(), 41);
	}
	static std::string manifest() { return (root_ / "data" / "manifest.json").string(); }
	static inline fs::path root_;
};

TEST_F(FileTraining, StageBieRequiresTheStageOneDecoder) {
	const CheckpointDir dir{root_ / "no_rvd"};
	EXPECT_THROW(train_stage(small_train(Stage::bie, 2, manifest()), small_model(), dir, false), CheckpointError);
}

TEST_F(FileTraining, ResumeReproducesTheUninterruptedRun) {
	for (Stage stage : {Stage::autoencoder, Stage::bie, Stage::deblur}) {
		const CheckpointDir full{root_ / ("full_" + stage_name(stage))};
		const CheckpointDir split{root_ / ("split_" + stage_name(stage))};
		if (stage == Stage::bie) {
			for (const auto* d : {&full, &split})
				train_stage(small_train(Stage::autoencoder, 2, manifest()), small_model(), *d, false);
		}
		const auto whole = train_stage(small_train(stage, 6, manifest()), small_model(), full, false);
		train_stage(small_train(stage, 3, manifest()), small_model(), split, false);
		const auto rest = train_stage(small_train(stage, 6, manifest()), small_model(), split, true);
		ASSERT_EQ(rest.trace.size(), 3u) << stage_name(stage);
		for (int i = 0; i < 3; ++i) {
			EXPECT_EQ(rest.trace[i].iter, whole.trace[i + 3].iter);
			EXPECT_EQ(rest.trace[i].stats.loss, whole.trace[i + 3].stats.loss) << stage_name(stage) << " step " << i;
		}
		for (const auto& entry : fs::directory_iterator(full.root)) {
			if (entry.path().extension() == ".unfd") {
				EXPECT_EQ(file_bytes(entry.path()), file_bytes(split.root / entry.path().filename())) << entry.path();
			}
		}
	}
}

TEST_F(FileTraining, IdenticalRunsGiveIdenticalTracesAndCheckpoints) {
	const CheckpointDir a{root_ / "det_a"};
	const CheckpointDir b{root_ / "det_b"};
	for (const auto* d : {&a, &b}) train_stage(small_train(Stage::autoencoder, 4, manifest()), small_model(), *d, false);
	auto strip = [](const fs::path& p) {
		std::vector<std::string> rows;
		std::ifstream f(p);
		std::string line;
		while (std::getline(f, line)) {
			auto j = nlohmann::json::parse(line);
			EXPECT_TRUE(j.contains("wall_ms"));
			EXPECT_TRUE(j.contains("components"));
			j.erase("wall_ms");
			rows.push_back(j.dump());
		}
		return rows;
	};
	const auto ta = strip(a.trace(Stage::autoencoder));
	EXPECT_EQ(ta.size(), 4u);
	EXPECT_EQ(ta, strip(b.trace(Stage::autoencoder)));
	EXPECT_EQ(file_bytes(a.rve()), file_bytes(b.rve()));
	EXPECT_EQ(file_bytes(a.rvd()), file_bytes(b.rvd()));
}

TEST_F(FileTraining, DeblurStageNeverTouchesTheOtherNetworks) {
	const CheckpointDir dir{root_ / "isolation"};
	train_stage(small_train(Stage::autoencoder, 1, manifest()), small_model(), dir, false);
	train_stage(small_train(Stage::bie, 1, manifest()), small_model(), dir, false);
	std::map<std::string, std::vector<char>> before;
	for (const auto& p : {dir.rve(), dir.rvd(), dir.bie(), dir.rvd_finetuned()}) before[p] = file_bytes(p);
	train_stage(small_train(Stage::deblur, 2, manifest()), small_model(), dir, false);
	for (const auto& [p, bytes] : before) EXPECT_EQ(file_bytes(p), bytes) << p;
	for (const auto& [name, q] : io::load_checkpoint(dir.dm())) EXPECT_EQ(name.rfind("dm.", 0), 0u) << name;
}

TEST_F(FileTraining, CheckpointCadenceWritesIntermediateFiles) {
	const CheckpointDir dir{root_ / "cadence"};
	auto cfg = small_train(Stage::deblur, 4, manifest());
	cfg.checkpoint_every = 2;
	std::int64_t seen_at_two = -1;
	train_stage(cfg, small_model(), dir, false, [&](std::int64_t it) {
		if (it == 3) seen_at_two = io::load_checkpoint(dir.dm()).iteration();
		return false;
	});
	EXPECT_EQ(seen_at_two, 2);
	EXPECT_EQ(io::load_checkpoint(dir.dm()).iteration(), 4);
}

TEST_F(FileTraining, ModelConfigMismatchIsRejected) {
	const CheckpointDir dir{root_ / "mismatch"};
	train_stage(small_train(Stage::deblur, 1, manifest()), small_model(), dir, false);
	auto other = small_model();
	other.dm.base_width = 16;
	EXPECT_THROW(train_stage(small_train(Stage::deblur, 1, manifest()), other, dir, false), ConfigError);
}
