// Command-line front end: data generation, the three training stages, inference, evaluation and the
// gradient-check suite.
//
// Exit codes: 0 success, 1 validation error, 2 numerical failure (non-finite loss or failed gradcheck).
//
// Every subcommand accepts --config FILE: plain-text lines `key = value` where key is a long flag name
// without the dashes ('#' starts a comment). Flags given on the command line take precedence.

#include <algorithm>
#include <cstdio>
#include <fstream>
#include <iostream>
#include <string>
#include <vector>

#include "CLI11.hpp"
#include "json.hpp"
#include "unfold/unfold.hpp"

namespace {

using nlohmann::ordered_json;
using namespace unfold;

struct ModelFlags {
	int frames = 9;
	double channel_mult = 1.0;
	int dm_width = 32;
	int dm_rdbs = 2;
	int dm_layers = 4;
	int dm_growth = 16;
	std::vector<CLI::Option*> options;

	void add(CLI::App* app) {
		options = {app->add_option("--frames", frames, "frames per sequence (odd, >= 3)"),
				   app->add_option("--channel-mult", channel_mult, "RVE/RVD/BIE channel multiplier"),
				   app->add_option("--dm-width", dm_width, "DM base width"),
				   app->add_option("--dm-rdbs", dm_rdbs, "RDBs per DM scale"),
				   app->add_option("--dm-layers", dm_layers, "conv layers per RDB"),
				   app->add_option("--dm-growth", dm_growth, "RDB growth rate")};
	}
	bool given() const {
		return std::any_of(options.begin(), options.end(), [](const CLI::Option* o) { return o->count() > 0; });
	}
	ModelConfig resolve(const CheckpointDir& dir) const {
		// An existing model.json wins unless the architecture is given explicitly.
		if (!given() && std::filesystem::exists(dir.model())) return dir.read_model();
		ModelConfig m;
		m.codec.n_frames = frames;
		m.codec.channel_mult = channel_mult;
		m.dm.base_width = dm_width;
		m.dm.rdbs_per_scale = dm_rdbs;
		m.dm.rdb_layers = dm_layers;
		m.dm.growth = dm_growth;
		m.validate();
		return m;
	}
};

/// Expands `--config FILE` into `--key value` arguments placed before the command-line ones.
std::vector<std::string> expand_config(const std::vector<std::string>& args) {
	std::vector<std::string> file_args;
	std::vector<std::string> rest;
	for (std::size_t i = 0; i < args.size(); ++i) {
		std::string path;
		if (args[i] == "--config" && i + 1 < args.size()) {
			path = args[++i];
		} else if (args[i].rfind("--config=", 0) == 0) {
			path = args[i].substr(9);
		} else {
			rest.push_back(args[i]);
			continue;
		}
		std::ifstream f(path);
		if (!f) throw ConfigError("cannot open config file " + path);
		std::string line;
		int lineno = 0;
		while (std::getline(f, line)) {
			++lineno;
			line = line.substr(0, line.find('#'));
			const auto trim = [](std::string s) {
				const auto a = s.find_first_not_of(" \t\r");
				const auto b = s.find_last_not_of(" \t\r");
				return a == std::string::npos ? std::string() : s.substr(a, b - a + 1);
			};
			if (trim(line).empty()) continue;
			const auto eq = line.find('=');
			if (eq == std::string::npos)
				throw ConfigError(path + ":" + std::to_string(lineno) + ": expected 'key = value'");
			const std::string key = trim(line.substr(0, eq));
			if (key.empty()) throw ConfigError(path + ":" + std::to_string(lineno) + ": empty key");
			file_args.push_back("--" + key + "=" + trim(line.substr(eq + 1)));
		}
	}
	// The subcommand name must stay first.
	if (rest.empty()) return file_args;
	std::vector<std::string> out{rest.front()};
	out.insert(out.end(), file_args.begin(), file_args.end());
	out.insert(out.end(), rest.begin() + 1, rest.end());
	return out;
}

ordered_json model_json(const ModelConfig& m) { return m.to_json(); }

ordered_json train_json(const TrainConfig& t) {
	return {{"stage", stage_name(t.stage)},
			{"learning_rate", t.learning_rate},
			{"finetune_multiplier", t.finetune_multiplier},
			{"bie_from_scratch", t.bie_from_scratch},
			{"batch_size", t.batch_size},
			{"iterations", t.iterations},
			{"seed", t.seed},
			{"recon_weights", t.weights.scale},
			{"smoothness", t.weights.smoothness},
			{"ordering_invariant", t.weights.ordering_invariant},
			{"manifest", t.manifest},
			{"checkpoint_every", t.checkpoint_every},
			{"decay_every", t.decay_every},
			{"decay_factor", t.decay_factor}};
}

int run(int argc, char** argv) {
	CLI::App app{"Unfold a motion-blurred image into a sharp video"};
	app.require_subcommand(1);
	app.option_defaults()->multi_option_policy(CLI::MultiOptionPolicy::TakeLast);
	app.set_version_flag("--version", "unfold 1.0");
	app.add_option("--config", "key = value file (flags on the command line take precedence)");

	// gen-data
	auto* gen = app.add_subcommand("gen-data", "render a synthetic dataset");
	std::string gen_out;
	int gen_count = 20;
	std::uint64_t gen_seed = 0;
	std::string gen_kind = "mixed";
	SceneDistribution dist;
	gen->add_option("--out", gen_out, "output directory")->required();
	gen->add_option("--count", gen_count, "number of sequences");
	gen->add_option("--seed", gen_seed, "master seed");
	gen->add_option("--kind", gen_kind, "translation | mixed");
	gen->add_option("--frames", dist.n_frames, "frames per sequence");
	gen->add_option("--height", dist.height);
	gen->add_option("--width", dist.width);
	gen->add_option("--min-speed", dist.min_speed, "px/frame");
	gen->add_option("--max-speed", dist.max_speed, "px/frame");
	gen->add_option("--max-rotation", dist.max_rotation_deg, "deg/frame");
	gen->add_option("--min-sprites", dist.min_sprites);
	gen->add_option("--max-sprites", dist.max_sprites);
	gen->add_option("--contrast", dist.contrast, "texture contrast");
	gen->add_option("--cell", dist.cell, "texture cell size (px)");
	gen->add_option("--octaves", dist.octaves, "texture octaves");

	// training stages
	TrainConfig tc;
	std::string ckpt_dir;
	bool resume = false;
	std::vector<double> recon_weights;
	bool no_ordering = false;
	ModelFlags model_flags;
	auto add_train = [&](const char* name, const char* help, Stage stage) {
		auto* s = app.add_subcommand(name, help);
		s->add_option("--data", tc.manifest, "training manifest.json")->required();
		s->add_option("--checkpoints", ckpt_dir, "checkpoint directory")->required();
		s->add_option("--iterations", tc.iterations);
		s->add_option("--lr", tc.learning_rate, "learning rate");
		s->add_option("--batch", tc.batch_size, "batch size");
		s->add_option("--seed", tc.seed);
		s->add_option("--checkpoint-every", tc.checkpoint_every, "0: only at the end");
		s->add_option("--decay-every", tc.decay_every, "step-decay period (0: constant rate)");
		s->add_option("--decay-factor", tc.decay_factor);
		s->add_flag("--resume", resume, "continue from the stage's checkpoints");
		if (stage != Stage::deblur) {
			s->add_option("--recon-weights", recon_weights, "four per-scale weights, coarse to fine")->expected(4)->delimiter(',');
			s->add_option("--smoothness", tc.weights.smoothness, "flow smoothness weight");
		}
		if (stage == Stage::bie) {
			s->add_option("--finetune-mult", tc.finetune_multiplier, "RVD rate relative to the BIE rate");
			s->add_flag("--from-scratch", tc.bie_from_scratch, "train a fresh RVD jointly at the full rate");
			s->add_flag("--no-ordering-invariance", no_ordering, "score only the forward frame order");
		}
		model_flags.add(s);
		s->callback([&, stage] { tc.stage = stage; });
		return s;
	};
	auto* tr_ae = add_train("train-autoencoder", "stage 1: train RVE and RVD", Stage::autoencoder);
	auto* tr_bie = add_train("train-bie", "stage 2: train the BIE, fine-tune the RVD", Stage::bie);
	auto* tr_dm = add_train("train-deblur", "stage 3: train the deblurring module", Stage::deblur);

	// unfold
	auto* unf = app.add_subcommand("unfold", "blurred image -> sharp video");
	std::string unf_input;
	std::string unf_out;
	bool pin_central = true;
	ExportOptions exp;
	unf->add_option("--input", unf_input, "blurred PNG")->required()->check(CLI::ExistingFile);
	unf->add_option("--checkpoints", ckpt_dir, "checkpoint directory")->required();
	unf->add_option("--out", unf_out, "output directory")->required();
	unf->add_flag("--pin-central,!--no-pin-central", pin_central, "central frame is the DM output verbatim (default on)");
	unf->add_flag("--gif,!--no-gif", exp.gif, "write unfolded.gif (default on)");
	unf->add_flag("--png,!--no-png", exp.png, "write frame PNGs (default on)");
	unf->add_flag("--flows", exp.flows, "write .flo files and color-wheel PNGs");
	unf->add_option("--gif-delay", exp.gif_delay_ms, "GIF frame delay in ms");

	// eval
	auto* ev = app.add_subcommand("eval", "evaluate on a held-out dataset");
	std::string ev_data;
	std::string ev_out;
	ev->add_option("--data", ev_data, "held-out manifest.json")->required();
	ev->add_option("--checkpoints", ckpt_dir, "checkpoint directory")->required();
	ev->add_option("--out", ev_out, "output directory (report.jsonl, run.json)")->required();
	ev->add_flag("--pin-central,!--no-pin-central", pin_central, "central frame is the DM output verbatim (default on)");

	// gradcheck
	auto* gc = app.add_subcommand("gradcheck", "finite-difference check of every differentiable op");
	GradCheckSuiteOptions gco;
	std::string gc_out = ".";
	gc->add_option("--probes", gco.probes_per_op, "random probes per op");
	gc->add_option("--tolerance", gco.tolerance, "max relative error");
	gc->add_option("--seed", gco.seed);
	gc->add_option("--out", gc_out, "directory for run.json");

	std::vector<std::string> args;
	for (int i = 1; i < argc; ++i) args.emplace_back(argv[i]);
	try {
		args = expand_config(args);
	} catch (const ConfigError& e) {
		std::cerr << "error: " << e.what() << '\n';
		return 1;
	}
	std::reverse(args.begin(), args.end());
	try {
		app.parse(args);
	} catch (const CLI::ParseError& e) {
		const int rc = app.exit(e);
		return rc == 0 ? 0 : 1;
	}

	if (gen->parsed()) {
		dist.kind = SceneDistribution::parse_kind(gen_kind);
		if (dist.kind == SceneDistribution::Kind::translation) {
			if (gen->count("--min-sprites") == 0) dist.min_sprites = 0;
			if (gen->count("--max-sprites") == 0) dist.max_sprites = 0;
			if (gen->count("--max-rotation") == 0) dist.max_rotation_deg = 0.0;
		}
		dist.validate();
		write_run_record(gen_out, {{"subcommand", "gen-data"},
								   {"out", gen_out},
								   {"count", gen_count},
								   {"seed", gen_seed},
								   {"kind", gen_kind},
								   {"frames", dist.n_frames},
								   {"height", dist.height},
								   {"width", dist.width},
								   {"min_speed", dist.min_speed},
								   {"max_speed", dist.max_speed},
								   {"max_rotation_deg", dist.max_rotation_deg},
								   {"min_sprites", dist.min_sprites},
								   {"max_sprites", dist.max_sprites},
								   {"contrast", dist.contrast},
								   {"cell", dist.cell},
								   {"octaves", dist.octaves}});
		const auto m = build_dataset(gen_count, dist, gen_out, gen_seed);
		std::printf("wrote %zu sequences to %s\n", m.records.size(), gen_out.c_str());
		return 0;
	}

	if (tr_ae->parsed() || tr_bie->parsed() || tr_dm->parsed()) {
		if (!recon_weights.empty()) std::copy(recon_weights.begin(), recon_weights.end(), tc.weights.scale.begin());
		tc.weights.ordering_invariant = !no_ordering;
		const CheckpointDir dir{ckpt_dir};
		const ModelConfig model = model_flags.resolve(dir);
		tc.validate();
		const std::string sub = tr_ae->parsed() ? "train-autoencoder" : tr_bie->parsed() ? "train-bie" : "train-deblur";
		std::filesystem::create_directories(ckpt_dir);
		write_run_record(ckpt_dir, {{"subcommand", sub},
									{"checkpoints", ckpt_dir},
									{"resume", resume},
									{"train", train_json(tc)},
									{"model", model_json(model)}});
		const auto report = train_stage(tc, model, dir, resume);
		if (!report.trace.empty())
			std::printf("%s: iteration %lld, loss %.6g\n", stage_name(tc.stage).c_str(),
						static_cast<long long>(report.final_iteration), report.trace.back().stats.loss);
		else
			std::printf("%s: nothing to do at iteration %lld\n", stage_name(tc.stage).c_str(),
						static_cast<long long>(report.final_iteration));
		return 0;
	}

	if (unf->parsed()) {
		Models models = Models::load(CheckpointDir{ckpt_dir});
		write_run_record(unf_out, {{"subcommand", "unfold"},
								   {"input", unf_input},
								   {"checkpoints", ckpt_dir},
								   {"out", unf_out},
								   {"pin_central", pin_central},
								   {"png", exp.png},
								   {"gif", exp.gif},
								   {"flows", exp.flows},
								   {"gif_delay_ms", exp.gif_delay_ms},
								   {"model", model_json(models.config)}});
		const auto blurred = io::read_png<float>(unf_input);
		const auto result = unfold_image(blurred, models, pin_central);
		const auto files = export_unfold(result, unf_out, exp);
		std::printf("wrote %zu files to %s\n", files.size(), unf_out.c_str());
		return 0;
	}

	if (ev->parsed()) {
		Models models = Models::load(CheckpointDir{ckpt_dir});
		const Dataset ds(ev_data);
		write_run_record(ev_out, {{"subcommand", "eval"},
								  {"data", ev_data},
								  {"checkpoints", ckpt_dir},
								  {"out", ev_out},
								  {"pin_central", pin_central},
								  {"model", model_json(models.config)}});
		const auto report = evaluate(ds, models, pin_central);
		const std::string path = (std::filesystem::path(ev_out) / "report.jsonl").string();
		report.write(path);
		std::printf("%zu sequences: DM %.2f dB (blurred %.2f dB), unfold error %.3f vs repeated central %.3f\n",
					report.sequences.size(), report.mean("psnr_dm"), report.mean("psnr_blurred"), report.mean("unfold_error"),
					report.mean("baseline_error"));
		std::printf("report: %s\n", path.c_str());
		return 0;
	}

	if (gc->parsed()) {
		write_run_record(gc_out, {{"subcommand", "gradcheck"}, {"probes", gco.probes_per_op}, {"tolerance", gco.tolerance}, {"seed", gco.seed}});
		const auto t0 = std::chrono::steady_clock::now();
		const auto rows = gradcheck_suite(gco);
		bool ok = true;
		std::printf("%-16s %6s %14s %8s  %s\n", "op", "probes", "max rel err", "seconds", "result");
		for (const auto& r : rows) {
			std::printf("%-16s %6d %14.3e %8.2f  %s\n", r.op.c_str(), r.probes, r.max_rel_error, r.seconds, r.passed ? "pass" : "FAIL");
			ok = ok && r.passed;
		}
		std::printf("total %.1f s\n", std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count());
		return ok ? 0 : 2;
	}
	return 1;
}

}  // namespace

int main(int argc, char** argv) {
	try {
		return run(argc, argv);
	} catch (const unfold::NumericalError& e) {
		std::cerr << "numerical failure: " << e.what() << '\n';
		return 2;
	} catch (const std::exception& e) {
		std::cerr << "error: " << e.what() << '\n';
		return 1;
	}
}
