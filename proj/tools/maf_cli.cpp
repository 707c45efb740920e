#include <algorithm>
#include <chrono>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <optional>
#include <sstream>

#include <CLI11.hpp>

#include "maf/image_io.hpp"
#include "maf/training.hpp"

namespace fs = std::filesystem;
using namespace maf;

namespace {

struct UsageError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

// Flat key set; every field is also a command-line flag of the same name.
struct RunConfig {
  std::string preset = "toy";
  std::uint64_t seed = 0;
  std::uint64_t body_seed = 0;
  std::string dataset;
  std::string val_dataset;
  int T = 3;
  std::string feedback_mode = "mesh_aligned";
  std::string init_mode = "grid";
  bool aux = true;
  LossWeights weights;
  double lr = 1e-4;
  int batch = 16;
  int steps = 2000;
  int probe = 8;
  std::string checkpoint = "model.ckpt";
  int checkpoint_every = 500;
};

struct Flags {
  CLI::Option* preset = nullptr;
  CLI::Option* T = nullptr;
  CLI::Option* feedback = nullptr;
  CLI::Option* init = nullptr;
  CLI::Option* lr = nullptr;
  CLI::Option* batch = nullptr;
};

void log(const std::string& msg) { std::cerr << "[maf] " << msg << std::endl; }

void write_text(const fs::path& path, const std::string& text) {
  if (path.has_parent_path()) fs::create_directories(path.parent_path());
  std::ofstream os(path, std::ios::binary);
  if (!os) throw archive::IoError("cannot open for writing: " + path.string());
  os << text;
  if (!os) throw archive::IoError("write failed: " + path.string());
}

LoopConfig loop_config(const RunConfig& rc) {
  LoopConfig loop;
  try {
    loop = LoopConfig::for_mode(parse_feedback_mode(rc.feedback_mode), rc.T);
    loop.init = parse_init_mode(rc.init_mode);
  } catch (const ConfigError& e) {
    throw UsageError(e.what());
  }
  return loop;
}

TrainConfig train_config(const RunConfig& rc, const Flags& f, const LoopConfig& loop) {
  TrainConfig tc;
  try {
    tc.model = ModelConfig::preset_named(rc.preset);
    tc.model.loop = loop;
    if (rc.preset == "paper") {
      tc.adam.lr = 5e-5;
      tc.batch = 64;
    }
    if (f.lr->count()) tc.adam.lr = rc.lr;
    if (f.batch->count()) tc.batch = rc.batch;
    tc.weights = rc.weights;
    tc.aux = rc.aux;
    tc.steps = rc.steps;
    tc.seed = rc.seed;
    tc.probe = rc.probe;
    tc.validate();
  } catch (const ConfigError& e) {
    throw UsageError(e.what());
  }
  return tc;
}

Dataset open_dataset(const std::string& path, const char* what) {
  if (path.empty()) throw UsageError(std::string("--") + what + " is required");
  return load_dataset(path);
}

/// Trains until `tc.steps` steps are done, resuming from `resume` when given.
void train_run(const TrainConfig& tc, const Dataset& ds, const fs::path& ckpt,
               const std::optional<fs::path>& log_path, int every,
               const std::optional<fs::path>& resume) {
  std::unique_ptr<Trainer> tr = resume ? std::make_unique<Trainer>(*resume, ds)
                                       : std::make_unique<Trainer>(tc, ds);
  if (resume && tr->config().model.fingerprint() != tc.model.fingerprint())
    throw ConfigError("checkpoint " + resume->string() + " has a different model configuration");
  std::ofstream csv;
  if (log_path) {
    if (log_path->has_parent_path()) fs::create_directories(log_path->parent_path());
    const bool append = resume && fs::exists(*log_path);
    csv.open(*log_path, append ? std::ios::app : std::ios::trunc);
    if (!csv) throw archive::IoError("cannot open for writing: " + log_path->string());
    if (!append) csv << step_log_header(tc.model.loop.T) << "\n";
  }
  if (ckpt.has_parent_path()) fs::create_directories(ckpt.parent_path());
  const auto start = std::chrono::steady_clock::now();
  const long total = tc.steps;
  while (tr->steps_done() < total) {
    StepLog row;
    try {
      row = tr->step();
    } catch (const TrainingDiverged& e) {
      std::string ids;
      for (const auto& id : e.batch_ids) ids += (ids.empty() ? "" : ",") + id;
      log("diverged at step " + std::to_string(e.step) + ": " + e.what() + "; batch ids: " + ids);
      throw;
    }
    if (csv.is_open()) csv << step_log_row(row) << "\n";
    if (row.step % 100 == 0 || row.step == total) {
      const double sec =
          std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
      std::ostringstream m;
      m << "step " << row.step << "/" << total << " loss " << row.total << " probe mpjpe "
        << (row.probe_mpjpe.empty() ? 0.0 : row.probe_mpjpe.back()) << " (" << sec << " s)";
      log(m.str());
    }
    if (every > 0 && row.step % every == 0 && row.step != total) tr->save(ckpt);
  }
  tr->save(ckpt);
  log("wrote " + ckpt.string());
}

/// Preset and, when given explicitly, loop settings must agree with the checkpoint.
void check_compatible(const fs::path& ckpt, const RunConfig& rc, const Flags& f) {
  const auto h = read_checkpoint_header(ckpt);
  const auto model = ModelConfig::from_json(h.at("train").at("model"));
  if (model.preset != rc.preset)
    throw ConfigError(ckpt.string() + ": checkpoint preset '" + model.preset +
                      "' does not match requested preset '" + rc.preset + "'");
  if (f.T->count() || f.feedback->count() || f.init->count()) {
    ModelConfig want = ModelConfig::preset_named(rc.preset);
    want.loop = loop_config(rc);
    if (want.fingerprint() != model.fingerprint())
      throw ConfigError(ckpt.string() + ": checkpoint fingerprint " + model.fingerprint() +
                        " does not match the requested configuration " + want.fingerprint());
  }
}

TemplateBody preset_body(const RunConfig& rc) {
  return make_toy_body(rc.body_seed, ModelConfig::preset_named(rc.preset).body);
}

std::vector<std::string> split(const std::string& s) {
  std::vector<std::string> out;
  std::stringstream ss(s);
  for (std::string item; std::getline(ss, item, ',');)
    if (!item.empty()) out.push_back(item);
  return out;
}

nlohmann::json params_json(const BodyParams& p) {
  return {{"pose", p.pose.data},
          {"shape", p.shape},
          {"camera", {p.camera.scale, p.camera.tx, p.camera.ty}}};
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Mesh alignment feedback regression on a procedural body"};
  app.set_config("--config", "", "flat key = value config file; flags override it");
  app.require_subcommand(1);
  app.fallthrough();

  RunConfig rc;
  Flags f;
  f.preset = app.add_option("--preset", rc.preset, "toy | paper")
                 ->check(CLI::IsMember({"toy", "paper"}));
  app.add_option("--seed", rc.seed, "run seed");
  app.add_option("--body-seed", rc.body_seed, "seed of the procedural body");
  app.add_option("--dataset", rc.dataset, "dataset directory");
  app.add_option("--val-dataset", rc.val_dataset, "validation dataset directory");
  f.T = app.add_option("--T", rc.T, "feedback iterations")->check(CLI::PositiveNumber);
  f.feedback = app.add_option("--feedback-mode", rc.feedback_mode)
                   ->check(CLI::IsMember({"global", "grid", "mesh_aligned"}));
  f.init = app.add_option("--init-mode", rc.init_mode)
               ->check(CLI::IsMember({"grid", "mean_pose_mesh"}));
  app.add_option("--aux", rc.aux, "auxiliary IUV supervision (true/false)");
  app.add_option("--w-kp2d", rc.weights.kp2d);
  app.add_option("--w-joints3d", rc.weights.joints3d);
  app.add_option("--w-pose", rc.weights.pose);
  app.add_option("--w-shape", rc.weights.shape);
  app.add_option("--w-part", rc.weights.part);
  app.add_option("--w-uv", rc.weights.uv);
  f.lr = app.add_option("--lr", rc.lr, "Adam step size (toy 1e-4, paper 5e-5)");
  f.batch = app.add_option("--batch", rc.batch, "batch size (toy 16, paper 64)")
                ->check(CLI::PositiveNumber);
  app.add_option("--steps", rc.steps, "total optimizer steps")->check(CLI::NonNegativeNumber);
  app.add_option("--probe", rc.probe, "probe samples logged every step")
      ->check(CLI::NonNegativeNumber);
  app.add_option("--checkpoint", rc.checkpoint, "checkpoint path");
  app.add_option("--checkpoint-every", rc.checkpoint_every, "steps between checkpoints (0: end only)")
      ->check(CLI::NonNegativeNumber);

  auto* synth = app.add_subcommand("synth", "generate a synthetic dataset");
  int count = 64;
  std::optional<int> resolution;
  synth->add_option("--count", count, "number of samples")->check(CLI::PositiveNumber);
  synth->add_option("--resolution", resolution, "image size (toy 64, paper 224)")
      ->check(CLI::PositiveNumber);
  double contrast = SynthOptions{}.background_contrast;
  synth->add_option("--background-contrast", contrast, "noise contrast about mid grey")
      ->check(CLI::Range(0.0, 1.0));

  auto* train = app.add_subcommand("train", "train a model");
  std::string train_log, resume;
  train->add_option("--log", train_log, "per-step CSV log");
  train->add_option("--resume", resume, "checkpoint to resume from")->check(CLI::ExistingFile);

  auto* eval = app.add_subcommand("eval", "evaluate a checkpoint");
  std::string eval_csv = "metrics.csv", eval_summary = "summary.json";
  eval->add_option("--csv", eval_csv, "per-sample metrics CSV");
  eval->add_option("--summary", eval_summary, "aggregate metrics JSON");

  auto* ablate = app.add_subcommand("ablate", "feedback-feature ablation over modes and seeds");
  std::string modes = "global,grid,mesh_aligned", seeds = "0,1,2", ckpt_dir = "ablation",
              ablate_csv = "ablation.csv";
  bool do_train = false;
  ablate->add_option("--modes", modes, "comma-separated feedback modes");
  ablate->add_option("--seeds", seeds, "comma-separated seeds");
  ablate->add_option("--ckpt-dir", ckpt_dir, "checkpoint directory");
  ablate->add_option("--csv", ablate_csv, "output CSV");
  ablate->add_flag("--train", do_train, "train runs whose checkpoint is missing");

  auto* infer = app.add_subcommand("infer", "run a checkpoint on one image");
  std::string image, out_dir = "infer";
  bool features = false;
  infer->add_option("--image", image, "input PPM")->required()->check(CLI::ExistingFile);
  infer->add_option("--out-dir", out_dir, "output directory");
  infer->add_flag("--features", features, "also dump summed feature maps as PGM");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? 0 : 1;
  }

  try {
    if (synth->parsed()) {
      if (rc.dataset.empty()) throw UsageError("--dataset is required");
      const TemplateBody body = preset_body(rc);
      SynthOptions opt;
      opt.resolution = resolution.value_or(ModelConfig::preset_named(rc.preset).encoder.image_size);
      opt.background_contrast = contrast;
      const auto manifest = make_dataset(rc.dataset, rc.seed, count, body, opt);
      log("wrote " + std::to_string(manifest.at("count").get<int>()) + " samples at " +
          std::to_string(opt.resolution) + "px to " + rc.dataset + " (body " +
          manifest.at("body_hash").get<std::string>() + ")");
    } else if (train->parsed()) {
      const TrainConfig tc = train_config(rc, f, loop_config(rc));
      const Dataset ds = open_dataset(rc.dataset, "dataset");
      log("training " + to_string(tc.model.loop.feedback) + " on " +
          std::to_string(ds.samples.size()) + " samples");
      train_run(tc, ds, rc.checkpoint, train_log.empty() ? std::nullopt : std::optional<fs::path>(train_log),
                rc.checkpoint_every, resume.empty() ? std::nullopt : std::optional<fs::path>(resume));
    } else if (eval->parsed()) {
      check_compatible(rc.checkpoint, rc, f);
      const Dataset ds = open_dataset(rc.dataset, "dataset");
      auto model = load_model(rc.checkpoint, ds.body);
      const EvalResult r = evaluate(*model.net, ds);
      write_text(eval_csv, r.csv());
      write_text(eval_summary, r.summary().dump(2) + "\n");
      log("mpjpe " + std::to_string(r.summary().at("mpjpe").get<double>()) + " mm over " +
          std::to_string(r.samples.size()) + " samples");
    } else if (ablate->parsed()) {
      const Dataset ds = open_dataset(rc.dataset, "dataset");
      const Dataset val = rc.val_dataset.empty() ? ds : open_dataset(rc.val_dataset, "val-dataset");
      std::vector<AblationRow> rows;
      for (const auto& mode : split(modes)) {
        RunConfig r = rc;
        r.feedback_mode = mode;
        const LoopConfig loop = loop_config(r);
        for (const auto& s : split(seeds)) {
          std::uint64_t seed = 0;
          try {
            seed = std::stoull(s);
          } catch (const std::exception&) {
            throw UsageError("bad seed '" + s + "'");
          }
          r.seed = seed;
          const fs::path ckpt = ablation_checkpoint(ckpt_dir, loop, seed);
          if (!fs::exists(ckpt)) {
            if (!do_train)
              throw ConfigError("missing checkpoint " + ckpt.string() + " (pass --train to create it)");
            log("training " + ckpt.string());
            train_run(train_config(r, f, loop), ds, ckpt, std::nullopt, 0, std::nullopt);
          }
          auto model = load_model(ckpt, val.body);
          if (model.config.model.loop.feedback != loop.feedback ||
              model.config.model.loop.init != loop.init)
            throw ConfigError(ckpt.string() + ": checkpoint does not match mode " + mode);
          const auto add = ablation_rows(loop, seed, evaluate(*model.net, val));
          log(mode + " seed " + s + ": final mpjpe " + std::to_string(add.back().mpjpe));
          rows.insert(rows.end(), add.begin(), add.end());
        }
      }
      write_text(ablate_csv, ablation_csv(rows));
      log("wrote " + ablate_csv);
    } else if (infer->parsed()) {
      check_compatible(rc.checkpoint, rc, f);
      const TemplateBody body =
          rc.dataset.empty() ? preset_body(rc) : load_body(fs::path(rc.dataset) / "body.bin");
      auto model = load_model(rc.checkpoint, body);
      const int size = model.config.model.encoder.image_size;
      Tensor<float> img = read_ppm(image);
      if (img.shape != Shape{3, size, size})
        throw ConfigError(image + ": expected a " + std::to_string(size) + "x" +
                          std::to_string(size) + " image, got " + shape_str(img.shape));
      Tensor<float> batch({1, 3, size, size}, img.data);
      NoGradGuard ng;
      std::mt19937_64 rng(0);
      const auto trace = model.net->run(Var<float>::leaf(batch), false, rng);
      const auto loops = to_loop_traces(trace, body);
      fs::create_directories(out_dir);
      nlohmann::json dump = {{"theta_0", params_json(loops[0].initial)},
                             {"iterations", nlohmann::json::array()}};
      for (std::size_t t = 0; t < loops[0].params_per_iter.size(); ++t) {
        const auto& p = loops[0].params_per_iter[t];
        auto j = params_json(p);
        j["t"] = t + 1;
        dump["iterations"].push_back(j);
        write_ppm(fs::path(out_dir) / ("overlay_iter" + std::to_string(t + 1) + ".ppm"),
                  render_overlay(img, loops[0].meshes_per_iter[t], body, p.camera));
      }
      write_text(fs::path(out_dir) / "params.json", dump.dump(2) + "\n");
      if (features) {
        const auto& pyr = trace.encoded.pyramid;
        for (std::size_t l = 0; l < pyr.size(); ++l) {
          const Tensor<float>& fm = pyr[l].value();
          const int C = fm.dim(1), h = fm.dim(2), w = fm.dim(3);
          Tensor<float> sum({h, w});
          for (int c = 0; c < C; ++c)
            for (int i = 0; i < h * w; ++i) sum[i] += fm[static_cast<std::size_t>(c) * h * w + i];
          write_pgm(fs::path(out_dir) / ("features_level" + std::to_string(l) + ".pgm"), sum);
        }
      }
      log("wrote " + std::to_string(loops[0].params_per_iter.size()) + " overlays to " + out_dir);
    }
  } catch (const UsageError& e) {
    log(std::string("usage: ") + e.what());
    return 1;
  } catch (const std::exception& e) {
    log(std::string("error: ") + e.what());
    return 2;
  }
  return 0;
}
