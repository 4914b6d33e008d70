// Command-line front end: gen-data, train, infer, eval, gradcheck, report.

#include <CLI11.hpp>
#include <chrono>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>

#include "mit/checkpoint.hpp"
#include "mit/dataset.hpp"
#include "mit/errors.hpp"
#include "mit/gradcheck_suite.hpp"
#include "mit/parallel.hpp"
#include "mit/report.hpp"
#include "mit/synth.hpp"
#include "mit/trainer.hpp"

namespace fs = std::filesystem;

namespace {

constexpr int kUsageError = 2;
constexpr int kFailure = 1;

// Exits with the usage code; thrown for semantic argument problems detected
// after parsing (e.g. a required config key).
struct UsageError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

class TsvAppender {
 public:
  TsvAppender(fs::path path, const std::string& header, bool append) : path_(std::move(path)) {
    if (append && fs::exists(path_)) return;
    std::ofstream f(path_, std::ios::trunc);
    f << header << '\n';
  }
  std::ofstream open() const {
    std::ofstream f(path_, std::ios::app);
    f.precision(17);
    return f;
  }

 private:
  fs::path path_;
};

int gen_data(std::uint64_t seed, std::size_t scenes, const fs::path& out, const mit::SceneRecipe& recipe) {
  const mit::Dataset ds = mit::generate_dataset(seed, scenes, recipe);
  mit::write_dataset(ds, out);
  std::cout << "wrote " << ds.scenes.size() << " scenes (" << ds.num_classes() << " classes) to " << out.string()
            << '\n';
  return 0;
}

int train(const std::string& config_path, const std::string& resume, const fs::path& out, std::optional<std::size_t> epochs,
          const std::string& data_override) {
  mit::Checkpoint state;
  mit::Config cfg;
  if (!resume.empty()) {
    state = mit::load_checkpoint(resume);
    cfg = state.config;
  } else {
    if (config_path.empty()) throw UsageError("train needs --config or --resume");
    cfg = mit::load_config(config_path);
  }
  if (!data_override.empty()) cfg.data = data_override;
  if (epochs) cfg.epochs = *epochs;
  if (cfg.data.empty()) throw UsageError("config is missing required key 'data' (path of the training dataset)");
  mit::validate(cfg);
  state.config = cfg;

  const mit::Dataset train_set = mit::read_training_dataset(cfg.data);
  std::optional<mit::Dataset> val_set;
  if (!cfg.val_data.empty()) val_set = mit::read_dataset(cfg.val_data);
  if (resume.empty()) {
    state = mit::initial_state(cfg, train_set.class_names);
  } else if (state.class_names != train_set.class_names) {
    throw mit::InputError("dataset classes do not match the checkpoint");
  }

  fs::create_directories(out);
  {
    std::ofstream f(out / "config.cfg");
    f << mit::serialize_config(cfg);
  }
  const bool append = !resume.empty();
  TsvAppender steps(out / "steps.tsv", "epoch\tstep\tloss\tencoder\tdecoder\tcontrastive", append);
  TsvAppender epochs_log(out / "epochs.tsv", "epoch\tmean_loss\tval_miou", append);

  mit::Trainer trainer(cfg, train_set, val_set ? &*val_set : nullptr);
  trainer.set_dump_path(out / "nonfinite_batch.tsv");
  mit::TrainLog log;
  std::size_t written = 0;
  const auto start = std::chrono::steady_clock::now();
  trainer.train(state, cfg.epochs, log, [&](const mit::Checkpoint& ck, const mit::EpochRecord& er) {
    {
      auto f = steps.open();
      for (; written < log.steps.size(); ++written) {
        const auto& s = log.steps[written];
        f << s.epoch << '\t' << s.step << '\t' << s.loss << '\t' << s.encoder << '\t' << s.decoder << '\t'
          << s.contrastive << '\n';
      }
    }
    {
      auto f = epochs_log.open();
      f << er.epoch << '\t' << er.mean_loss << '\t';
      if (er.val_miou) f << *er.val_miou;
      f << '\n';
    }
    mit::save_checkpoint(ck, out / "checkpoint.bin");
    const double secs = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
    std::cout << "epoch " << er.epoch << "/" << cfg.epochs << "  loss " << er.mean_loss;
    if (er.val_miou) std::cout << "  val mIoU " << *er.val_miou;
    std::cout << "  (" << secs << " s)" << std::endl;
  });
  if (log.epochs.empty()) mit::save_checkpoint(state, out / "checkpoint.bin");
  std::cout << "checkpoint: " << (out / "checkpoint.bin").string() << '\n';
  return 0;
}

mit::Checkpoint model_for(const std::string& checkpoint, const std::string& config_path,
                          std::optional<std::uint64_t> seed, const mit::Dataset& data) {
  if (!checkpoint.empty()) {
    mit::Checkpoint ck = mit::load_checkpoint(checkpoint);
    if (ck.class_names.size() != data.num_classes()) {
      throw mit::InputError("checkpoint has " + std::to_string(ck.class_names.size()) + " classes, dataset has " +
                            std::to_string(data.num_classes()));
    }
    return ck;
  }
  mit::Config cfg = config_path.empty() ? mit::desk_profile() : mit::load_config(config_path);
  if (seed) cfg.seed = *seed;
  return mit::initial_state(cfg, data.class_names);
}

int infer(const std::string& checkpoint, const std::string& config_path, const fs::path& data_dir,
          const fs::path& out) {
  const mit::Dataset data = mit::read_dataset(data_dir);
  const mit::Checkpoint ck = model_for(checkpoint, config_path, std::nullopt, data);
  fs::create_directories(out);
  std::vector<std::size_t> labeled(data.scenes.size());
  mit::parallel_for(data.scenes.size(), [&](std::size_t i) {
    const mit::Scene& scene = data.scenes[i];
    const mit::PreparedScene ps = mit::prepare_scene(scene, ck.config);
    const mit::SceneInference inf = mit::infer_scene(ck.params, ck.config, data.num_classes(), ps);
    std::ofstream f(out / (scene.id + ".labels"));
    f << "label\tconfidence\n";
    for (std::size_t p = 0; p < inf.labels.labels.size(); ++p) {
      f << inf.labels.labels[p] << '\t' << inf.labels.confidence[p] << '\n';
      if (inf.labels.labels[p] != mit::kIgnoreLabel) ++labeled[i];
    }
  });
  std::size_t total = 0, kept = 0;
  for (std::size_t i = 0; i < data.scenes.size(); ++i) {
    total += data.scenes[i].cloud.size();
    kept += labeled[i];
  }
  std::cout << "pseudo labels for " << data.scenes.size() << " scenes in " << out.string() << ": " << kept << " of "
            << total << " points above threshold\n";
  return 0;
}

int eval(const std::string& checkpoint, const std::string& config_path, std::optional<std::uint64_t> seed,
         const fs::path& data_dir, const std::string& out) {
  const mit::Dataset data = mit::read_dataset(data_dir);
  const mit::Checkpoint ck = model_for(checkpoint, config_path, seed, data);
  const mit::EvaluationReport rep = mit::evaluate(ck.params, ck.config, data);
  const mit::TsvTable table = mit::evaluation_table(rep, data.class_names);
  if (out.empty()) {
    for (const auto& row : table) {
      for (std::size_t i = 0; i < row.size(); ++i) std::cout << (i ? "\t" : "") << row[i];
      std::cout << '\n';
    }
  } else {
    mit::write_tsv(table, out);
  }
  if (rep.map) std::printf("mAP=%.6f\n", rep.map->mean);
  std::printf("mIoU=%.6f\n", rep.miou.mean);
  return 0;
}

int gradcheck(std::size_t seeds, double eps, double tol, const std::string& filter) {
  bool all = true;
  std::size_t ran = 0;
  for (const auto& c : mit::gradcheck_cases()) {
    if (!filter.empty() && c.name.find(filter) == std::string::npos) continue;
    for (std::size_t s = 0; s < seeds; ++s) {
      const mit::GradcheckReport r = c.run(s + 1, eps, tol);
      all = all && r.passed;
      ++ran;
      std::printf("%s\t%-28s seed %zu  max rel err %.3e  (%zu entries)\n", r.passed ? "PASS" : "FAIL", c.name.c_str(),
                  s + 1, r.max_rel_error, r.checked);
    }
  }
  if (ran == 0) throw UsageError("no gradcheck case matches '" + filter + "'");
  std::printf("%s\n", all ? "all gradchecks passed" : "gradcheck failures");
  return all ? 0 : kFailure;
}

int report(const fs::path& run, const fs::path& out) {
  for (const auto& p : mit::write_report(run, out)) std::cout << p.string() << '\n';
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Multimodal interlaced transformer for weakly supervised point cloud segmentation"};
  app.require_subcommand(1);

  auto* gen = app.add_subcommand("gen-data", "Generate a synthetic labeled dataset");
  std::uint64_t gen_seed = 0;
  std::size_t gen_scenes = 0;
  std::string gen_out;
  mit::SceneRecipe recipe;
  gen->add_option("--seed", gen_seed, "Seed of the first scene")->required();
  gen->add_option("--scenes", gen_scenes, "Number of scenes")->required()->check(CLI::PositiveNumber);
  gen->add_option("--out", gen_out, "Output directory")->required();
  gen->add_option("--classes", recipe.num_classes, "Number of classes")->capture_default_str();
  gen->add_option("--points", recipe.points, "Points per scene")->capture_default_str();
  gen->add_option("--views", recipe.views, "Views per scene")->capture_default_str();
  gen->add_option("--height", recipe.height, "Image height")->capture_default_str();
  gen->add_option("--width", recipe.width, "Image width")->capture_default_str();
  gen->add_option("--purity", recipe.palette_purity, "Palette purity in [0,1]")->capture_default_str();

  auto* tr = app.add_subcommand("train", "Train a model");
  std::string tr_config, tr_resume, tr_out = "run", tr_data;
  std::optional<std::size_t> tr_epochs;
  tr->add_option("--config", tr_config, "Config file");
  tr->add_option("--resume", tr_resume, "Checkpoint to resume from");
  tr->add_option("--out", tr_out, "Run directory")->capture_default_str();
  tr->add_option("--epochs", tr_epochs, "Override the configured epoch count");
  tr->add_option("--data", tr_data, "Override the dataset path");

  auto* inf = app.add_subcommand("infer", "Write per-point pseudo labels");
  std::string inf_ckpt, inf_config, inf_data, inf_out;
  inf->add_option("--checkpoint", inf_ckpt, "Trained checkpoint (untrained model when omitted)");
  inf->add_option("--config", inf_config, "Config for an untrained model");
  inf->add_option("--data", inf_data, "Dataset directory")->required();
  inf->add_option("--out", inf_out, "Output directory")->required();

  auto* ev = app.add_subcommand("eval", "Pseudo-label mIoU and per-view mAP");
  std::string ev_ckpt, ev_config, ev_data, ev_out;
  std::optional<std::uint64_t> ev_seed;
  ev->add_option("--checkpoint", ev_ckpt, "Trained checkpoint (untrained model when omitted)");
  ev->add_option("--config", ev_config, "Config for an untrained model");
  ev->add_option("--seed", ev_seed, "Initialisation seed for an untrained model");
  ev->add_option("--data", ev_data, "Dataset directory")->required();
  ev->add_option("--out", ev_out, "Write the TSV table here instead of stdout");

  auto* gc = app.add_subcommand("gradcheck", "Finite-difference check of every differentiable operation");
  std::size_t gc_seeds = 3;
  double gc_eps = 1e-5, gc_tol = 1e-4;
  std::string gc_filter;
  gc->add_option("--seeds", gc_seeds, "Random instances per operation")->capture_default_str();
  gc->add_option("--eps", gc_eps, "Finite-difference step")->capture_default_str();
  gc->add_option("--tol", gc_tol, "Relative tolerance")->capture_default_str();
  gc->add_option("--filter", gc_filter, "Only cases whose name contains this");

  auto* rp = app.add_subcommand("report", "Plots and tables of a training run");
  std::string rp_run, rp_out;
  rp->add_option("--run", rp_run, "Run directory written by train")->required();
  rp->add_option("--out", rp_out, "Output directory")->required();

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    app.exit(e);
    std::cerr << '\n' << app.help();
    return kUsageError;
  }

  try {
    if (*gen) return gen_data(gen_seed, gen_scenes, gen_out, recipe);
    if (*tr) return train(tr_config, tr_resume, tr_out, tr_epochs, tr_data);
    if (*inf) return infer(inf_ckpt, inf_config, inf_data, inf_out);
    if (*ev) return eval(ev_ckpt, ev_config, ev_seed, ev_data, ev_out);
    if (*gc) return gradcheck(gc_seeds, gc_eps, gc_tol, gc_filter);
    if (*rp) return report(rp_run, rp_out);
  } catch (const UsageError& e) {
    std::cerr << "error: " << e.what() << '\n';
    return kUsageError;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << '\n';
    return kFailure;
  }
  return kFailure;
}
