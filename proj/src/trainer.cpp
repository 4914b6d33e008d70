#include "mit/trainer.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <numeric>
#include <sstream>

#include "mit/errors.hpp"
#include "mit/parallel.hpp"

namespace mit {

namespace {

// Offset keeping the data-order stream apart from parameter initialisation.
constexpr std::uint64_t kOrderStream = 0x5DEECE66DULL;

std::string rng_text(const Rng& rng) {
  std::ostringstream os;
  os << rng;
  return os.str();
}

Rng rng_from_text(const std::string& text) {
  Rng rng;
  std::istringstream is(text);
  is >> rng;
  if (!is) throw CheckpointError("training RNG state is unreadable");
  return rng;
}

struct SceneStep {
  double loss = 0.0;
  LossBreakdown parts;
  std::map<std::string, Tensor> grads;
};

void dump_batch(const std::filesystem::path& path, const Checkpoint& state, const std::vector<const Scene*>& batch,
                const std::vector<std::vector<std::size_t>>& views, const std::vector<SceneStep>& steps) {
  std::ofstream f(path);
  f << "epoch\t" << state.epoch << "\nstep\t" << state.optimizer.step + 1 << '\n';
  f << "scene\tviews\tloss\tencoder\tdecoder\tcontrastive\n";
  for (std::size_t i = 0; i < batch.size(); ++i) {
    f << batch[i]->id << '\t';
    for (std::size_t k = 0; k < views[i].size(); ++k) f << (k ? "," : "") << views[i][k];
    f << '\t' << steps[i].loss << '\t' << steps[i].parts.encoder << '\t' << steps[i].parts.decoder << '\t'
      << steps[i].parts.contrastive << '\n';
  }
}

}  // namespace

AdamWSettings optimizer_settings(const Config& cfg) {
  return {cfg.learning_rate, cfg.weight_decay, cfg.beta1, cfg.beta2, cfg.adam_eps};
}

Checkpoint initial_state(const Config& cfg, const std::vector<std::string>& class_names) {
  Checkpoint ck;
  ck.config = cfg;
  ck.class_names = class_names;
  ck.params = init_parameters(cfg, class_names.size(), cfg.seed);
  ck.rng_state = rng_text(Rng(cfg.seed ^ kOrderStream));
  return ck;
}

Trainer::Trainer(Config cfg, const Dataset& train, const Dataset* val) : cfg_(std::move(cfg)), train_(&train), val_(val) {
  validate(cfg_);
  if (train.scenes.empty()) throw InputError("trainer: the training set has no scenes");
  for (const auto& s : train.scenes) validate_scene(s, train.num_classes());
  prepared_.resize(train.scenes.size());
  parallel_for(train.scenes.size(), [&](std::size_t i) { prepared_[i] = prepare_scene(train.scenes[i], cfg_); });
}

void Trainer::run_epoch(Checkpoint& state, TrainLog& log) const {
  Rng rng = rng_from_text(state.rng_state);
  const std::size_t n = train_->scenes.size();
  const std::size_t classes = train_->num_classes();
  std::vector<std::size_t> order(n);
  std::iota(order.begin(), order.end(), std::size_t{0});
  std::shuffle(order.begin(), order.end(), rng);

  const AdamWSettings opt = optimizer_settings(cfg_);
  double epoch_loss = 0.0;
  for (std::size_t begin = 0; begin < n; begin += cfg_.batch_size) {
    const std::size_t end = std::min(n, begin + cfg_.batch_size);
    const std::size_t bs = end - begin;
    std::vector<std::vector<std::size_t>> views(bs);
    for (std::size_t i = 0; i < bs; ++i) {
      if (cfg_.three_d_only) continue;
      const Scene& s = train_->scenes[order[begin + i]];
      std::vector<std::size_t> all(s.views.size());
      std::iota(all.begin(), all.end(), std::size_t{0});
      std::shuffle(all.begin(), all.end(), rng);
      all.resize(std::min(cfg_.views, all.size()));
      views[i] = std::move(all);
    }

    std::vector<SceneStep> steps(bs);
    parallel_for(bs, [&](std::size_t i) {
      const PreparedScene& ps = prepared_[order[begin + i]];
      Bindings b(state.params, true);
      const ForwardPass fp = forward(b, cfg_, classes, ps, views[i]);
      LossBreakdown parts = model_loss(fp, cfg_, ps.scene->tags);
      steps[i].loss = parts.total.item();
      if (std::isfinite(steps[i].loss)) {
        backward(parts.total);
        steps[i].grads = b.gradients();
      }
      steps[i].parts = std::move(parts);
      steps[i].parts.total = Var();
    });

    bool finite = true;
    for (const auto& st : steps) finite = finite && std::isfinite(st.loss);
    if (!finite) {
      std::vector<const Scene*> batch;
      for (std::size_t i = 0; i < bs; ++i) batch.push_back(&train_->scenes[order[begin + i]]);
      std::string where;
      if (dump_path_) {
        dump_batch(*dump_path_, state, batch, views, steps);
        where = "; batch written to " + dump_path_->string();
      }
      std::string ids;
      for (std::size_t i = 0; i < bs; ++i) {
        if (std::isfinite(steps[i].loss)) continue;
        ids += (ids.empty() ? "" : ", ") + batch[i]->id;
      }
      throw TrainingError("non-finite loss at epoch " + std::to_string(state.epoch) + ", step " +
                          std::to_string(state.optimizer.step + 1) + " (scenes " + ids + ")" + where);
    }

    std::map<std::string, Tensor> grads;
    StepRecord rec;
    rec.epoch = state.epoch;
    const double inv = 1.0 / static_cast<double>(bs);
    for (const auto& st : steps) {
      for (const auto& [name, g] : st.grads) {
        auto [it, inserted] = grads.try_emplace(name, g.shape(), 0.0);
        Tensor& acc = it->second;
        for (std::size_t k = 0; k < g.numel(); ++k) acc[k] += g[k] * inv;
      }
      rec.loss += st.loss * inv;
      rec.encoder += st.parts.encoder * inv;
      rec.decoder += st.parts.decoder * inv;
      rec.contrastive += st.parts.contrastive * inv;
    }
    adamw_step(state.params, grads, state.optimizer, opt);
    rec.step = state.optimizer.step;
    log.steps.push_back(rec);
    epoch_loss += rec.loss * static_cast<double>(bs);
  }

  state.rng_state = rng_text(rng);
  ++state.epoch;
  EpochRecord er{state.epoch, epoch_loss / static_cast<double>(n), std::nullopt};
  if (val_ && cfg_.eval_every > 0 && state.epoch % cfg_.eval_every == 0) {
    er.val_miou = evaluate(state.params, cfg_, *val_).miou.mean;
  }
  log.epochs.push_back(er);
}

void Trainer::train(Checkpoint& state, std::uint64_t target_epochs, TrainLog& log,
                    const std::function<void(const Checkpoint&, const EpochRecord&)>& on_epoch) const {
  while (state.epoch < target_epochs) {
    run_epoch(state, log);
    if (on_epoch) on_epoch(state, log.epochs.back());
  }
}

std::uint64_t parameter_hash(const ParameterStore& params, const std::function<bool(const std::string&)>& select) {
  std::uint64_t h = 1469598103934665603ULL;
  auto mix = [&h](const void* data, std::size_t len) {
    const auto* p = static_cast<const unsigned char*>(data);
    for (std::size_t i = 0; i < len; ++i) {
      h ^= p[i];
      h *= 1099511628211ULL;
    }
  };
  for (const auto& [name, t] : params.all()) {
    if (!select(name)) continue;
    mix(name.data(), name.size());
    mix(t.data(), t.numel() * sizeof(double));
  }
  return h;
}

void write_step_log(const TrainLog& log, const std::filesystem::path& path) {
  std::ofstream f(path);
  if (!f) throw InputError("cannot write " + path.string());
  f.precision(17);
  f << "epoch\tstep\tloss\tencoder\tdecoder\tcontrastive\n";
  for (const auto& s : log.steps) {
    f << s.epoch << '\t' << s.step << '\t' << s.loss << '\t' << s.encoder << '\t' << s.decoder << '\t' << s.contrastive
      << '\n';
  }
}

void write_epoch_log(const TrainLog& log, const std::filesystem::path& path) {
  std::ofstream f(path);
  if (!f) throw InputError("cannot write " + path.string());
  f.precision(17);
  f << "epoch\tmean_loss\tval_miou\n";
  for (const auto& e : log.epochs) {
    f << e.epoch << '\t' << e.mean_loss << '\t';
    if (e.val_miou) f << *e.val_miou;
    f << '\n';
  }
}

}  // namespace mit
