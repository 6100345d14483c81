#include "mmdino/trainer.hpp"

#include <cmath>
#include <cstdio>
#include <exception>
#include <fstream>
#include <sstream>
#include <thread>

#include "mmdino/checkpoint.hpp"
#include "mmdino/queue.hpp"

namespace mmdino {

void TrainConfig::validate() const {
  if (epochs < 1 || steps_per_epoch < 1 || batch_size < 1) throw ConfigError("epochs, steps_per_epoch and batch_size must be positive");
  if (head_warmup_epochs < 0 || head_warmup_epochs >= epochs) throw ConfigError("head_warmup_epochs must lie in [0, epochs)");
  if (lr_warmup_epochs < 0 || teacher_temp_warmup_epochs < 0) throw ConfigError("warmup lengths must be non-negative");
  if (!(base_lr > 0) || !(min_lr >= 0) || min_lr > base_lr) throw ConfigError("need 0 <= min_lr <= base_lr, base_lr > 0");
  if (!(optim.beta1 >= 0 && optim.beta1 < 1 && optim.beta2 >= 0 && optim.beta2 < 1)) throw ConfigError("betas must lie in [0, 1)");
  if (!(optim.eps > 0) || !(optim.weight_decay >= 0)) throw ConfigError("bad optimizer eps / weight decay");
  if (!(ema_start >= 0 && ema_start <= 1 && ema_end >= 0 && ema_end <= 1)) throw ConfigError("EMA momenta must lie in [0, 1]");
  if (!(teacher_temp_start > 0)) throw ConfigError("teacher temperature must be positive");
  if (!(center_momentum >= 0 && center_momentum <= 1)) throw ConfigError("center momentum must lie in [0, 1]");
  if (!(supervised_weight >= 0)) throw ConfigError("supervised weight must be non-negative");
  if (!(label_smoothing >= 0 && label_smoothing < 1)) throw ConfigError("label smoothing must lie in [0, 1)");
  if (queue_capacity < 1) throw ConfigError("queue capacity must be positive");
}

TrainerState TrainerState::initialize(const Model& model, std::uint64_t seed) {
  return {ModelState::initialize(model, seed), AdamWState::zeros(model.layout()), 0};
}

Trainer::Trainer(const Model& model, TrainConfig cfg, MaskingPolicy masking, ViewConfig views,
                 std::vector<const SubjectRecord*> pool)
    : model_(model), cfg_(cfg), masking_(masking), views_(views), pool_(std::move(pool)) {
  cfg_.validate();
  masking_.validate();
  if (pool_.empty()) throw PreconditionError("no training subjects");
}

Batch Trainer::make_batch(std::int64_t step) const {
  std::seed_seq seq{static_cast<std::uint32_t>(cfg_.seed), static_cast<std::uint32_t>(cfg_.seed >> 32),
                    static_cast<std::uint32_t>(step), static_cast<std::uint32_t>(step >> 32), 0xBA7Cu};
  std::mt19937_64 rng(seq);
  std::uniform_int_distribution<size_t> pick(0, pool_.size() - 1);
  const PatchGrid grid = PatchGrid::for_image(views_.global_size, views_.global_size, model_.tokenizer().patch_size());

  Batch batch;
  batch.step = step;
  batch.items.reserve(cfg_.batch_size);
  for (int b = 0; b < cfg_.batch_size; ++b) {
    BatchItem item;
    item.subject = static_cast<int>(pick(rng));
    const SubjectRecord& rec = *pool_[item.subject];
    item.label = rec.label;
    item.crops = sample_training_view(rec, views_, rng);
    std::vector<int> present;
    for (int m = 0; m < static_cast<int>(rec.modalities.size()); ++m)
      if (rec.modalities[m]) present.push_back(m);
    const auto coords = model_.tokenizer().coords_for(present, grid);
    for (size_t g = 0; g < item.crops.global_crops.size(); ++g) item.plans.push_back(sample_plan(coords, masking_, rng));
    batch.items.push_back(std::move(item));
  }
  return batch;
}

StepOutput Trainer::compute(const TrainerState& state, const Batch& batch) const {
  const auto& layout = model_.layout();
  const auto& head = model_.config().head;
  const std::int64_t spe = cfg_.steps_per_epoch;
  StepOutput out;
  out.step = batch.step;
  out.lr = lr_at(batch.step, cfg_.total_steps(), cfg_.lr_warmup_epochs * spe, cfg_.base_lr, cfg_.min_lr);
  out.ema_momentum = ema_momentum_at(batch.step, cfg_.total_steps(), cfg_.ema_start, cfg_.ema_end);
  out.teacher_temp = teacher_temp_at(batch.step, cfg_.teacher_temp_warmup_epochs * spe, cfg_.teacher_temp_start,
                                     head.teacher_temp);
  out.heads_only = in_head_warmup(batch.step);
  out.grads.assign(layout.total(), 0);

  const std::span<const Real> student(state.model.student);
  const std::span<const Real> teacher(state.model.teacher);
  const Vec& center = state.model.center;
  const int B = static_cast<int>(batch.items.size());
  const int n_global = B ? static_cast<int>(batch.items[0].crops.global_crops.size()) : 0;
  out.teacher_logits = Mat::Zero(static_cast<Eigen::Index>(B) * n_global, model_.prototypes());

  std::vector<ItemLoss> items;
  items.reserve(B);
  for (int b = 0; b < B; ++b) {
    const BatchItem& item = batch.items[b];
    const auto& globals = item.crops.global_crops;
    const auto& locals = item.crops.local_crops;

    // Teacher: unmasked global crops only.
    std::vector<Vec> t_probs;
    std::vector<Mat> t_patch;
    for (size_t g = 0; g < globals.size(); ++g) {
      const auto tp = model_.forward(globals[g].images, nullptr, teacher, true, false);
      out.teacher_logits.row(b * n_global + g) = tp.image_logits.transpose();
      t_probs.push_back(prototype_scores(tp.image_logits, out.teacher_temp, &center).probs);
      t_patch.push_back(prototype_scores_rows(tp.patch_logits, out.teacher_temp));
    }

    // Student: masked globals (with patch logits), then unmasked locals.
    std::vector<Model::Pass> passes;
    std::vector<Vec> logits;
    for (size_t g = 0; g < globals.size(); ++g) {
      passes.push_back(model_.forward(globals[g].images, &item.plans[g], student, true, true));
      logits.push_back(passes.back().image_logits);
    }
    for (const auto& crop : locals) {
      passes.push_back(model_.forward(crop.images, nullptr, student, false, true));
      logits.push_back(passes.back().image_logits);
    }

    std::vector<ImageLevelTarget> targets;
    if (item.label) {
      targets.push_back(ImageLevelTarget::real(*item.label, model_.prototypes(), cfg_.label_smoothing));
    } else {
      for (size_t g = 0; g < globals.size(); ++g) targets.push_back(ImageLevelTarget::pseudo(t_probs[g], static_cast<int>(g)));
    }
    const LossWithGrad img = image_level_loss_grad(logits, head.student_temp, targets);

    ItemLoss il;
    il.labeled = item.label.has_value();
    (il.labeled ? il.supervised : il.image) = img.loss;
    const Real img_scale = static_cast<Real>((il.labeled ? cfg_.supervised_weight : 1.0) / B);
    const Real patch_scale = static_cast<Real>(1.0 / (static_cast<double>(B) * n_global));

    for (size_t c = 0; c < passes.size(); ++c) {
      Mat d_patch;
      if (c < globals.size() && item.plans[c].count() > 0) {
        const LossWithGrad pl = patch_level_loss_grad(passes[c].patch_logits, head.student_temp, t_patch[c], item.plans[c]);
        il.patch += pl.loss / n_global;
        d_patch = pl.d_patch_logits * patch_scale;
      }
      const Vec d_img = img.d_logits[c] * img_scale;
      model_.backward(passes[c], d_img, d_patch, student, out.grads, out.heads_only);
    }
    items.push_back(il);
  }
  out.loss = total_loss(items, cfg_.supervised_weight);

  if (!out.loss.finite()) {
    std::ostringstream msg;
    msg << "non-finite loss at step " << batch.step << ": image=" << out.loss.image_loss
        << " supervised=" << out.loss.supervised_loss << " patch=" << out.loss.patch_loss
        << " total=" << out.loss.total << "; grad norms embedding="
        << group_grad_norm(layout, out.grads, ParamGroup::embedding)
        << " encoder=" << group_grad_norm(layout, out.grads, ParamGroup::encoder)
        << " head=" << group_grad_norm(layout, out.grads, ParamGroup::head) << " lr=" << out.lr;
    throw NonFiniteLoss(msg.str());
  }
  return out;
}

UpdateStats Trainer::apply(TrainerState& state, const StepOutput& out) const {
  if (out.step != state.step) throw PreconditionError("step output does not belong to the current state");
  const std::array<bool, 3> groups = out.heads_only ? std::array<bool, 3>{false, false, true}
                                                    : std::array<bool, 3>{true, true, true};
  const UpdateStats stats =
      adamw_step(model_.layout(), state.model.student, out.grads, state.optim, out.lr, cfg_.optim, groups);
  if (!std::isfinite(stats.grad_norm)) throw NonFiniteLoss("non-finite gradient norm at step " + std::to_string(out.step));
  ema_update(state.model, out.ema_momentum);
  state.model.center = center_update(state.model.center, out.teacher_logits, cfg_.center_momentum);
  ++state.step;
  return stats;
}

namespace {

std::string metrics_row(const StepRecord& r) {
  char buf[256];
  std::snprintf(buf, sizeof(buf), "%lld,%.9g,%.9g,%.9g,%.9g", static_cast<long long>(r.step), r.loss.image_loss,
                r.loss.patch_loss, r.loss.supervised_loss, r.loss.total);
  return buf;
}

// Keeps header + rows for steps before `step` (a resumed run rewrites the tail).
void truncate_metrics(const std::filesystem::path& path, std::int64_t step) {
  std::vector<std::string> keep{kMetricsHeader};
  if (std::ifstream in(path); in) {
    std::string line;
    std::getline(in, line);
    while (std::getline(in, line)) {
      if (line.empty()) continue;
      if (std::stoll(line.substr(0, line.find(','))) < step) keep.push_back(line);
    }
  }
  std::ofstream out(path, std::ios::trunc);
  for (const auto& l : keep) out << l << '\n';
}

}  // namespace

std::vector<StepRecord> pretrain(const Model& model, const TrainConfig& cfg, const MaskingPolicy& masking,
                                 const ViewConfig& views, const Dataset& dataset, TrainerState& state,
                                 const PretrainOptions& opts) {
  const Trainer trainer(model, cfg, masking, views, dataset.split(Split::train));
  model.layout().check(state.model.student);
  std::int64_t end = cfg.total_steps();
  if (opts.max_steps >= 0) end = std::min(end, state.step + opts.max_steps);

  const bool write = !opts.out_dir.empty();
  std::ofstream metrics;
  if (write) {
    std::filesystem::create_directories(opts.out_dir);
    truncate_metrics(opts.out_dir / "metrics.csv", state.step);
    metrics.open(opts.out_dir / "metrics.csv", std::ios::app);
  }
  auto save = [&] {
    if (write) save_checkpoint(opts.out_dir / "checkpoint.safetensors", model.layout(), state, opts.config_text);
  };

  BoundedQueue<Batch> queue(cfg.queue_capacity);
  std::exception_ptr producer_error;
  const std::int64_t first = state.step;
  std::thread producer([&] {
    try {
      for (std::int64_t s = first; s < end; ++s)
        if (!queue.push(trainer.make_batch(s))) break;
    } catch (...) {
      producer_error = std::current_exception();
    }
    queue.close();
  });

  std::vector<StepRecord> records;
  try {
    while (state.step < end) {
      auto batch = queue.pop();
      if (!batch) break;
      const StepOutput out = trainer.compute(state, *batch);
      const UpdateStats stats = trainer.apply(state, out);
      StepRecord rec{out.step, out.loss, out.lr, stats.grad_norm};
      records.push_back(rec);
      if (write) metrics << metrics_row(rec) << '\n' << std::flush;
      if (opts.on_step) opts.on_step(rec);
      if (opts.checkpoint_each_epoch && state.step % cfg.steps_per_epoch == 0) save();
    }
  } catch (...) {
    queue.close();
    producer.join();
    throw;
  }
  queue.close();
  producer.join();
  if (producer_error) std::rethrow_exception(producer_error);
  if (state.step != end) throw Error("batch producer stopped early");
  if (!(opts.checkpoint_each_epoch && state.step % cfg.steps_per_epoch == 0) && state.step > first) save();
  return records;
}

}  // namespace mmdino
