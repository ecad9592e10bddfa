#pragma once

#include <string>
#include <vector>

#include "fedseg/optim.hpp"
#include "fedseg/rng.hpp"
#include "fedseg/scenegen.hpp"
#include "fedseg/segmodel.hpp"
#include "fedseg/set_loss.hpp"

namespace fedseg {

// Supervised set-loss training loop shared by client training and the
// FedAvg fine-tuning baseline. Mutates `model` in place; returns the
// per-iteration total loss.
inline std::vector<double> train_on_dataset(SegModel& model, const DomainDataset& data,
                                            const TrainConfig& cfg, uint64_t seed) {
  cfg.validate();
  if (!data.labeled) throw ContractError("train_on_dataset: dataset is unlabeled");
  if (data.scenes.empty()) throw ContractError("train_on_dataset: empty dataset");
  if (data.height != model.config.height || data.width != model.config.width)
    throw ShapeError("train_on_dataset: dataset resolution does not match model config");
  if (data.num_classes != model.config.num_classes)
    throw ContractError("train_on_dataset: class count mismatch");

  int hp = model.config.feat_h(), wp = model.config.feat_w();
  std::vector<GTSegments> segments(data.scenes.size());
  std::vector<char> have(data.scenes.size(), 0);

  NamedParams params = model.named_params();
  AdamWConfig opt_cfg;
  opt_cfg.lr = cfg.lr;
  AdamWState opt = make_adamw(params, opt_cfg);

  Rng rng(derive_seed(seed, "train_loop"));
  std::vector<double> curve;
  curve.reserve(cfg.iterations);

  for (int it = 0; it < cfg.iterations; ++it) {
    GradTape tape;
    TapeScope scope(tape);
    Tensor batch_loss = Tensor::scalar(0.0);
    for (int b = 0; b < cfg.batch_size; ++b) {
      int idx = rng.uniform_int(0, static_cast<int>(data.scenes.size()) - 1);
      if (!have[idx]) {
        segments[idx] =
            extract_segments(*data.scenes[idx].labels, model.config.num_classes, hp, wp);
        have[idx] = 1;
      }
      LogitPair lp = model_forward(model, data.scenes[idx].image);
      batch_loss = add(batch_loss, set_loss(lp, segments[idx], cfg).total);
    }
    batch_loss = scalar_mul(batch_loss, 1.0 / cfg.batch_size);
    curve.push_back(batch_loss.item());
    GradMap gm = tape.backward(batch_loss);
    adamw_step(params, grads_by_name(params, gm), opt);
  }
  return curve;
}

// Trains a fresh client model on its local labeled domain.
inline SegModel train_client(const DomainDataset& data, const SegModelConfig& model_cfg,
                             const TrainConfig& train_cfg, uint64_t seed) {
  SegModel model = init_model(model_cfg, derive_seed(seed, "client_init"));
  train_on_dataset(model, data, train_cfg, derive_seed(seed, "client_train"));
  return model;
}

}  // namespace fedseg
