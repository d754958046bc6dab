// SPDX-License-Identifier: Apache-2.0
#include "loretta/train.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <random>

namespace loretta {

void TrainConfig::validate() const {
  require(learning_rate >= 0.0 && std::isfinite(learning_rate), ErrorCode::InvalidArgument,
          "learning rate must be finite and >= 0");
  require(batch_size >= 1, ErrorCode::InvalidArgument, "batch size must be >= 1");
  require(eval_every >= 1, ErrorCode::InvalidArgument, "eval_every must be >= 1");
  require(rank >= 1, ErrorCode::InvalidArgument, "rank must be >= 1");
}

template <typename T>
EvalResult evaluate(const Encoder<T>& model, const Split& split, std::size_t batch_size) {
  EvalResult r;
  r.count = split.size();
  if (split.empty()) return r;
  std::size_t correct = 0;
  double loss_sum = 0.0;
  std::vector<std::uint32_t> labels;
  std::vector<std::size_t> idx;
  for (std::size_t start = 0; start < split.size(); start += batch_size) {
    const std::size_t end = std::min(split.size(), start + batch_size);
    idx.resize(end - start);
    std::iota(idx.begin(), idx.end(), start);
    const TokenBatch batch = make_batch(split, idx, labels);
    ad::Tape<T> tape;
    tape.set_grad_enabled(false);
    const ad::Var<T> logits = model.forward(tape, batch);
    const ad::Var<T> loss = ad::cross_entropy(logits, std::span<const std::uint32_t>(labels));
    loss_sum += static_cast<double>(loss.value()[0]) * static_cast<double>(idx.size());
    const Tensor<T>& lv = logits.value();
    const std::size_t c = lv.cols();
    for (std::size_t i = 0; i < idx.size(); ++i) {
      const T* row = lv.data() + i * c;
      const auto arg = static_cast<std::size_t>(std::max_element(row, row + c) - row);
      if (arg == labels[i]) ++correct;
    }
  }
  r.accuracy = static_cast<double>(correct) / static_cast<double>(split.size());
  r.mean_loss = loss_sum / static_cast<double>(split.size());
  return r;
}

template <typename T>
TrainHistory train(Encoder<T>& model, const SyntheticDataset& data, const TrainConfig& config) {
  config.validate();
  require(!data.train.empty(), ErrorCode::InvalidArgument, "training split is empty");
  std::vector<Parameter<T>*> params = model.trainable_parameters();
  require(!params.empty(), ErrorCode::NothingTrainable, "model has no trainable parameters");

  AdamWConfig oc;
  oc.learning_rate = config.learning_rate;
  oc.weight_decay = config.weight_decay;
  AdamW<T> opt(params, oc);

  TrainHistory h;
  h.losses.reserve(config.steps);
  std::mt19937_64 rng(config.seed);
  std::vector<std::size_t> order(data.train.size());
  std::iota(order.begin(), order.end(), std::size_t{0});
  std::shuffle(order.begin(), order.end(), rng);
  std::size_t cursor = 0;
  std::vector<std::size_t> idx;
  std::vector<std::uint32_t> labels;
  std::vector<const Tensor<T>*> grads(params.size());
  bool have_best = false;

  auto checkpoint_if_best = [&](std::size_t step) {
    const EvalResult v = evaluate(model, data.val.empty() ? data.train : data.val);
    h.evals.push_back({step, v.mean_loss, v.accuracy});
    if (!have_best || v.mean_loss < h.best_val_loss) {
      have_best = true;
      h.best_val_loss = v.mean_loss;
      h.best_step = step;
      h.best = export_trainables(model.groups(), dtype_of<T>());
    }
  };

  for (std::size_t step = 1; step <= config.steps; ++step) {
    idx.clear();
    while (idx.size() < config.batch_size) {
      if (cursor == order.size()) {
        std::shuffle(order.begin(), order.end(), rng);
        cursor = 0;
      }
      idx.push_back(order[cursor++]);
    }
    const TokenBatch batch = make_batch(data.train, idx, labels);
    ad::Tape<T> tape;
    const ad::Var<T> loss =
        ad::cross_entropy(model.forward(tape, batch), std::span<const std::uint32_t>(labels));
    const double lv = static_cast<double>(loss.value()[0]);
    require(std::isfinite(lv), ErrorCode::NonFiniteLoss,
            "loss became " + std::to_string(lv) + " at step " + std::to_string(step));
    h.losses.push_back(lv);
    tape.backward(loss);
    for (std::size_t i = 0; i < params.size(); ++i) grads[i] = tape.grad_of(*params[i]);
    opt.step(grads);
    if (step % config.eval_every == 0 || step == config.steps) checkpoint_if_best(step);
  }
  if (config.steps == 0) checkpoint_if_best(0);
  h.final_train = evaluate(model, data.train);
  h.final_val = evaluate(model, data.val);
  return h;
}

template <typename T>
std::unique_ptr<Encoder<T>> make_model(EncoderConfig arch, Method method, std::size_t rank,
                                       std::size_t bottleneck, std::uint64_t seed) {
  arch.classifier_rank = rank;
  auto model = build_encoder<T>(arch);
  InjectionOptions opts = default_injection(method, rank);
  if (bottleneck > 0) opts.bottleneck = bottleneck;
  opts.seed = seed;
  inject_method(*model, method, opts);
  apply_freezing_policy(*model, FreezingPolicy::for_method(method, arch));
  return model;
}

ModelGradCheck check_model_gradients(const ModelGradCheckConfig& config) {
  auto model = make_model<double>(config.arch, config.method, config.rank, config.bottleneck,
                                  config.seed);
  std::mt19937_64 rng(config.seed);

  TokenBatch batch;
  batch.batch = config.batch;
  batch.seq = config.seq;
  std::uniform_int_distribution<std::uint32_t> token(
      0, static_cast<std::uint32_t>(config.arch.vocab - 1));
  for (std::size_t i = 0; i < config.batch * config.seq; ++i) batch.ids.push_back(token(rng));
  std::vector<std::uint32_t> labels;
  for (std::size_t i = 0; i < config.batch; ++i)
    labels.push_back(static_cast<std::uint32_t>(i % config.arch.num_classes));

  const Encoder<double>& m = *model;
  const LossFn f = [&m, &batch, &labels](ad::Tape<double>& tape) {
    return ad::cross_entropy(m.forward(tape, batch), std::span<const std::uint32_t>(labels));
  };

  std::vector<Parameter<double>*> params = model->trainable_parameters();
  std::vector<Tensor<double>> base;
  for (const auto* p : params) base.push_back(p->value);
  std::normal_distribution<double> jitter(0.0, config.jitter);

  ModelGradCheck out;
  for (out.draws = 1; out.draws <= config.max_draws; ++out.draws) {
    for (std::size_t i = 0; i < params.size(); ++i) {
      params[i]->value = base[i];
      for (auto& v : params[i]->value.values()) v += jitter(rng);
    }
    ad::Tape<double> tape;
    tape.set_grad_enabled(false);
    f(tape);
    out.relu_margin = tape.relu_margin();
    if (out.relu_margin >= config.kink_margin) {
      out.report = grad_check(f, params, config.options);
      return out;
    }
  }
  fail(ErrorCode::InvalidConfig, "no jitter draw keeps every relu input " +
                                     std::to_string(config.kink_margin) + " away from zero");
}

template EvalResult evaluate(const Encoder<float>&, const Split&, std::size_t);
template EvalResult evaluate(const Encoder<double>&, const Split&, std::size_t);
template TrainHistory train(Encoder<float>&, const SyntheticDataset&, const TrainConfig&);
template TrainHistory train(Encoder<double>&, const SyntheticDataset&, const TrainConfig&);
template std::unique_ptr<Encoder<float>> make_model(EncoderConfig, Method, std::size_t,
                                                    std::size_t, std::uint64_t);
template std::unique_ptr<Encoder<double>> make_model(EncoderConfig, Method, std::size_t,
                                                     std::size_t, std::uint64_t);

}  // namespace loretta
