// SPDX-License-Identifier: Apache-2.0
#include "loretta/encoder.hpp"

#include <cmath>
#include <random>

namespace loretta {

std::string to_string(ClassifierMode mode) {
  switch (mode) {
    case ClassifierMode::Dense: return "dense";
    case ClassifierMode::Tensorized: return "tensorized";
    case ClassifierMode::Frozen: return "frozen";
  }
  return "?";
}

std::string to_string(Method method) {
  switch (method) {
    case Method::Adp: return "adp";
    case Method::Rep: return "rep";
    case Method::Lora: return "lora";
    case Method::Adapter: return "adapter";
    case Method::Ft: return "ft";
  }
  return "?";
}

ClassifierMode parse_classifier_mode(const std::string& s) {
  if (s == "dense") return ClassifierMode::Dense;
  if (s == "tensorized") return ClassifierMode::Tensorized;
  if (s == "frozen") return ClassifierMode::Frozen;
  fail(ErrorCode::InvalidConfig, "unknown classifier mode '" + s + "'");
}

Method parse_method(const std::string& s) {
  if (s == "adp") return Method::Adp;
  if (s == "rep") return Method::Rep;
  if (s == "lora") return Method::Lora;
  if (s == "adapter") return Method::Adapter;
  if (s == "ft") return Method::Ft;
  fail(ErrorCode::InvalidConfig, "unknown method '" + s + "'");
}

void EncoderConfig::validate() const {
  require(layers >= 1 && hidden >= 1 && heads >= 1 && ffn_mult >= 1 && vocab >= 1 &&
              max_seq >= 1 && num_classes >= 1,
          ErrorCode::InvalidConfig, "all encoder sizes must be >= 1");
  require(hidden % heads == 0, ErrorCode::InvalidConfig,
          "hidden " + std::to_string(hidden) + " is not divisible by " + std::to_string(heads) +
              " heads");
  require(hidden >= 2, ErrorCode::InvalidConfig, "hidden must be >= 2 to tensorize the pooler");
  require(classifier_rank >= 1, ErrorCode::InvalidConfig, "classifier rank must be >= 1");
  require(init_std > 0.0 && std::isfinite(init_std), ErrorCode::InvalidConfig,
          "init_std must be positive");
}

EncoderConfig EncoderConfig::toy() { return EncoderConfig{}; }

EncoderConfig EncoderConfig::deberta_base_like() {
  EncoderConfig c;
  c.layers = 12;
  c.hidden = 768;
  c.heads = 12;
  c.ffn_mult = 4;
  c.vocab = 50265;
  c.max_seq = 512;
  c.num_classes = 2;
  c.materialize = false;
  return c;
}

FreezingPolicy FreezingPolicy::for_method(Method method, const EncoderConfig& config) {
  FreezingPolicy p;
  p.train_peft = method != Method::Ft;
  p.train_layernorm = config.layernorm_trainable || method == Method::Ft;
  p.train_classifier = config.classifier != ClassifierMode::Frozen;
  p.train_base = method == Method::Ft;
  return p;
}

InjectionOptions default_injection(Method method, std::size_t rank) {
  InjectionOptions o;
  o.rank = rank;
  o.bottleneck = method == Method::Rep ? 8 : 64;
  return o;
}

// ---------------------------------------------------------------- build

namespace {

template <typename T>
Parameter<T> make_param(std::string name, Shape shape, ParamKind kind, ParamRole role,
                        bool materialize, double std, T fill, std::mt19937_64* rng) {
  if (!materialize) return Parameter<T>::meta(std::move(name), std::move(shape), kind, role);
  Tensor<T> v(shape, fill);
  if (rng) {
    std::normal_distribution<double> normal(0.0, std);
    for (auto& x : v.values()) x = static_cast<T>(normal(*rng));
  }
  return Parameter<T>(std::move(name), std::move(v), kind, role);
}

template <typename T>
TTWeight<T> make_tt(std::string name, std::size_t rows, std::size_t cols, std::size_t rank,
                    const ShapeRegistry& registry, double target_std, std::mt19937_64& rng,
                    ParamRole role, bool materialize) {
  const TTShape shape = registry.lookup(rows, cols);
  const TTRanks ranks = TTRanks::fixed(shape.order(), rank);
  if (!materialize) return TTWeight<T>::meta(std::move(name), shape, ranks, rows, cols, role);
  const double sigma = matched_factor_sigma(shape, ranks, target_std);
  return TTWeight<T>::gaussian(std::move(name), shape, ranks, rows, cols, sigma, rng, role);
}

}  // namespace

template <typename T>
UpdatedLinear<T>* EncoderLayer<T>::projection(const std::string& target) {
  if (target == "q") return &q;
  if (target == "k") return &k;
  if (target == "v") return &v;
  if (target == "o") return &o;
  fail(ErrorCode::UnknownTarget, "unknown projection '" + target + "' (expected q, k, v or o)");
}

template <typename T>
Encoder<T>::Encoder(const EncoderConfig& config, const ShapeRegistry& registry)
    : config_(config), registry_(registry) {
  config_.validate();
  const bool mat = config_.materialize;
  const double sd = config_.init_std;
  const std::size_t h = config_.hidden;
  const std::size_t f = config_.ffn_mult * h;
  std::mt19937_64 rng(config_.seed);

  token_embedding = make_param<T>("embed.tokens", {config_.vocab, h}, ParamKind::Weight,
                                  ParamRole::Base, mat, sd, T{0}, &rng);
  position_embedding = make_param<T>("embed.positions", {config_.max_seq, h}, ParamKind::Weight,
                                     ParamRole::Base, mat, sd, T{0}, &rng);
  for (std::size_t i = 0; i < config_.layers; ++i) {
    auto layer = std::make_unique<EncoderLayer<T>>();
    const std::string p = "layers." + std::to_string(i) + ".";
    auto norm = [&](const std::string& n, T fill) {
      return make_param<T>(p + n, {h}, ParamKind::Norm, ParamRole::LayerNorm, mat, 0.0, fill,
                           nullptr);
    };
    layer->ln1_gain = norm("ln1.gain", T{1});
    layer->ln1_offset = norm("ln1.offset", T{0});
    layer->ln2_gain = norm("ln2.gain", T{1});
    layer->ln2_offset = norm("ln2.offset", T{0});
    auto dense = [&](const std::string& n, std::size_t out, std::size_t in) {
      return DenseLinear<T>::init(p + n, out, in, true, sd, rng, ParamRole::Base, mat);
    };
    layer->q = UpdatedLinear<T>(dense("attn.q", h, h));
    layer->k = UpdatedLinear<T>(dense("attn.k", h, h));
    layer->v = UpdatedLinear<T>(dense("attn.v", h, h));
    layer->o = UpdatedLinear<T>(dense("attn.o", h, h));
    layer->fc1 = dense("ffn.fc1", f, h);
    layer->fc2 = dense("ffn.fc2", h, f);
    layers_.push_back(std::move(layer));
  }
  final_gain = make_param<T>("final_ln.gain", {h}, ParamKind::Norm, ParamRole::LayerNorm, mat,
                             0.0, T{1}, nullptr);
  final_offset = make_param<T>("final_ln.offset", {h}, ParamKind::Norm, ParamRole::LayerNorm, mat,
                               0.0, T{0}, nullptr);

  if (config_.classifier == ClassifierMode::Tensorized) {
    TTWeight<T> w = make_tt<T>("classifier.pooler", h, h, config_.classifier_rank, registry_, sd,
                               rng, ParamRole::Classifier, mat);
    auto pool = std::make_unique<TTLinear<T>>(std::move(w), std::nullopt, ParamRole::Classifier);
    pool->bias = make_param<T>("classifier.pooler.bias", {h}, ParamKind::Bias,
                               ParamRole::Classifier, mat, 0.0, T{0}, nullptr);
    pooler = std::move(pool);
  } else {
    pooler = std::make_unique<DenseLinear<T>>(DenseLinear<T>::init(
        "classifier.pooler", h, h, true, sd, rng, ParamRole::Classifier, mat));
  }
  class_head = DenseLinear<T>::init("classifier.head", config_.num_classes, h, true, sd, rng,
                                    ParamRole::Classifier, mat);
}

template <typename T>
ad::Var<T> Encoder<T>::forward(ad::Tape<T>& tape, const TokenBatch& tokens) const {
  const std::size_t b = tokens.batch, s = tokens.seq, h = config_.hidden;
  require(b >= 1 && s >= 1 && tokens.ids.size() == b * s, ErrorCode::InvalidArgument,
          "token batch holds " + std::to_string(tokens.ids.size()) + " ids for " +
              std::to_string(b) + "x" + std::to_string(s));
  require(s <= config_.max_seq, ErrorCode::SequenceTooLong,
          "sequence length " + std::to_string(s) + " exceeds max_seq " +
              std::to_string(config_.max_seq));
  for (std::uint32_t id : tokens.ids)
    require(id < config_.vocab, ErrorCode::TokenOutOfRange,
            "token id " + std::to_string(id) + " >= vocab " + std::to_string(config_.vocab));
  require(token_embedding.materialized(), ErrorCode::InvalidConfig,
          "shape-only model cannot run forward");

  std::vector<std::uint32_t> positions(b * s);
  for (std::size_t i = 0; i < b * s; ++i) positions[i] = static_cast<std::uint32_t>(i % s);
  ad::Var<T> x = ad::add(ad::embedding(tape.param(token_embedding), tokens.ids),
                         ad::embedding(tape.param(position_embedding), positions));

  const std::size_t nh = config_.heads, dh = h / nh;
  const T inv_sqrt = T{1} / std::sqrt(static_cast<T>(dh));
  for (const auto& layer : layers_) {
    ad::Var<T> n1 = ad::layer_norm(x, tape.param(layer->ln1_gain), tape.param(layer->ln1_offset));
    ad::Var<T> q = layer->q.apply(tape, n1);
    ad::Var<T> k = layer->k.apply(tape, n1);
    ad::Var<T> v = layer->v.apply(tape, n1);
    std::vector<ad::Var<T>> heads;
    for (std::size_t i = 0; i < nh; ++i) {
      auto split = [&](ad::Var<T> m) {
        return ad::reshape(ad::slice_last(m, i * dh, (i + 1) * dh), Shape{b, s, dh});
      };
      ad::Var<T> scores = ad::scale(ad::matmul(split(q), ad::transpose(split(k))), inv_sqrt);
      ad::Var<T> ctx = ad::matmul(ad::softmax(scores), split(v));
      heads.push_back(ad::reshape(ctx, Shape{b * s, dh}));
    }
    ad::Var<T> attn = layer->o.apply(tape, nh == 1 ? heads[0] : ad::concat_last<T>(heads));
    if (layer->attn_adapter) attn = layer->attn_adapter->apply(tape, attn);
    x = ad::add(x, attn);

    ad::Var<T> n2 = ad::layer_norm(x, tape.param(layer->ln2_gain), tape.param(layer->ln2_offset));
    ad::Var<T> ffn = layer->fc2.apply(tape, ad::gelu(layer->fc1.apply(tape, n2)));
    if (layer->ffn_adapter) ffn = layer->ffn_adapter->apply(tape, ffn);
    x = ad::add(x, ffn);
  }
  x = ad::layer_norm(x, tape.param(final_gain), tape.param(final_offset));
  ad::Var<T> pooled = ad::mean_tokens(ad::reshape(x, Shape{b, s, h}));
  ad::Var<T> p = ad::gelu(pooler->apply(tape, pooled));
  return class_head.apply(tape, p);
}

template <typename T>
Tensor<T> Encoder<T>::logits(const TokenBatch& tokens) const {
  ad::Tape<T> tape;
  tape.set_grad_enabled(false);
  return tape.value(forward(tape, tokens));
}

template <typename T>
std::vector<ParamGroup<T>> Encoder<T>::groups() {
  std::vector<ParamGroup<T>> g;
  auto append = [&g](std::vector<ParamGroup<T>> more) {
    for (auto& x : more) g.push_back(std::move(x));
  };
  g.push_back(dense_group(token_embedding));
  g.push_back(dense_group(position_embedding));
  for (auto& layer : layers_) {
    g.push_back(dense_group(layer->ln1_gain));
    g.push_back(dense_group(layer->ln1_offset));
    append(layer->q.groups());
    append(layer->k.groups());
    append(layer->v.groups());
    append(layer->o.groups());
    if (layer->attn_adapter) append(layer->attn_adapter->groups());
    g.push_back(dense_group(layer->ln2_gain));
    g.push_back(dense_group(layer->ln2_offset));
    append(layer->fc1.groups());
    append(layer->fc2.groups());
    if (layer->ffn_adapter) append(layer->ffn_adapter->groups());
  }
  g.push_back(dense_group(final_gain));
  g.push_back(dense_group(final_offset));
  append(pooler->groups());
  append(class_head.groups());
  return g;
}

template <typename T>
std::vector<Parameter<T>*> Encoder<T>::parameters() {
  std::vector<Parameter<T>*> out;
  for (auto& g : groups())
    for (auto* p : g.parts) out.push_back(p);
  return out;
}

template <typename T>
std::vector<Parameter<T>*> Encoder<T>::trainable_parameters() {
  std::vector<Parameter<T>*> out;
  for (auto* p : parameters())
    if (p->trainable) out.push_back(p);
  return out;
}

template <typename T>
ParamReport Encoder<T>::report() {
  return trainable_param_report(groups());
}

template <typename T>
void Encoder<T>::mark_injected(Method m) {
  require(!injected_, ErrorCode::AlreadyInjected,
          "model already carries " + to_string(*injected_) + " modules");
  injected_ = m;
}

template <typename T>
std::unique_ptr<Encoder<T>> build_encoder(const EncoderConfig& config) {
  return std::make_unique<Encoder<T>>(config, ShapeRegistry::builtin(config.classifier_layout));
}

template <typename T>
std::unique_ptr<Encoder<T>> build_encoder(const EncoderConfig& config,
                                          const ShapeRegistry& registry) {
  return std::make_unique<Encoder<T>>(config, registry);
}

// ---------------------------------------------------------------- injection

namespace {

void check_options(const InjectionOptions& o) {
  require(o.rank >= 1, ErrorCode::InvalidConfig, "rank must be >= 1");
  require(o.bottleneck >= 1, ErrorCode::InvalidConfig, "bottleneck must be >= 1");
}

template <typename T>
std::vector<UpdatedLinear<T>*> targeted(EncoderLayer<T>& layer, const InjectionOptions& o) {
  require(!o.targets.empty(), ErrorCode::UnknownTarget, "no projection targets given");
  std::vector<UpdatedLinear<T>*> out;
  for (const auto& t : o.targets) out.push_back(layer.projection(t));
  return out;
}

template <typename T>
void validate_targets(Encoder<T>& model, const InjectionOptions& o) {
  // Resolve every name before mutating anything.
  if (!model.layers().empty()) targeted(*model.layers().front(), o);
}

template <typename T>
std::unique_ptr<TensorizedAdapter<T>> make_tt_adapter(const std::string& name, std::size_t hidden,
                                                      const InjectionOptions& o,
                                                      const Encoder<T>& model,
                                                      std::mt19937_64& rng) {
  const auto& cfg = model.config();
  const bool mat = cfg.materialize;
  const std::size_t b = o.bottleneck;
  TTWeight<T> down = make_tt<T>(name + ".down", b, hidden, o.rank, model.registry(), cfg.init_std,
                                rng, ParamRole::Peft, mat);
  TTWeight<T> up = make_tt<T>(name + ".up", hidden, b, o.rank, model.registry(), cfg.init_std, rng,
                              ParamRole::Peft, mat);
  if (mat) up.factors().back().value.fill(T{0});
  std::optional<Tensor<T>> down_bias, up_bias;
  if (mat) {
    down_bias = Tensor<T>(Shape{b});
    up_bias = Tensor<T>(Shape{hidden});
  }
  TTLinear<T> d(std::move(down), down_bias, ParamRole::Peft);
  TTLinear<T> u(std::move(up), up_bias, ParamRole::Peft);
  if (!mat) {
    d.bias = Parameter<T>::meta(name + ".down.bias", {b}, ParamKind::Bias, ParamRole::Peft);
    u.bias = Parameter<T>::meta(name + ".up.bias", {hidden}, ParamKind::Bias, ParamRole::Peft);
  }
  return std::make_unique<TensorizedAdapter<T>>(std::move(d), std::move(u), o.activation);
}

}  // namespace

template <typename T>
void inject_adapters(Encoder<T>& model, const InjectionOptions& o) {
  check_options(o);
  model.mark_injected(Method::Adp);
  std::mt19937_64 rng(o.seed);
  const std::size_t h = model.config().hidden;
  for (std::size_t i = 0; i < model.layers().size(); ++i) {
    auto& layer = *model.layers()[i];
    const std::string p = "layers." + std::to_string(i) + ".";
    layer.attn_adapter = make_tt_adapter<T>(p + "attn_adapter", h, o, model, rng);
    layer.ffn_adapter = make_tt_adapter<T>(p + "ffn_adapter", h, o, model, rng);
  }
}

template <typename T>
void inject_dense_adapters(Encoder<T>& model, const InjectionOptions& o) {
  check_options(o);
  model.mark_injected(Method::Adapter);
  std::mt19937_64 rng(o.seed);
  const auto& cfg = model.config();
  const std::size_t h = cfg.hidden, b = o.bottleneck;
  for (std::size_t i = 0; i < model.layers().size(); ++i) {
    auto& layer = *model.layers()[i];
    auto make = [&](const std::string& name) {
      auto down = DenseLinear<T>::init(name + ".down", b, h, true, cfg.init_std, rng,
                                       ParamRole::Peft, cfg.materialize);
      auto up = DenseLinear<T>::init(name + ".up", h, b, true, cfg.init_std, rng, ParamRole::Peft,
                                     cfg.materialize);
      if (cfg.materialize) up.weight.value.fill(T{0});
      return std::make_unique<DenseAdapter<T>>(std::move(down), std::move(up), o.activation);
    };
    const std::string p = "layers." + std::to_string(i) + ".";
    layer.attn_adapter = make(p + "attn_adapter");
    layer.ffn_adapter = make(p + "ffn_adapter");
  }
}

template <typename T>
void inject_rep(Encoder<T>& model, const InjectionOptions& o) {
  check_options(o);
  validate_targets(model, o);
  model.mark_injected(Method::Rep);
  std::mt19937_64 rng(o.seed);
  const auto& cfg = model.config();
  for (auto& layer : model.layers()) {
    for (UpdatedLinear<T>* proj : targeted(*layer, o)) {
      const std::string name = proj->base.weight.name.substr(0, proj->base.weight.name.size() - 7);
      const std::size_t out = proj->base.out_features(), in = proj->base.in_features();
      TTWeight<T> down = make_tt<T>(name + ".rep.down", o.bottleneck, in, o.rank,
                                    model.registry(), cfg.init_std, rng, ParamRole::Peft,
                                    cfg.materialize);
      TTWeight<T> up = make_tt<T>(name + ".rep.up", out, o.bottleneck, o.rank, model.registry(),
                                  cfg.init_std, rng, ParamRole::Peft, cfg.materialize);
      auto update =
          std::make_unique<TTRepUpdate<T>>(std::move(down), std::move(up), static_cast<T>(o.scale));
      update->init_zero_offset();
      proj->update = std::move(update);
    }
  }
}

template <typename T>
void inject_lora(Encoder<T>& model, const InjectionOptions& o) {
  check_options(o);
  validate_targets(model, o);
  model.mark_injected(Method::Lora);
  std::mt19937_64 rng(o.seed);
  const auto& cfg = model.config();
  for (auto& layer : model.layers()) {
    for (UpdatedLinear<T>* proj : targeted(*layer, o)) {
      const std::string name = proj->base.weight.name.substr(0, proj->base.weight.name.size() - 7);
      auto update = std::make_unique<LoRAUpdate<T>>(
          LoRAUpdate<T>::init(name, proj->base.out_features(), proj->base.in_features(), o.rank,
                              cfg.init_std, rng, cfg.materialize));
      update->scale = static_cast<T>(o.scale);
      proj->update = std::move(update);
    }
  }
}

template <typename T>
void inject_method(Encoder<T>& model, Method method, const InjectionOptions& options) {
  switch (method) {
    case Method::Adp: inject_adapters(model, options); break;
    case Method::Rep: inject_rep(model, options); break;
    case Method::Lora: inject_lora(model, options); break;
    case Method::Adapter: inject_dense_adapters(model, options); break;
    case Method::Ft: model.mark_injected(Method::Ft); break;
  }
}

template <typename T>
ParamReport apply_freezing_policy(Encoder<T>& model, const FreezingPolicy& policy) {
  const bool classifier_on =
      policy.train_classifier && model.config().classifier != ClassifierMode::Frozen;
  for (auto& g : model.groups()) {
    bool on = false;
    switch (g.role) {
      case ParamRole::Base: on = policy.train_base; break;
      case ParamRole::LayerNorm: on = policy.train_layernorm; break;
      case ParamRole::Classifier: on = classifier_on; break;
      case ParamRole::Peft: on = policy.train_peft; break;
    }
    g.set_trainable(on);
  }
  ParamReport r = model.report();
  require(r.total > 0, ErrorCode::NothingTrainable, "freezing policy leaves nothing trainable");
  return r;
}

#define LORETTA_INSTANTIATE_ENCODER(T)                                                    \
  template struct EncoderLayer<T>;                                                        \
  template class Encoder<T>;                                                              \
  template std::unique_ptr<Encoder<T>> build_encoder(const EncoderConfig&);               \
  template std::unique_ptr<Encoder<T>> build_encoder(const EncoderConfig&,                \
                                                     const ShapeRegistry&);               \
  template void inject_adapters(Encoder<T>&, const InjectionOptions&);                    \
  template void inject_dense_adapters(Encoder<T>&, const InjectionOptions&);              \
  template void inject_rep(Encoder<T>&, const InjectionOptions&);                         \
  template void inject_lora(Encoder<T>&, const InjectionOptions&);                        \
  template void inject_method(Encoder<T>&, Method, const InjectionOptions&);              \
  template ParamReport apply_freezing_policy(Encoder<T>&, const FreezingPolicy&);

LORETTA_INSTANTIATE_ENCODER(float)
LORETTA_INSTANTIATE_ENCODER(double)

}  // namespace loretta
