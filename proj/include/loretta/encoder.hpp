// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstdint>
#include <memory>
#include <optional>
#include <set>
#include <string>
#include <vector>

#include "loretta/layers.hpp"
#include "loretta/shape_registry.hpp"

namespace loretta {

enum class ClassifierMode { Dense, Tensorized, Frozen };
enum class Method { Adp, Rep, Lora, Adapter, Ft };

std::string to_string(ClassifierMode mode);
std::string to_string(Method method);
ClassifierMode parse_classifier_mode(const std::string& s);
Method parse_method(const std::string& s);

struct EncoderConfig {
  std::size_t layers = 2;
  std::size_t hidden = 64;
  std::size_t heads = 4;
  std::size_t ffn_mult = 4;
  std::size_t vocab = 64;
  std::size_t max_seq = 16;
  std::size_t num_classes = 4;
  ClassifierMode classifier = ClassifierMode::Tensorized;
  ShapeRegistry::ClassifierLayout classifier_layout = ShapeRegistry::ClassifierLayout::TwelveEight;
  /// TT rank of the tensorized pooler.
  std::size_t classifier_rank = 5;
  bool layernorm_trainable = true;
  /// False builds shape-only parameters: counting works, forward throws.
  bool materialize = true;
  std::uint64_t seed = 0;
  /// Std of dense base weights and of contracted TT weights at init.
  double init_std = 0.02;

  /// Throws InvalidConfig.
  void validate() const;

  static EncoderConfig toy();
  /// 12 layers, hidden 768, shape-only: for parameter counting.
  static EncoderConfig deberta_base_like();
};

/// Which switches make parameter groups trainable. Everything else stays
/// frozen.
struct FreezingPolicy {
  bool train_peft = true;
  bool train_layernorm = true;
  bool train_classifier = true;
  bool train_base = false;

  static FreezingPolicy for_method(Method method, const EncoderConfig& config);
};

/// Row-major [batch, seq] token ids.
struct TokenBatch {
  std::size_t batch = 0;
  std::size_t seq = 0;
  std::vector<std::uint32_t> ids;
};

struct InjectionOptions {
  std::size_t rank = 5;
  std::size_t bottleneck = 64;
  /// Projections wrapped by rep or LoRA: any of q, k, v, o.
  std::set<std::string> targets{"q", "v"};
  Activation activation = Activation::Relu;
  std::uint64_t seed = 1;
  double scale = 1.0;
};

template <typename T>
struct EncoderLayer {
  Parameter<T> ln1_gain, ln1_offset, ln2_gain, ln2_offset;
  UpdatedLinear<T> q, k, v, o;
  DenseLinear<T> fc1, fc2;
  std::unique_ptr<Module<T>> attn_adapter;
  std::unique_ptr<Module<T>> ffn_adapter;

  UpdatedLinear<T>* projection(const std::string& target);
};

/// Pre-norm transformer encoder with mean pooling, a pooler projection
/// (dense or TT) and a dense class head. Parameters have stable addresses
/// for the lifetime of the object, so it is neither copyable nor movable;
/// build_encoder hands out a unique_ptr.
template <typename T>
class Encoder {
 public:
  explicit Encoder(const EncoderConfig& config, const ShapeRegistry& registry);
  Encoder(const Encoder&) = delete;
  Encoder& operator=(const Encoder&) = delete;

  const EncoderConfig& config() const noexcept { return config_; }
  const ShapeRegistry& registry() const noexcept { return registry_; }

  /// [batch, num_classes] logits.
  ad::Var<T> forward(ad::Tape<T>& tape, const TokenBatch& tokens) const;
  Tensor<T> logits(const TokenBatch& tokens) const;

  /// Every parameter group in a fixed order, frozen ones included.
  std::vector<ParamGroup<T>> groups();
  std::vector<Parameter<T>*> parameters();
  std::vector<Parameter<T>*> trainable_parameters();
  ParamReport report();

  std::optional<Method> injected() const noexcept { return injected_; }
  void mark_injected(Method m);

  std::vector<std::unique_ptr<EncoderLayer<T>>>& layers() noexcept { return layers_; }

  Parameter<T> token_embedding;
  Parameter<T> position_embedding;
  Parameter<T> final_gain, final_offset;
  std::unique_ptr<Module<T>> pooler;
  DenseLinear<T> class_head;

 private:
  EncoderConfig config_;
  ShapeRegistry registry_;
  std::vector<std::unique_ptr<EncoderLayer<T>>> layers_;
  std::optional<Method> injected_;
};

/// Deterministic from config.seed. All parameters start frozen. The
/// one-argument form uses the built-in registry with config's classifier
/// layout.
template <typename T>
std::unique_ptr<Encoder<T>> build_encoder(const EncoderConfig& config);
template <typename T>
std::unique_ptr<Encoder<T>> build_encoder(const EncoderConfig& config,
                                          const ShapeRegistry& registry);

/// Tensorized adapter after the attention and FFN sublayers of every layer.
/// The last factor of each up-projection starts at zero, so the adapter is
/// the identity until trained.
template <typename T>
void inject_adapters(Encoder<T>& model, const InjectionOptions& options);
/// Classical dense adapters; the up-projection starts at zero.
template <typename T>
void inject_dense_adapters(Encoder<T>& model, const InjectionOptions& options);
/// TT reparameterization of the targeted projections, zero offset captured.
template <typename T>
void inject_rep(Encoder<T>& model, const InjectionOptions& options);
template <typename T>
void inject_lora(Encoder<T>& model, const InjectionOptions& options);

/// Dispatch on method; ft injects nothing.
template <typename T>
void inject_method(Encoder<T>& model, Method method, const InjectionOptions& options);

/// Sets trainable flags; throws NothingTrainable when nothing is left.
template <typename T>
ParamReport apply_freezing_policy(Encoder<T>& model, const FreezingPolicy& policy);

/// Injection defaults per method: bottleneck 64 for adapters, 8 for rep.
InjectionOptions default_injection(Method method, std::size_t rank);

}  // namespace loretta
