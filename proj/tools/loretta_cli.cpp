// SPDX-License-Identifier: Apache-2.0
// Command-line front end: decomposition round trips, parameter accounting,
// training and evaluation on the synthetic tasks, gradient checks.

#include <cstdio>
#include <iostream>
#include <sstream>

#include <CLI11.hpp>

#include "loretta/checkpoint.hpp"
#include "loretta/report.hpp"
#include "loretta/shape_registry.hpp"
#include "loretta/train.hpp"

using namespace loretta;

namespace {

constexpr int kOk = 0;
constexpr int kUsage = 1;
constexpr int kData = 2;
constexpr int kNumeric = 3;

int exit_code_for(ErrorCode code) {
  switch (code) {
    case ErrorCode::NonFiniteEntry:
    case ErrorCode::NonFiniteDetected:
    case ErrorCode::NonFiniteGradient:
    case ErrorCode::NonFiniteLoss:
    case ErrorCode::SvdFailure:
      return kNumeric;
    case ErrorCode::InvalidArgument:
    case ErrorCode::InvalidConfig:
    case ErrorCode::UnknownTarget:
    case ErrorCode::NothingTrainable:
    case ErrorCode::AlreadyInjected:
      return kUsage;
    default:
      return kData;
  }
}

std::vector<std::size_t> parse_list(const std::string& s) {
  std::vector<std::size_t> out;
  std::stringstream ss(s);
  std::string item;
  while (std::getline(ss, item, ',')) {
    try {
      std::size_t pos = 0;
      const auto v = std::stoull(item, &pos);
      require(pos == item.size() && item.find_first_not_of("0123456789") == std::string::npos,
              ErrorCode::InvalidArgument, "bad list item '" + item + "'");
      out.push_back(static_cast<std::size_t>(v));
    } catch (const std::logic_error&) {
      fail(ErrorCode::InvalidArgument, "bad list item '" + item + "'");
    }
  }
  require(!out.empty(), ErrorCode::InvalidArgument, "empty list");
  return out;
}

std::set<std::string> parse_targets(const std::string& s) {
  std::set<std::string> out;
  std::stringstream ss(s);
  std::string item;
  while (std::getline(ss, item, ',')) out.insert(item);
  return out;
}

struct ModelOptions {
  std::string arch = "toy";
  std::string method = "adp";
  std::size_t rank = 5;
  std::size_t bottleneck = 0;
  std::uint64_t seed = 0;
  std::string dtype = "single";
  std::size_t seq_len = 16;

  void add_to(CLI::App* app) {
    app->add_option("--arch", arch, "toy, deberta-base-like, or a key=value config file");
    app->add_option("--method", method, "adp, rep, lora, adapter or ft");
    app->add_option("--rank", rank, "TT rank (LoRA rank for lora)");
    app->add_option("--bottleneck", bottleneck, "0 = method default");
    app->add_option("--seed", seed, "seed for data, injection and batching");
    app->add_option("--dtype", dtype, "single or double")->check(CLI::IsMember({"single", "double"}));
    app->add_option("--seq-len", seq_len, "tokens per example");
  }

  DatasetConfig dataset(const EncoderConfig& a, const std::string& task) const {
    DatasetConfig d;
    d.kind = parse_task(task);
    d.vocab = a.vocab;
    d.num_classes = d.kind == TaskKind::Parity ? 2 : a.num_classes;
    d.seq_len = std::min(seq_len, a.max_seq);
    d.seed = seed;
    if (d.kind == TaskKind::Parity) {
      const std::size_t n = std::size_t{1} << d.seq_len;
      d.train_size = n * 3 / 4;
      d.val_size = n - d.train_size;
    }
    return d;
  }
};

template <typename T>
int run_train(const ModelOptions& mo, const std::string& task, const TrainConfig& tc,
              const std::string& out) {
  EncoderConfig arch = load_arch(mo.arch);
  require(arch.materialize, ErrorCode::InvalidConfig,
          "architecture '" + mo.arch + "' is shape-only; use it with param-count or compare");
  const DatasetConfig dc = mo.dataset(arch, task);
  if (dc.kind == TaskKind::Parity) arch.num_classes = std::max<std::size_t>(arch.num_classes, 2);
  auto model = make_model<T>(arch, tc.method, tc.rank, tc.bottleneck, mo.seed);
  const SyntheticDataset data = make_dataset(dc);
  std::printf("trainable parameters: %zu\n", model->report().total);
  const TrainHistory h = train(*model, data, tc);
  for (const auto& e : h.evals)
    std::printf("step %5zu  train_loss %.6f  val_loss %.6f  val_acc %.4f\n", e.step,
                h.losses.empty() ? 0.0 : h.losses[e.step - 1], e.val_loss,
                e.val_accuracy.value_or(0.0));
  std::printf("final train_acc %.4f  val_acc %.4f  best_step %zu  best_val_loss %.6f\n",
              h.final_train.accuracy.value_or(0.0), h.final_val.accuracy.value_or(0.0),
              h.best_step, h.best_val_loss);
  if (!out.empty()) {
    save_checkpoint(out, h.best);
    std::printf("saved best checkpoint to %s (%zu bytes)\n", out.c_str(),
                encode_checkpoint(h.best).size());
  }
  return kOk;
}

template <typename T>
int run_eval(const ModelOptions& mo, const std::string& task, const std::string& ckpt_path) {
  EncoderConfig arch = load_arch(mo.arch);
  const DatasetConfig dc = mo.dataset(arch, task);
  if (dc.kind == TaskKind::Parity) arch.num_classes = std::max<std::size_t>(arch.num_classes, 2);
  const Method method = parse_method(mo.method);
  auto model = make_model<T>(arch, method, mo.rank, mo.bottleneck, mo.seed);
  const Checkpoint ckpt = load_checkpoint(ckpt_path);
  const std::size_t restored = import_trainables(model->groups(), ckpt);
  require(restored == ckpt.entries.size(), ErrorCode::CorruptPayload,
          "checkpoint has " + std::to_string(ckpt.entries.size()) + " tensors but only " +
              std::to_string(restored) + " match the model; check --arch/--method/--rank");
  const SyntheticDataset data = make_dataset(dc);
  for (const auto& [name, split] : {std::pair{"train", &data.train}, std::pair{"val", &data.val}}) {
    const EvalResult r = evaluate(*model, *split);
    if (r.accuracy)
      std::printf("%s: count %zu  accuracy %.4f  mean_loss %.6f\n", name, r.count, *r.accuracy,
                  r.mean_loss);
    else
      std::printf("%s: count 0  accuracy undefined\n", name);
  }
  return kOk;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Tensor-train adapters and reparameterization toolkit"};
  app.require_subcommand(1);

  // decompose
  std::string d_in, d_out, d_shape = "auto";
  std::size_t d_rows = 0, d_cols = 0, d_rank = 5;
  auto* dec = app.add_subcommand("decompose", "TT-SVD of a dense matrix file into a checkpoint");
  dec->add_option("--in", d_in, "dense matrix file (LRDN)")->required();
  dec->add_option("--rows", d_rows)->required();
  dec->add_option("--cols", d_cols)->required();
  dec->add_option("--shape", d_shape, "k1,k2,... or auto");
  dec->add_option("--rank", d_rank, "maximum interior rank");
  dec->add_option("--out", d_out, "checkpoint path")->required();

  // reconstruct
  std::string r_in, r_out, r_ref;
  bool r_report = false;
  auto* rec = app.add_subcommand("reconstruct", "contract a TT checkpoint back to a dense file");
  rec->add_option("--in", r_in, "checkpoint")->required();
  rec->add_option("--out", r_out, "dense matrix file")->required();
  rec->add_flag("--report-error", r_report, "print the relative Frobenius error");
  rec->add_option("--reference", r_ref, "dense file to compare against");

  // param-count
  ModelOptions pc;
  std::string pc_targets = "q,v";
  auto* pcc = app.add_subcommand("param-count", "trainable parameters for one method");
  pc.add_to(pcc);
  pcc->add_option("--targets", pc_targets, "projections for rep/lora");

  // train
  ModelOptions tr;
  std::string t_task = "cluster", t_out;
  TrainConfig tc;
  auto* trc = app.add_subcommand("train", "train on a synthetic task");
  tr.add_to(trc);
  trc->add_option("--task", t_task)->check(CLI::IsMember({"parity", "cluster"}));
  trc->add_option("--lr", tc.learning_rate);
  trc->add_option("--batch", tc.batch_size);
  trc->add_option("--steps", tc.steps);
  trc->add_option("--eval-every", tc.eval_every);
  trc->add_option("--weight-decay", tc.weight_decay);
  trc->add_option("--out", t_out, "write the best checkpoint here");

  // eval
  ModelOptions ev;
  std::string e_ckpt, e_task = "cluster";
  auto* evc = app.add_subcommand("eval", "evaluate a trained checkpoint");
  ev.add_to(evc);
  evc->add_option("--ckpt", e_ckpt)->required();
  evc->add_option("--task", e_task)->check(CLI::IsMember({"parity", "cluster"}));

  // compare
  std::string c_arch = "deberta-base-like", c_ranks = "2,5,10,20",
              c_methods = "ft,adapter,lora,adp,rep";
  std::size_t c_bottleneck = 0;
  bool c_check = false;
  auto* cmp = app.add_subcommand("compare", "trainable counts across methods and ranks");
  cmp->add_option("--arch", c_arch);
  cmp->add_option("--ranks", c_ranks);
  cmp->add_option("--methods", c_methods);
  cmp->add_option("--bottleneck", c_bottleneck, "0 = method default");
  cmp->add_flag("--cross-check", c_check, "also count on a constructed shape-only model");

  // gradcheck
  ModelGradCheckConfig gc;
  std::string g_method = "adp";
  double g_tol = 1e-4;
  auto* gcc = app.add_subcommand("gradcheck", "finite-difference check of an injected toy model");
  gcc->add_option("--method", g_method);
  gcc->add_option("--rank", gc.rank);
  gcc->add_option("--seed", gc.seed);
  gcc->add_option("--max-coords", gc.options.max_coords, "per tensor");
  gcc->add_option("--tolerance", g_tol);

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? kOk : kUsage;
  }

  try {
    if (*dec) {
      const Tensor<double> w = load_dense(d_in);
      require(w.rows() == d_rows && w.cols() == d_cols, ErrorCode::DimensionMismatch,
              "file holds " + shape_to_string(w.shape()) + ", expected " +
                  std::to_string(d_rows) + "x" + std::to_string(d_cols));
      const TTShape shape = d_shape == "auto" ? ShapeRegistry::builtin().lookup(d_rows, d_cols)
                                              : TTShape(parse_list(d_shape));
      const TTTensor<double> tt = tt_svd(w, shape, d_rank);
      Checkpoint ckpt;
      ckpt.dtype = DType::F64;
      ckpt.entries.push_back(tt_to_entry("weight", tt));
      save_checkpoint(d_out, ckpt);
      const Tensor<double> back = tt_contract(tt);
      std::printf("shape %s ranks %s params %zu (dense %zu) rel_error %.3e\n",
                  to_string(shape).c_str(), to_string(tt.ranks()).c_str(), tt.param_count(),
                  w.size(),
                  dense::frobenius_distance(back, w) / std::max(dense::frobenius_norm(w), 1e-300));
      return kOk;
    }
    if (*rec) {
      if (r_report && r_ref.empty()) {
        std::fprintf(stderr, "--report-error needs --reference <dense.bin>\n");
        return kUsage;
      }
      const Checkpoint ckpt = load_checkpoint(r_in);
      const CheckpointEntry* entry = nullptr;
      for (const auto& e : ckpt.entries)
        if (e.is_tt()) {
          entry = &e;
          break;
        }
      require(entry != nullptr, ErrorCode::CorruptPayload, "checkpoint holds no TT tensor");
      const Tensor<double> w = tt_contract(entry_to_tt(*entry));
      save_dense(r_out, w);
      if (r_report) {
        const Tensor<double> ref = load_dense(r_ref);
        require(ref.shape() == w.shape(), ErrorCode::DimensionMismatch,
                "reference is " + shape_to_string(ref.shape()) + ", reconstruction is " +
                    shape_to_string(w.shape()));
        std::printf("rel_error %.6e\n", dense::frobenius_distance(w, ref) /
                                            std::max(dense::frobenius_norm(ref), 1e-300));
      }
      return kOk;
    }
    if (*pcc) {
      const EncoderConfig arch = load_arch(pc.arch);
      const Method m = parse_method(pc.method);
      const auto targets = parse_targets(pc_targets);
      const std::size_t n = analytic_count(arch, m, pc.rank, pc.bottleneck, targets);
      const std::size_t built = constructed_count(arch, m, pc.rank, pc.bottleneck, targets);
      std::printf("method %s rank %zu trainable %zu (%.3fM) enumerated %zu f32_bytes %zu "
                  "f64_bytes %zu\n",
                  pc.method.c_str(), pc.rank, n, static_cast<double>(n) / 1e6, built, n * 4,
                  n * 8);
      return n == built ? kOk : kNumeric;
    }
    if (*trc) {
      tc.method = parse_method(tr.method);
      tc.rank = tr.rank;
      tc.bottleneck = tr.bottleneck;
      tc.seed = tr.seed;
      return tr.dtype == "double" ? run_train<double>(tr, t_task, tc, t_out)
                                  : run_train<float>(tr, t_task, tc, t_out);
    }
    if (*evc) {
      return ev.dtype == "double" ? run_eval<double>(ev, e_task, e_ckpt)
                                  : run_eval<float>(ev, e_task, e_ckpt);
    }
    if (*cmp) {
      const EncoderConfig arch = load_arch(c_arch);
      std::vector<Method> methods;
      for (const auto& m : parse_targets(c_methods)) methods.push_back(parse_method(m));
      std::sort(methods.begin(), methods.end());
      const auto rows = compare_report(arch, methods, parse_list(c_ranks), c_bottleneck);
      std::fputs(format_count_table(rows).c_str(), stdout);
      if (c_check) {
        for (const auto& r : rows) {
          const std::size_t built = constructed_count(arch, r.method, r.rank, c_bottleneck);
          if (built != r.trainable) {
            std::printf("mismatch: %s rank %zu analytic %zu enumerated %zu\n",
                        to_string(r.method).c_str(), r.rank, r.trainable, built);
            return kNumeric;
          }
        }
        std::printf("cross-check: all %zu rows match the enumerated models\n", rows.size());
      }
      return kOk;
    }
    if (*gcc) {
      gc.method = parse_method(g_method);
      const ModelGradCheck mg = check_model_gradients(gc);
      const GradCheckReport& r = mg.report;
      std::printf("test point: draw %zu, smallest |relu input| %.3e\n", mg.draws, mg.relu_margin);
      for (const auto& e : r.entries)
        std::printf("%-40s coords %6zu  max_rel_err %.3e  (at %zu: autodiff %.6e, fd %.6e)\n",
                    e.name.c_str(), e.checked, e.max_rel_error, e.worst_index, e.analytic,
                    e.numeric);
      std::printf("checked %zu coordinates, max relative error %.3e -> %s\n", r.checked,
                  r.max_rel_error, r.passed(g_tol) ? "PASS" : "FAIL");
      return r.passed(g_tol) ? kOk : kNumeric;
    }
  } catch (const Error& e) {
    std::fprintf(stderr, "error: %s\n", e.what());
    return exit_code_for(e.code());
  } catch (const std::exception& e) {
    std::fprintf(stderr, "error: %s\n", e.what());
    return kData;
  }
  return kUsage;
}
