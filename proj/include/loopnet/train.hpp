#pragma once

#include <chrono>
#include <cinttypes>

#include "loopnet/checkpoint.hpp"
#include "loopnet/data.hpp"
#include "loopnet/optim.hpp"

namespace loopnet {

// Fixed evaluation seeds: the same validation batches score every run, so
// curves are comparable across arms and across training seeds.
inline constexpr uint64_t kValBatchSeed = 20240117;
inline constexpr uint64_t kTrainEvalSeed = 20240118;

struct MetricsRow {
  int64_t step = 0;
  double train_loss = 0.0;
  double val_loss = 0.0;
  double lr = 0.0;
  double ms_per_step = 0.0;
};

struct TrainOutcome {
  bool diverged = false;
  std::string message;
  int64_t steps_completed = 0;
  double final_train_loss = 0.0;
  double final_val_loss = 0.0;
  std::string checkpoint_dir;
  std::string metrics_path;
  std::vector<MetricsRow> rows;
};

/// Mean cross-entropy (nats/token) over n_batches seeded batches; the model
/// is not mutated.
template <typename F>
double evaluate_model(const Model<F>& m, const TokenStream& stream,
                      int64_t n_batches, int64_t batch_size, uint64_t seed) {
  if (stream.vocab_size != m.cfg.vocab_size) {
    throw ConfigError("evaluate: stream vocab_size " +
                      std::to_string(stream.vocab_size) +
                      " does not match model vocab_size " +
                      std::to_string(m.cfg.vocab_size));
  }
  Rng rng(seed);
  double total = 0.0;
  for (int64_t i = 0; i < n_batches; ++i) {
    Batch b = sample_batch(stream, batch_size, m.cfg.context_len, rng);
    Tensor<F> logits = loop_forward<F>(nullptr, m, b.inputs);
    total += static_cast<double>(
        softmax_cross_entropy<F>(nullptr, logits, b.targets).item());
  }
  return total / static_cast<double>(n_batches);
}

namespace detail {

inline void write_metrics_row(std::ofstream& csv, const MetricsRow& r) {
  char buf[192];
  std::snprintf(buf, sizeof buf, "%" PRId64 ",%.6f,%.6f,%.8e,%.3f\n", r.step,
                r.train_loss, r.val_loss, r.lr, r.ms_per_step);
  csv << buf;
  csv.flush();
}

template <typename F>
TrainOutcome train_impl(const ModelConfig& mc, const LoopConfig& lc,
                        const TrainConfig& tc, const TokenStream& tr,
                        const TokenStream& va, const std::string& out_dir,
                        bool verbose) {
  mc.validate();
  lc.validate();
  tc.validate();
  std::error_code ec;
  std::filesystem::create_directories(out_dir, ec);
  if (ec) {
    throw IoError("cannot create run directory '" + out_dir +
                  "': " + ec.message());
  }

  Model<F> model = init_model<F>(mc, lc, tc.seed);
  auto params = model.parameters();
  auto opt = init_optimizer(params);
  Rng data_rng(tc.seed ^ 0x9E3779B97F4A7C15ULL);

  TrainOutcome out;
  out.metrics_path = out_dir + "/metrics.csv";
  out.checkpoint_dir = out_dir + "/checkpoint";
  std::ofstream csv(out.metrics_path, std::ios::trunc);
  if (!csv) {
    throw IoError("cannot write '" + out.metrics_path + "'");
  }
  csv << "step,train_loss,val_loss,lr,ms_per_step\n";
  csv.flush();

  const auto eval_pair = [&]() {
    const double tl =
        evaluate_model(model, tr, tc.eval_batches, tc.batch_size,
                       kTrainEvalSeed);
    const double vl = evaluate_model(model, va, tc.eval_batches,
                                     tc.batch_size, kValBatchSeed);
    return std::pair<double, double>(tl, vl);
  };
  const auto emit = [&](int64_t step, double tl, double vl, double lr,
                        double ms) {
    MetricsRow r{step, tl, vl, lr, runtime::is_strict() ? 0.0 : ms};
    write_metrics_row(csv, r);
    out.rows.push_back(r);
    if (verbose) {
      std::printf("step %6" PRId64 "  train %.4f  val %.4f  lr %.2e  %s\n",
                  r.step, r.train_loss, r.val_loss, r.lr,
                  runtime::is_strict()
                      ? "(strict)"
                      : (std::to_string(ms) + " ms/step").c_str());
      std::fflush(stdout);
    }
    out.final_train_loss = tl;
    out.final_val_loss = vl;
  };

  {
    const auto [tl, vl] = eval_pair();
    emit(0, tl, vl, 0.0, 0.0);
  }

  const auto save = [&](const std::string& dir, int64_t step) {
    CheckpointHeader hdr;
    hdr.model = mc;
    hdr.loop = lc;
    hdr.train = tc;
    hdr.step = step;
    hdr.rng_state = data_rng.state_string();
    hdr.train_loss = out.final_train_loss;
    hdr.val_loss = out.final_val_loss;
    save_checkpoint(dir, model, hdr);
  };

  using clock = std::chrono::steady_clock;
  double ms_accum = 0.0;
  int64_t ms_count = 0;
  for (int64_t step = 1; step <= tc.total_steps; ++step) {
    const double lr = lr_schedule(step, tc);
    const auto t0 = clock::now();
    try {
      Batch b = sample_batch(tr, tc.batch_size, mc.context_len, data_rng);
      Tape<F> tape;
      Tensor<F> logits = loop_forward<F>(&tape, model, b.inputs);
      Tensor<F> loss = softmax_cross_entropy<F>(&tape, logits, b.targets);
      zero_grads(params);
      tape.backward(loss);
      clip_gradients(params, tc.grad_clip);
      adamw_step(params, opt, tc, lr);
    } catch (const NonFiniteError& e) {
      out.diverged = true;
      out.message = std::string(e.what()) + " (at step " +
                    std::to_string(step) + ")";
      out.steps_completed = step - 1;
      save(out_dir + "/checkpoint-diverged", step - 1);
      return out;
    }
    ms_accum += std::chrono::duration<double, std::milli>(clock::now() - t0)
                    .count();
    ms_count += 1;
    out.steps_completed = step;

    if (step % tc.eval_interval == 0 || step == tc.total_steps) {
      const auto [tl, vl] = eval_pair();
      emit(step, tl, vl, lr, ms_accum / static_cast<double>(ms_count));
      ms_accum = 0.0;
      ms_count = 0;
    }
    if (tc.checkpoint_interval > 0 && step % tc.checkpoint_interval == 0 &&
        step != tc.total_steps) {
      save(out_dir + "/checkpoint-" + std::to_string(step), step);
    }
  }
  save(out.checkpoint_dir, tc.total_steps);
  return out;
}

}  // namespace detail

/// Runs the full optimization loop: AdamW with warmup-cosine schedule,
/// periodic train/val evaluation appended to metrics.csv, checkpoint at the
/// end (plus any configured cadence). Returns a divergence outcome instead
/// of throwing when the loss leaves the finite range.
inline TrainOutcome train(const ModelConfig& mc, const LoopConfig& lc,
                          const TrainConfig& tc, const TokenStream& tr,
                          const TokenStream& va, const std::string& out_dir,
                          bool verbose = false) {
  if (tc.precision == Precision::f32) {
    return detail::train_impl<float>(mc, lc, tc, tr, va, out_dir, verbose);
  }
  return detail::train_impl<double>(mc, lc, tc, tr, va, out_dir, verbose);
}

/// Mean val-set cross-entropy of a saved checkpoint, at its own precision.
inline double evaluate(const std::string& ckpt_dir, const TokenStream& stream,
                       int64_t n_batches, uint64_t seed) {
  CheckpointHeader hdr = read_checkpoint_header(ckpt_dir);
  if (hdr.train.precision == Precision::f32) {
    Model<float> m = load_checkpoint<float>(ckpt_dir);
    return evaluate_model(m, stream, n_batches, hdr.train.batch_size, seed);
  }
  Model<double> m = load_checkpoint<double>(ckpt_dir);
  return evaluate_model(m, stream, n_batches, hdr.train.batch_size, seed);
}

/// Median wall-clock milliseconds per full optimization step
/// (forward + backward + update) on synthetic random batches. The first
/// five steps warm caches and are discarded.
template <typename F>
double benchmark_step_time(const ModelConfig& mc, const LoopConfig& lc,
                           const TrainConfig& tc, int64_t n_steps) {
  if (n_steps < 20) {
    throw ContractError("benchmark_step_time: need n_steps >= 20, got " +
                        std::to_string(n_steps));
  }
  mc.validate();
  lc.validate();
  Model<F> model = init_model<F>(mc, lc, tc.seed);
  auto params = model.parameters();
  auto opt = init_optimizer(params);
  Rng rng(tc.seed + 1);

  const int64_t b_sz = tc.batch_size;
  const int64_t t_len = mc.context_len;
  std::vector<double> times;
  times.reserve(static_cast<size_t>(n_steps));
  using clock = std::chrono::steady_clock;
  for (int64_t s = 0; s < n_steps; ++s) {
    Batch b;
    b.inputs = ITensor::zeros({b_sz, t_len});
    b.targets = ITensor::zeros({b_sz, t_len});
    for (auto& v : b.inputs.data) {
      v = static_cast<int32_t>(rng.bounded(uint64_t(mc.vocab_size)));
    }
    for (auto& v : b.targets.data) {
      v = static_cast<int32_t>(rng.bounded(uint64_t(mc.vocab_size)));
    }
    const auto t0 = clock::now();
    Tape<F> tape;
    Tensor<F> logits = loop_forward<F>(&tape, model, b.inputs);
    Tensor<F> loss = softmax_cross_entropy<F>(&tape, logits, b.targets);
    zero_grads(params);
    tape.backward(loss);
    clip_gradients(params, tc.grad_clip);
    adamw_step(params, opt, tc, tc.lr_max);
    times.push_back(
        std::chrono::duration<double, std::milli>(clock::now() - t0).count());
  }
  times.erase(times.begin(), times.begin() + 5);
  std::sort(times.begin(), times.end());
  const size_t n = times.size();
  return n % 2 == 1 ? times[n / 2]
                    : 0.5 * (times[n / 2 - 1] + times[n / 2]);
}

}  // namespace loopnet
