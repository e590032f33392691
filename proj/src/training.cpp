#include "trajrec/training.hpp"

#include <algorithm>
#include <cmath>
#include <exception>
#include <fstream>
#include <mutex>
#include <numeric>

#include "trajrec/errors.hpp"
#include "trajrec/metrics.hpp"
#include "trajrec/parallel.hpp"

namespace trajrec {

using ad::Mat;
using ad::Tape;
using ad::Var;

namespace {

constexpr std::uint64_t kTagShuffle = 0x73687566666c65ULL;  // "shuffle"
constexpr std::uint64_t kTagCoin = 0x636f696eULL;           // "coin"

using par::parallel_for_rethrow;

// Everything about a training pair that does not depend on parameters.
struct PreparedPair {
  const RawTrajectory* raw = nullptr;
  const MapTrajectory* teacher = nullptr;
  ConstraintMask mask;
};

std::vector<PreparedPair> prepare_pairs(const Model& model,
                                        const std::vector<TrajectoryPair>& pairs) {
  std::vector<PreparedPair> out(pairs.size());
  // Cheap alignment checks run serially so errors carry trajectory ids;
  // the mask construction (spatial queries) parallelizes.
  std::vector<std::vector<double>> grids(pairs.size());
  for (std::size_t i = 0; i < pairs.size(); ++i) {
    const auto& [raw, teacher] = pairs[i];
    grids[i] = make_decode_grid(raw, model.config.eps_tau_s);
    if (teacher.points.size() != grids[i].size())
      throw DataError("trajectory " + std::to_string(raw.id) + ": teacher has " +
                      std::to_string(teacher.points.size()) +
                      " points but the decode grid has " +
                      std::to_string(grids[i].size()));
    out[i].raw = &raw;
    out[i].teacher = &teacher;
  }
  parallel_for_rethrow(pairs.size(), [&](std::size_t i) {
    out[i].mask = build_constraint_mask(
        *model.net, *out[i].raw, grids[i], model.config.eps_tau_s,
        model.config.mask_radius_m, model.config.gamma_m);
  });
  return out;
}

double forced_loss(const Model& model, const PreparedPair& p, Rng* coin,
                   double tf_ratio, std::vector<Mat>* sink, double batch_scale) {
  Tape tape(sink);
  EncodeResult enc = encode(tape, model, *p.raw);
  DecodeOptions opts;
  opts.teacher = p.teacher;
  opts.tf_ratio = tf_ratio;
  opts.coin = coin;
  DecodeOutput out = decode(tape, model, enc, p.mask, opts);
  if (sink) tape.backward(tape.scale(out.loss_total, batch_scale));
  return out.loss_total.value().data[0];
}

}  // namespace

Adam::Adam(ad::ParamStore& store, AdamConfig cfg) : store_(&store), cfg_(cfg) {
  if (cfg_.lr <= 0.0 || cfg_.beta1 < 0.0 || cfg_.beta1 >= 1.0 ||
      cfg_.beta2 < 0.0 || cfg_.beta2 >= 1.0 || cfg_.eps <= 0.0)
    throw ValidationError("Adam: invalid hyperparameters");
  m_ = store.make_grad_buffers();
  v_ = store.make_grad_buffers();
}

double Adam::step(const std::vector<Mat>& grads, double clip_norm) {
  if (grads.size() != store_->size())
    throw ValidationError("Adam::step: gradient count mismatch");
  double sq = 0.0;
  for (std::size_t i = 0; i < grads.size(); ++i) {
    if (!grads[i].same_shape((*store_)[i].value))
      throw ValidationError("Adam::step: gradient shape mismatch for " +
                            (*store_)[i].name);
    for (double g : grads[i].data) sq += g * g;
  }
  const double norm = std::sqrt(sq);
  const double scale =
      (clip_norm > 0.0 && norm > clip_norm) ? clip_norm / norm : 1.0;

  ++t_;
  const double bc1 = 1.0 - std::pow(cfg_.beta1, static_cast<double>(t_));
  const double bc2 = 1.0 - std::pow(cfg_.beta2, static_cast<double>(t_));
  for (std::size_t i = 0; i < grads.size(); ++i) {
    auto& value = (*store_)[i].value.data;
    auto& m = m_[i].data;
    auto& v = v_[i].data;
    const auto& g_in = grads[i].data;
    for (std::size_t j = 0; j < value.size(); ++j) {
      const double g = g_in[j] * scale;
      m[j] = cfg_.beta1 * m[j] + (1.0 - cfg_.beta1) * g;
      v[j] = cfg_.beta2 * v[j] + (1.0 - cfg_.beta2) * g * g;
      value[j] -= cfg_.lr * (m[j] / bc1) / (std::sqrt(v[j] / bc2) + cfg_.eps);
    }
  }
  return norm;
}

double evaluate_loss(const Model& model,
                     const std::vector<TrajectoryPair>& pairs) {
  if (pairs.empty()) throw ValidationError("evaluate_loss: empty pair set");
  const std::vector<PreparedPair> prepared = prepare_pairs(model, pairs);
  std::vector<double> losses(pairs.size());
  parallel_for_rethrow(pairs.size(), [&](std::size_t i) {
    losses[i] = forced_loss(model, prepared[i], nullptr, 1.0, nullptr, 1.0);
  });
  double sum = 0.0;
  for (double l : losses) sum += l;
  return sum / static_cast<double>(pairs.size());
}

ValStats validate_split(const Model& model,
                        const std::vector<TrajectoryPair>& pairs) {
  if (pairs.empty()) throw ValidationError("validate_split: empty pair set");
  std::vector<MapTrajectory> recovered(pairs.size());
  parallel_for_rethrow(pairs.size(), [&](std::size_t i) {
    recovered[i] = recover(model, pairs[i].first);
  });
  std::vector<MapTrajectory> targets;
  targets.reserve(pairs.size());
  for (const auto& p : pairs) targets.push_back(p.second);
  const EvalReport rep = evaluate(*model.net, targets, recovered);
  return {rep.recall, rep.accuracy, rep.mae_m};
}

std::vector<EpochStats> fit(Model& model, const DatasetSplit& splits,
                            const TrainConfig& cfg, const StopProbe& stop) {
  if (splits.train.empty()) throw ValidationError("fit: empty training split");
  if (cfg.epochs == 0 || cfg.batch_size == 0)
    throw ValidationError("fit: epochs and batch_size must be positive");

  const std::vector<PreparedPair> prepared = prepare_pairs(model, splits.train);
  const std::size_t n = prepared.size();

  Adam opt(model.store, cfg.adam);

  std::ofstream log;
  if (!cfg.log_path.empty()) {
    log.open(cfg.log_path, cfg.append_log ? std::ios::app : std::ios::out);
    if (!log) throw DataError("fit: cannot write log " + cfg.log_path);
    if (!cfg.append_log)
      log << "epoch,train_loss,val_recall,val_accuracy,val_mae\n";
    log.precision(17);
  }

  // One gradient buffer per thread; reduced in thread order after each
  // batch so the result does not depend on scheduling jitter.
  std::vector<std::vector<Mat>> sinks;
  for (int t = 0; t < par::max_threads(); ++t)
    sinks.push_back(model.store.make_grad_buffers());

  std::vector<std::size_t> order(n);
  std::iota(order.begin(), order.end(), std::size_t{0});

  std::vector<EpochStats> history;
  double best_val = -1.0;
  for (std::size_t e = 1; e <= cfg.epochs; ++e) {
    const std::size_t epoch = cfg.start_epoch + e;
    // Fisher-Yates keyed on the absolute epoch so resumed runs shuffle
    // the same way a continuous run would.
    std::iota(order.begin(), order.end(), std::size_t{0});
    Rng shuffle_rng(Rng::derive(cfg.seed, kTagShuffle, epoch));
    for (std::size_t i = n - 1; i > 0; --i)
      std::swap(order[i], order[shuffle_rng.integer(i + 1)]);

    double loss_sum = 0.0;
    for (std::size_t start = 0; start < n; start += cfg.batch_size) {
      const std::size_t bsz = std::min(cfg.batch_size, n - start);
      for (auto& sink : sinks)
        for (auto& g : sink) std::fill(g.data.begin(), g.data.end(), 0.0);

      std::vector<double> losses(bsz);
      parallel_for_rethrow(bsz, [&](std::size_t i) {
        const std::size_t idx = order[start + i];
        // The forcing coin is tied to (seed, epoch, pair) so the stream
        // is independent of batch boundaries and thread assignment.
        Rng coin(Rng::derive(cfg.seed, kTagCoin, epoch, idx));
        losses[i] = forced_loss(model, prepared[idx], &coin,
                                model.config.tf_ratio,
                                &sinks[static_cast<std::size_t>(par::thread_index())],
                                1.0 / static_cast<double>(bsz));
      });
      for (double l : losses) {
        if (!std::isfinite(l))
          throw DivergenceError("fit: non-finite loss at epoch " +
                                std::to_string(epoch));
        loss_sum += l;
      }
      for (std::size_t t = 1; t < sinks.size(); ++t)
        for (std::size_t p = 0; p < sinks[0].size(); ++p)
          ad::add_in_place(sinks[0][p], sinks[t][p]);
      opt.step(sinks[0], cfg.clip_norm);
    }

    EpochStats st;
    st.epoch = epoch;
    st.train_loss = loss_sum / static_cast<double>(n);
    if (!splits.valid.empty()) {
      const ValStats v = validate_split(model, splits.valid);
      st.val_recall = v.recall;
      st.val_accuracy = v.accuracy;
      st.val_mae = v.mae_m;
    }
    if (log.is_open()) {
      log << st.epoch << ',' << st.train_loss << ',' << st.val_recall << ','
          << st.val_accuracy << ',' << st.val_mae << '\n';
      log.flush();
    }
    history.push_back(st);

    if (!cfg.checkpoint_path.empty()) {
      if (splits.valid.empty()) {
        model.save(cfg.checkpoint_path);  // no validation: keep latest
      } else if (st.val_accuracy > best_val) {
        best_val = st.val_accuracy;
        model.save(cfg.checkpoint_path);
      }
    }
    if (stop && stop(model, st)) break;
  }
  return history;
}

}  // namespace trajrec
