#include "trajrec/cli.hpp"

#include <algorithm>
#include <exception>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <mutex>
#include <optional>
#include <sstream>

#include "CLI11.hpp"
#include "json.hpp"
#include "trajrec/config.hpp"
#include "trajrec/dataset.hpp"
#include "trajrec/errors.hpp"
#include "trajrec/map_matching.hpp"
#include "trajrec/metrics.hpp"
#include "trajrec/model.hpp"
#include "trajrec/parallel.hpp"
#include "trajrec/synthetic.hpp"
#include "trajrec/training.hpp"

namespace trajrec {

namespace {

using nlohmann::json;

// Options shared by every subcommand.
struct CommonOpts {
  std::string config_path;
  std::vector<std::string> sets;
  std::optional<std::uint64_t> seed;
  std::optional<std::string> out;
};

void add_common(CLI::App* cmd, CommonOpts& o) {
  cmd->add_option("--config", o.config_path, "JSON config file");
  cmd->add_option("--set", o.sets, "KEY=VALUE config override (repeatable)");
  cmd->add_option("--seed", o.seed, "random seed (overrides config)");
  cmd->add_option("--out", o.out, "output directory (overrides config)");
}

RunConfig resolve(const CommonOpts& o) {
  RunConfig cfg =
      o.config_path.empty() ? RunConfig{} : RunConfig::from_file(o.config_path);
  for (const auto& s : o.sets) cfg.set(s);
  if (o.seed) cfg.seed = *o.seed;
  if (o.out) cfg.out_dir = *o.out;
  cfg.validate();
  std::filesystem::create_directories(cfg.out_dir);
  return cfg;
}

void write_text(const std::string& path, const std::string& text) {
  std::ofstream f(path, std::ios::binary);
  if (!f) throw DataError("cannot write " + path);
  f << text;
}

void write_manifest(const RunConfig& cfg, const std::string& command,
                    json extra) {
  json m;
  m["command"] = command;
  m["config"] = json::parse(cfg.to_json());
  m["outputs"] = std::move(extra);
  write_text(cfg.out_dir + "/" + command + "_manifest.json", m.dump(2) + "\n");
}

SeqMetric metric_by_name(const std::string& name) {
  if (name == "lcss")
    return [](const SegmentSeq& a, const SegmentSeq& b) {
      return lcss_distance(a, b);
    };
  if (name == "edr")
    return [](const SegmentSeq& a, const SegmentSeq& b) {
      return edr_distance(a, b);
    };
  throw ValidationError("unknown metric '" + name + "' (expected lcss or edr)");
}

std::size_t count_log_epochs(const std::string& path) {
  std::ifstream f(path);
  if (!f) throw DataError("resume: cannot read existing log " + path);
  std::string line;
  std::size_t rows = 0;
  while (std::getline(f, line))
    if (!line.empty()) ++rows;
  if (rows == 0) throw DataError("resume: log " + path + " is empty");
  return rows - 1;  // minus header
}

int cmd_synth(const RunConfig& cfg) {
  auto segments = make_grid_segments(cfg.grid_rows, cfg.grid_cols,
                                     cfg.grid_spacing_m);
  const std::string net_path = cfg.out_dir + "/network.csv";
  save_segments_csv(segments, net_path);
  RoadNetwork net = RoadNetwork::from_segments(std::move(segments));

  SyntheticParams sp;
  sp.min_segments = cfg.walk_min_segments;
  sp.max_segments = cfg.walk_max_segments;
  sp.eps_tau_s = cfg.eps_tau_s;
  const auto truths = generate_synthetic(net, cfg.synth_count, sp, cfg.seed);

  // Dense raw traces derived from the ground-truth geometry: the
  // prepare pipeline's natural input.
  std::vector<RawTrajectory> raws;
  raws.reserve(truths.size());
  for (const auto& mt : truths) {
    RawTrajectory raw;
    raw.id = mt.id;
    for (const auto& q : mt.points) {
      const LonLat c = net.point_at({q.segment, q.ratio});
      raw.points.push_back({c.lon, c.lat, q.t});
    }
    raws.push_back(std::move(raw));
  }
  const std::string truth_path = cfg.out_dir + "/truth.jsonl";
  const std::string raw_path = cfg.out_dir + "/raw.jsonl";
  save_map_trajectories(truths, truth_path);
  save_raw_trajectories(raws, raw_path);

  json extra;
  extra["network"] = net_path;
  extra["truth"] = truth_path;
  extra["raw"] = raw_path;
  extra["segments"] = net.size();
  extra["trajectories"] = truths.size();
  write_manifest(cfg, "synth", std::move(extra));
  std::cout << "synth: " << truths.size() << " trajectories over "
            << net.size() << " segments -> " << cfg.out_dir << "\n";
  return 0;
}

int cmd_prepare(const RunConfig& cfg) {
  if (cfg.network.empty() || cfg.input.empty())
    throw ValidationError("prepare: config must set network and input");
  RoadNetwork net = RoadNetwork::load(cfg.network);
  const auto raws = load_raw_trajectories(cfg.input);
  if (raws.empty()) throw DataError("prepare: no trajectories in " + cfg.input);

  HmmParams hmm{cfg.hmm_sigma_m, cfg.hmm_beta, cfg.hmm_radius_m};
  std::vector<TrajectoryPair> pairs(raws.size());
  std::exception_ptr err;
  std::mutex err_mutex;
  par::parallel_for(raws.size(), [&](std::size_t i) {
    try {
      const MapTrajectory matched = hmm_map_match(net, raws[i], hmm);
      MapTrajectory dense =
          interpolate_to_interval(net, matched, cfg.eps_tau_s);
      RawTrajectory sparse =
          downsample(net, dense, cfg.keep_prob,
                     Rng::derive(cfg.seed, 0x646f776eULL,
                                 static_cast<std::uint64_t>(raws[i].id)));
      pairs[i] = {std::move(sparse), std::move(dense)};
    } catch (const Error& e) {
      std::lock_guard<std::mutex> lock(err_mutex);
      if (!err)
        err = std::make_exception_ptr(
            DataError("trajectory " + std::to_string(raws[i].id) + ": " +
                      e.what()));
    } catch (...) {
      std::lock_guard<std::mutex> lock(err_mutex);
      if (!err) err = std::current_exception();
    }
  });
  if (err) std::rethrow_exception(err);

  // Achieved input/target interval ratio, pooled over all gaps.
  double gap_sum = 0.0;
  std::size_t gap_count = 0;
  for (const auto& [raw, dense] : pairs) {
    gap_sum += raw.points.back().t - raw.points.front().t;
    gap_count += raw.points.size() - 1;
  }
  const double interval_ratio =
      gap_count ? gap_sum / static_cast<double>(gap_count) / cfg.eps_tau_s : 0.0;

  DatasetSplit splits = build_splits(std::move(pairs), cfg.seed);
  save_pairs(splits.train, cfg.out_dir, "train");
  save_pairs(splits.valid, cfg.out_dir, "valid");
  save_pairs(splits.test, cfg.out_dir, "test");

  json extra;
  extra["train"] = splits.train.size();
  extra["valid"] = splits.valid.size();
  extra["test"] = splits.test.size();
  extra["seed"] = cfg.seed;
  extra["interval_ratio"] = interval_ratio;
  write_manifest(cfg, "prepare", std::move(extra));
  std::cout << "prepare: " << splits.train.size() << "/" << splits.valid.size()
            << "/" << splits.test.size() << " train/valid/test, interval x"
            << interval_ratio << "\n";
  return 0;
}

int cmd_train(const RunConfig& cfg, const std::string& resume) {
  if (cfg.network.empty() || cfg.dataset_dir.empty())
    throw ValidationError("train: config must set network and dataset_dir");
  RoadNetwork net = RoadNetwork::load(cfg.network);
  DatasetSplit splits;
  splits.train = load_pairs(cfg.dataset_dir, "train");
  splits.valid = load_pairs(cfg.dataset_dir, "valid");

  Model model = resume.empty() ? Model::build(cfg.model(), net, cfg.seed)
                               : Model::load(resume, net);

  TrainConfig tc = cfg.train();
  tc.log_path = cfg.out_dir + "/train_log.csv";
  tc.checkpoint_path = cfg.out_dir + "/model.ckpt";
  if (!resume.empty()) {
    tc.start_epoch = count_log_epochs(tc.log_path);
    tc.append_log = true;
  }

  const auto history =
      fit(model, splits, tc, [](const Model&, const EpochStats& st) {
        std::cout << "epoch " << st.epoch << ": train_loss=" << st.train_loss
                  << " val_recall=" << st.val_recall
                  << " val_accuracy=" << st.val_accuracy
                  << " val_mae=" << st.val_mae << "\n";
        return false;
      });

  double best_acc = 0.0;
  for (const auto& st : history) best_acc = std::max(best_acc, st.val_accuracy);
  json extra;
  extra["checkpoint"] = tc.checkpoint_path;
  extra["log"] = tc.log_path;
  extra["epochs_run"] = history.size();
  extra["final_train_loss"] = history.back().train_loss;
  extra["best_val_accuracy"] = best_acc;
  write_manifest(cfg, "train", std::move(extra));
  return 0;
}

int cmd_eval(const RunConfig& cfg, const std::string& split) {
  if (cfg.network.empty() || cfg.dataset_dir.empty() || cfg.checkpoint.empty())
    throw ValidationError(
        "eval: config must set network, dataset_dir and checkpoint");
  RoadNetwork net = RoadNetwork::load(cfg.network);
  Model model = Model::load(cfg.checkpoint, net);
  const auto pairs = load_pairs(cfg.dataset_dir, split);
  if (pairs.empty()) throw DataError("eval: split '" + split + "' is empty");

  std::vector<MapTrajectory> targets, recovered(pairs.size());
  targets.reserve(pairs.size());
  for (const auto& p : pairs) targets.push_back(p.second);
  par::parallel_for_rethrow(pairs.size(), [&](std::size_t i) {
    recovered[i] = recover(model, pairs[i].first);
  });

  const EvalReport rep = evaluate(net, targets, recovered);
  write_text(cfg.out_dir + "/eval_" + split + ".json", rep.to_json() + "\n");
  std::cout << rep.to_table();
  return 0;
}

int cmd_recover(const RunConfig& cfg, const std::string& output) {
  if (cfg.network.empty() || cfg.checkpoint.empty() || cfg.input.empty())
    throw ValidationError(
        "recover: config must set network, checkpoint and input");
  RoadNetwork net = RoadNetwork::load(cfg.network);
  Model model = Model::load(cfg.checkpoint, net);
  const auto raws = load_raw_trajectories(cfg.input);

  std::vector<MapTrajectory> out;
  out.reserve(raws.size());
  std::size_t failures = 0;
  for (std::size_t i = 0; i < raws.size(); ++i) {
    try {
      out.push_back(recover(model, raws[i]));
    } catch (const Error& e) {
      ++failures;
      std::cerr << "line " << (i + 1) << " (trajectory " << raws[i].id
                << "): " << e.what() << "\n";
    }
  }
  const std::string out_path =
      output.empty() ? cfg.out_dir + "/recovered.jsonl" : output;
  save_map_trajectories(out, out_path);
  std::cout << "recover: " << out.size() << " trajectories -> " << out_path;
  if (failures) std::cout << " (" << failures << " failed)";
  std::cout << "\n";
  return 0;
}

int cmd_simeval(const RunConfig& cfg, const std::string& metric_name,
                std::vector<std::size_t> ks) {
  if (cfg.network.empty() || cfg.dataset_dir.empty() || cfg.checkpoint.empty())
    throw ValidationError(
        "simeval: config must set network, dataset_dir and checkpoint");
  if (ks.empty()) ks = {1, 5};
  std::sort(ks.begin(), ks.end());
  const SeqMetric metric = metric_by_name(metric_name);

  RoadNetwork net = RoadNetwork::load(cfg.network);
  Model model = Model::load(cfg.checkpoint, net);
  const auto pairs = load_pairs(cfg.dataset_dir, "test");

  std::vector<SegmentSeq> truth(pairs.size()), recovered(pairs.size()),
      raw_baseline(pairs.size());
  par::parallel_for_rethrow(pairs.size(), [&](std::size_t i) {
    truth[i] = segment_sequence(pairs[i].second);
    recovered[i] = segment_sequence(recover(model, pairs[i].first));
    raw_baseline[i] = raw_segment_sequence(net, pairs[i].first);
  });

  const auto r_rec = rank_eval(truth, recovered, metric, ks);
  const auto r_raw = rank_eval(truth, raw_baseline, metric, ks);

  json report;
  report["metric"] = metric_name;
  report["ks"] = ks;
  report["recovered"] = r_rec;
  report["raw_input"] = r_raw;
  report["count"] = pairs.size();
  write_text(cfg.out_dir + "/simeval.json", report.dump(2) + "\n");

  std::cout << "k     recovered  raw_input\n";
  for (std::size_t i = 0; i < ks.size(); ++i) {
    std::ostringstream row;
    row.setf(std::ios::fixed);
    row.precision(4);
    row << ks[i];
    std::cout << row.str() << "     " << r_rec[i] << "     " << r_raw[i]
              << "\n";
  }
  return 0;
}

}  // namespace

int run_cli(const std::vector<std::string>& args) {
  std::vector<std::string> copy = args;
  std::vector<char*> argv;
  argv.reserve(copy.size());
  for (auto& s : copy) argv.push_back(s.data());
  return run_cli(static_cast<int>(argv.size()), argv.data());
}

int run_cli(int argc, char** argv) {
  CLI::App app{"map-constrained sparse trajectory recovery"};
  app.require_subcommand(1);

  CommonOpts synth_o, prep_o, train_o, eval_o, rec_o, sim_o;
  std::string resume, eval_split = "test", recover_output;
  std::string sim_metric = "lcss";
  std::vector<std::size_t> sim_ks;

  CLI::App* synth =
      app.add_subcommand("synth", "generate a synthetic network + traces");
  add_common(synth, synth_o);

  CLI::App* prepare = app.add_subcommand(
      "prepare", "map-match, interpolate, downsample and split");
  add_common(prepare, prep_o);

  CLI::App* train = app.add_subcommand("train", "train a recovery model");
  add_common(train, train_o);
  train->add_option("--resume", resume, "checkpoint to continue from");

  CLI::App* eval = app.add_subcommand("eval", "evaluate a checkpoint");
  add_common(eval, eval_o);
  eval->add_option("--split", eval_split, "split name (default test)");

  CLI::App* rec =
      app.add_subcommand("recover", "recover a raw-trajectory JSONL file");
  add_common(rec, rec_o);
  rec->add_option("--output", recover_output, "recovered JSONL path");

  CLI::App* sim =
      app.add_subcommand("simeval", "similarity retrieval evaluation");
  add_common(sim, sim_o);
  sim->add_option("--metric", sim_metric, "lcss or edr");
  sim->add_option("--ks", sim_ks, "R@k cutoffs (default 1 5)");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? 0 : 2;  // help/version exit cleanly
  }

  try {
    if (app.got_subcommand(synth)) return cmd_synth(resolve(synth_o));
    if (app.got_subcommand(prepare)) return cmd_prepare(resolve(prep_o));
    if (app.got_subcommand(train)) return cmd_train(resolve(train_o), resume);
    if (app.got_subcommand(eval)) return cmd_eval(resolve(eval_o), eval_split);
    if (app.got_subcommand(rec)) return cmd_recover(resolve(rec_o), recover_output);
    if (app.got_subcommand(sim))
      return cmd_simeval(resolve(sim_o), sim_metric, sim_ks);
  } catch (const ValidationError& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 2;
  } catch (const ParseError& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 3;
  } catch (const DataError& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 3;
  } catch (const DivergenceError& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 4;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  }
  return 0;
}

}  // namespace trajrec
