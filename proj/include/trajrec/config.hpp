#pragma once

#include <cstdint>
#include <string>

#include "trajrec/model.hpp"
#include "trajrec/training.hpp"

namespace trajrec {

// One flat configuration for every command. Values resolve with
// precedence: command-line --set overrides > config file > defaults.
struct RunConfig {
  // Files and directories.
  std::string network;       // road segments CSV
  std::string input;         // raw trajectories JSONL (prepare/recover)
  std::string dataset_dir;   // prepared split files (train/eval/simeval)
  std::string checkpoint;    // model weights
  std::string out_dir = "out";

  // Model dimensions.
  std::size_t dim = 256;            // d
  std::size_t attn_heads = 8;       // H
  std::size_t encoder_layers = 2;   // M
  std::size_t decoder_layers = 1;   // N
  std::size_t gat_layers = 2;       // P
  std::size_t gat_heads = 8;        // K
  std::size_t ffn_dim = 0;          // 0 -> 4*dim

  // Geometry and sampling.
  double eta_m = 400.0;
  double gamma_m = 30.0;
  double mask_radius_m = 100.0;
  double eps_tau_s = 15.0;
  double keep_prob = 0.125;

  // Optimization.
  double lambda_ratio = 1.0;
  double tf_ratio = 0.5;
  double lr = 1e-3;
  std::size_t batch = 64;
  std::size_t epochs = 30;
  double clip_norm = 5.0;

  // Map matching (prepare).
  double hmm_sigma_m = 20.0;
  double hmm_beta = 5.0;
  double hmm_radius_m = 100.0;

  // Synthetic generation (synth).
  std::size_t synth_count = 200;
  int grid_rows = 4;
  int grid_cols = 4;
  double grid_spacing_m = 333.0;
  int walk_min_segments = 6;
  int walk_max_segments = 12;

  // Ablation switches.
  bool vanilla_attention = false;
  bool time_invariant_field = false;

  std::uint64_t seed = 0;

  void validate() const;
  ModelConfig model() const;
  TrainConfig train() const;  // log/checkpoint paths left empty

  // Flat JSON object; unknown keys are rejected so typos surface.
  std::string to_json() const;
  static RunConfig from_json(const std::string& text);
  static RunConfig from_file(const std::string& path);

  // Applies one `key=value` override using the JSON field names.
  void set(const std::string& assignment);
};

}  // namespace trajrec
