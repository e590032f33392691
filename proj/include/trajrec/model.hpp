#pragma once

#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include "trajrec/attention.hpp"
#include "trajrec/autodiff.hpp"
#include "trajrec/features.hpp"
#include "trajrec/rng.hpp"
#include "trajrec/road_network.hpp"
#include "trajrec/road_state.hpp"
#include "trajrec/trajectory.hpp"

namespace trajrec {

// Sparse-to-dense trajectory recovery model: the continuous-time road
// field feeds a time-aware Transformer encoder over the raw points, and
// a constraint-masked autoregressive decoder emits one (segment, ratio)
// pair per step of the target-rate time grid.

struct ModelConfig {
  std::size_t dim = 256;           // d
  std::size_t gat_layers = 2;      // stacked GAT layers on the road graph
  std::size_t gat_heads = 8;
  std::size_t encoder_layers = 2;  // M
  std::size_t decoder_layers = 1;  // N
  std::size_t attn_heads = 8;      // H
  std::size_t ffn_dim = 0;         // 0 -> 4*dim
  double eta_m = 400.0;            // subregion radius for features
  double gamma_m = 30.0;           // distance kernel width
  double eps_tau_s = 15.0;         // target sampling interval
  double lambda_ratio = 1.0;       // ratio-loss weight
  double tf_ratio = 0.5;           // teacher-forcing probability
  double mask_radius_m = 100.0;    // constraint-mask candidate radius
  double leaky_slope = 0.2;
  bool vanilla_attention = false;   // drop the key dynamics (ablation)
  bool time_invariant_field = false;  // freeze omega at 0 (ablation)

  std::size_t ffn() const { return ffn_dim ? ffn_dim : 4 * dim; }
  void validate() const;
  std::string to_json() const;
  static ModelConfig from_json(const std::string& text);
};

struct ModelParams {
  RoadStateParams road;
  std::vector<TransformerLayerParams> encoder;
  std::vector<TransformerLayerParams> decoder;
  ad::Param* predictor = nullptr;  // |V| x d segment logit rows
  ad::Param* ratio_w1 = nullptr;   // 2d x d
  ad::Param* ratio_b1 = nullptr;   // 1 x d
  ad::Param* ratio_w2 = nullptr;   // d x 1, zero-initialized -> r = 0.5
  ad::Param* ratio_b2 = nullptr;   // 1 x 1
  ad::Param* emb_w = nullptr;      // (2d+1) x d next-step embedding
  ad::Param* emb_b = nullptr;      // 1 x d

  static ModelParams create(ad::ParamStore& store, const ModelConfig& cfg,
                            std::size_t n_segments);
  void randomize(Rng& rng, const ModelConfig& cfg);
};

struct Model {
  ModelConfig config;
  ad::ParamStore store;
  ModelParams params;
  const RoadNetwork* net = nullptr;
  ad::CsrAdjacency adjacency;

  static Model build(const ModelConfig& cfg, const RoadNetwork& net,
                     std::uint64_t seed);

  // Versioned binary checkpoint: header + named float32 blobs. Loading
  // widens back to float64, so two loads always agree bit for bit.
  void save(const std::string& path) const;
  static Model load(const std::string& path, const RoadNetwork& net);
};

// Decode timestamps t1, t1+eps, ..., n = floor((t_m-t1)/eps)+1.
std::vector<double> make_decode_grid(const RawTrajectory& raw, double eps_tau_s);

// Per decode step, a nonnegative weight per segment. Steps that fall
// within eps/2 of an input point weight segments by the distance kernel
// inside mask_radius_m; rows that end up all-zero, and unobserved steps,
// are all-ones.
struct ConstraintMask {
  ad::Mat rows;               // n x |V|
  std::vector<double> t_de;   // the decode grid the rows align with
};
ConstraintMask build_constraint_mask(const RoadNetwork& net,
                                     const RawTrajectory& raw,
                                     const std::vector<double>& t_de,
                                     double eps_tau_s, double mask_radius_m,
                                     double gamma_m);

struct EncodeResult {
  ad::Var memory;             // m x d
  std::vector<double> t_en;   // input timestamps, unix seconds
  RoadField field;            // reused by the decoder's road states
};
EncodeResult encode(ad::Tape& tape, const Model& model,
                    const RawTrajectory& raw);

// Mean of the memory rows: the decoder's step-0 state.
ad::Var init_decoder_state(ad::Tape& tape, ad::Var memory);

struct DecodeOptions {
  const MapTrajectory* teacher = nullptr;  // enables the loss terms
  double tf_ratio = 0.5;
  Rng* coin = nullptr;                     // per-step forcing flips
  bool keep_distributions = false;         // stash post-mask rows
};

struct DecodeOutput {
  std::vector<std::size_t> segments;      // dense indices, greedy argmax
  std::vector<double> ratios;
  std::vector<double> t_de;
  std::vector<ad::Mat> distributions;     // n x (1 x |V|) when kept
  bool has_loss = false;
  ad::Var loss_id, loss_ratio, loss_total;  // 1x1 nodes when has_loss
};

DecodeOutput decode(ad::Tape& tape, const Model& model,
                    const EncodeResult& enc, const ConstraintMask& mask,
                    const DecodeOptions& opts = {});

// End to end greedy recovery onto the eps_tau grid.
MapTrajectory recover(const Model& model, const RawTrajectory& raw);

}  // namespace trajrec
