#pragma once

#include <cstddef>
#include <vector>

#include "trajrec/autodiff.hpp"
#include "trajrec/rng.hpp"
#include "trajrec/road_network.hpp"

namespace trajrec {

// Continuous-time road embedding: stacked GATv2 layers over the segment
// graph produce S_bar, two linear heads split it into a static part
// (shat) and per-dimension frequencies (omega), and time2vec fuses a
// minutes-of-day timestamp into the final per-segment state
//   state(e, t) = t2v(t; omega_e, bias) + shat_e.

struct RoadStateConfig {
  std::size_t dim = 256;    // d, embedding width
  std::size_t layers = 2;   // P, stacked GAT layers
  std::size_t heads = 8;    // K, attention heads per layer (K | d)
  double leaky_slope = 0.2;
};

struct RoadStateParams {
  ad::Param* segments = nullptr;               // |V| x d initial table
  std::vector<std::vector<ad::Param*>> gat_w;  // [layer][head], d x d_h
  std::vector<std::vector<ad::Param*>> gat_a;  // [layer][head], 1 x 2*d_h
  ad::Param* static_w = nullptr;               // d x d, S_bar -> shat
  ad::Param* static_b = nullptr;               // 1 x d
  ad::Param* freq_w = nullptr;                 // d x d, S_bar -> omega
  ad::Param* freq_b = nullptr;                 // 1 x d
  ad::Param* t2v_bias = nullptr;               // 1 x d shared phases

  // Registers all parameters (zero-filled) under "road." names.
  static RoadStateParams create(ad::ParamStore& store,
                                const RoadStateConfig& cfg,
                                std::size_t n_segments);
  // Scales: segments N(0, 1/d); GAT and static head Xavier; frequency
  // head scaled by 2*pi/1440 so initial periods are day-scale; t2v
  // phases uniform in [-pi, pi).
  void randomize(Rng& rng, const RoadStateConfig& cfg);
  // Heads become identity maps (W = I, b = 0) so shat == omega == S_bar.
  void set_identity_heads(const RoadStateConfig& cfg);
};

// Evaluated field for one tape: row e of shat/omega belongs to the
// segment with dense index e.
struct RoadField {
  ad::Var shat;
  ad::Var omega;
  ad::Var bias;  // 1 x d
};

// Minutes since local midnight, the time unit fed to time2vec.
double minutes_of_day(double unix_seconds);

// Attended set per node: directed in-neighbors plus the node itself,
// in dense-index space. The adjacency must outlive any tape whose
// backward pass uses it (gat_head keeps a pointer, not a copy).
ad::CsrAdjacency gat_adjacency(const RoadNetwork& net);

// P stacked GATv2 layers applied to the segment table -> S_bar (|V| x d).
ad::Var gat_stack(ad::Tape& tape, const RoadStateParams& params,
                  const RoadStateConfig& cfg, const ad::CsrAdjacency& adj);

// Full field: S_bar through the two linear heads. With time_invariant
// the frequency head is replaced by zeros, freezing the field in t.
RoadField build_field(ad::Tape& tape, const RoadStateParams& params,
                      const RoadStateConfig& cfg, const ad::CsrAdjacency& adj,
                      bool time_invariant = false);

// Rows of the continuous-time state: one output row per (segment dense
// index, minutes-of-day) pair. t2v convention: out[0] = w0*t + b0 stays
// linear, out[1..] = sin(w_i*t + b_i).
ad::Var road_state_rows(ad::Tape& tape, const RoadField& field,
                        const std::vector<std::size_t>& seg_indices,
                        const std::vector<double>& minutes);

}  // namespace trajrec
