#pragma once

#include <cstddef>
#include <string>
#include <vector>

#include "trajrec/autodiff.hpp"
#include "trajrec/rng.hpp"

namespace trajrec {

// Time-aware multi-head attention: keys are evolved to each query's
// timestamp by a closed-form continuous dynamic before the dot product,
//   key_j(dt) = sig(-xi1(k_j)*dt) . xi2(k_j) + (1 - sig) . xi3(k_j)
// with xi_i three affine lecun-tanh maps shared across heads. A vanilla
// switch replaces the evolved keys with plain scaled dot-product
// attention (the "full attention" ablation and the degenerate-time
// reference).

inline constexpr double kLayerNormEps = 1e-8;

struct CfcParams {
  ad::Param* w1 = nullptr;  // d_h x d_h
  ad::Param* b1 = nullptr;  // 1 x d_h
  ad::Param* w2 = nullptr;
  ad::Param* b2 = nullptr;
  ad::Param* w3 = nullptr;
  ad::Param* b3 = nullptr;
  // Identity fixed point: skip the lecun_tanh so xi maps can be exact
  // identities, making key(0) == key. Used by the vanilla-reduction
  // check; normal training keeps the saturating activation.
  bool linear_activation = false;

  static CfcParams create(ad::ParamStore& store, const std::string& prefix,
                          std::size_t dh);
  void randomize(Rng& rng, std::size_t dh);
  void set_identity(std::size_t dh);
};

struct AttentionParams {
  std::vector<ad::Param*> wq, wk, wv;  // per head, d x d_h
  ad::Param* wo = nullptr;             // d x d
  CfcParams cfc;

  static AttentionParams create(ad::ParamStore& store,
                                const std::string& prefix, std::size_t d,
                                std::size_t heads);
  void randomize(Rng& rng);
};

struct FfnParams {
  ad::Param* w1 = nullptr;  // d x d_ff
  ad::Param* b1 = nullptr;
  ad::Param* w2 = nullptr;  // d_ff x d
  ad::Param* b2 = nullptr;

  static FfnParams create(ad::ParamStore& store, const std::string& prefix,
                          std::size_t d, std::size_t d_ff);
  void randomize(Rng& rng);
};

struct LayerNormParams {
  ad::Param* gain = nullptr;  // 1 x d, starts at 1
  ad::Param* bias = nullptr;  // 1 x d, starts at 0

  static LayerNormParams create(ad::ParamStore& store,
                                const std::string& prefix, std::size_t d);
  void reset(std::size_t d);
};

// One post-norm block: LN(attend(q, kv) + q), then LN(FFN + residual).
// Encoder layers use it with q == kv; decoder layers with a single
// query row against the encoder memory.
struct TransformerLayerParams {
  AttentionParams attn;
  FfnParams ffn;
  LayerNormParams norm_attn, norm_ffn;

  static TransformerLayerParams create(ad::ParamStore& store,
                                       const std::string& prefix,
                                       std::size_t d, std::size_t heads,
                                       std::size_t d_ff);
  void randomize(Rng& rng, std::size_t d);
};

// Signed time gaps in target-interval units: dt[i][j] = (tq[i]-tk[j])/eps.
ad::Mat dt_matrix(const std::vector<double>& t_q, const std::vector<double>& t_k,
                  double eps_tau_s);

// Standard sinusoidal table: PE[pos][2i] = sin(pos/10000^(2i/d)).
ad::Mat positional_encoding(std::size_t m, std::size_t d);

// The three xi transforms of a key matrix (rows = keys).
struct CfcPre {
  ad::Var xi1, xi2, xi3;
};
CfcPre cfc_transform(ad::Tape& tape, const CfcParams& params, ad::Var keys);

// Closed-form evolution of every key row by a shared gap dt.
ad::Var cfc_evolve(ad::Tape& tape, const CfcParams& params, ad::Var keys,
                   double dt);

// Per-head projected keys/values (and xi transforms unless vanilla),
// computed once per memory and reused across decoder steps.
struct KeyValueCache {
  std::vector<ad::Var> keys, values;
  std::vector<CfcPre> pre;  // empty in vanilla mode
  bool vanilla = false;
};
KeyValueCache project_keys_values(ad::Tape& tape, const AttentionParams& params,
                                  ad::Var kv_in, bool vanilla);

// Multi-head attention of q_in against a projected cache. dt must be
// l_q x l_k. attn_out, when given, receives one l_q x l_k weight matrix
// per head.
ad::Var attend(ad::Tape& tape, const AttentionParams& params,
               const KeyValueCache& cache, ad::Var q_in, const ad::Mat& dt,
               std::vector<ad::Mat>* attn_out = nullptr);

// Self variant: x attends over itself at its own timestamps.
ad::Var ta_mha_self(ad::Tape& tape, const AttentionParams& params, ad::Var x,
                    const ad::Mat& dt, bool vanilla,
                    std::vector<ad::Mat>* attn_out = nullptr);

// Shared post-norm block over a prebuilt cache.
ad::Var transformer_block(ad::Tape& tape, const TransformerLayerParams& params,
                          const KeyValueCache& cache, ad::Var q_in,
                          const ad::Mat& dt);

// Encoder layer: self-attention block at timestamps t (dt precomputed).
ad::Var encoder_layer(ad::Tape& tape, const TransformerLayerParams& params,
                      ad::Var x, const ad::Mat& dt_self, bool vanilla);

}  // namespace trajrec
