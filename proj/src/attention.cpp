#include "trajrec/attention.hpp"

#include <cmath>

#include "trajrec/errors.hpp"

namespace trajrec {

namespace {

void fill_normal(ad::Mat& m, Rng& rng, double stddev) {
  for (double& x : m.data) x = stddev * rng.normal();
}

}  // namespace

CfcParams CfcParams::create(ad::ParamStore& store, const std::string& prefix,
                            std::size_t dh) {
  CfcParams p;
  p.w1 = &store.create(prefix + ".w1", dh, dh);
  p.b1 = &store.create(prefix + ".b1", 1, dh);
  p.w2 = &store.create(prefix + ".w2", dh, dh);
  p.b2 = &store.create(prefix + ".b2", 1, dh);
  p.w3 = &store.create(prefix + ".w3", dh, dh);
  p.b3 = &store.create(prefix + ".b3", 1, dh);
  return p;
}

void CfcParams::randomize(Rng& rng, std::size_t dh) {
  const double s = 1.0 / std::sqrt(static_cast<double>(dh));
  fill_normal(w1->value, rng, s);
  fill_normal(w2->value, rng, s);
  fill_normal(w3->value, rng, s);
  b1->value = ad::Mat(1, dh, 0.0);
  b2->value = ad::Mat(1, dh, 0.0);
  b3->value = ad::Mat(1, dh, 0.0);
  linear_activation = false;
}

void CfcParams::set_identity(std::size_t dh) {
  w1->value = ad::Mat::eye(dh);
  w2->value = ad::Mat::eye(dh);
  w3->value = ad::Mat::eye(dh);
  b1->value = ad::Mat(1, dh, 0.0);
  b2->value = ad::Mat(1, dh, 0.0);
  b3->value = ad::Mat(1, dh, 0.0);
  linear_activation = true;
}

AttentionParams AttentionParams::create(ad::ParamStore& store,
                                        const std::string& prefix,
                                        std::size_t d, std::size_t heads) {
  if (heads == 0 || d % heads != 0) {
    throw ValidationError("attention head count must divide the model dim");
  }
  const std::size_t dh = d / heads;
  AttentionParams p;
  for (std::size_t h = 0; h < heads; ++h) {
    const std::string tag = prefix + ".h" + std::to_string(h);
    p.wq.push_back(&store.create(tag + ".wq", d, dh));
    p.wk.push_back(&store.create(tag + ".wk", d, dh));
    p.wv.push_back(&store.create(tag + ".wv", d, dh));
  }
  p.wo = &store.create(prefix + ".wo", d, d);
  p.cfc = CfcParams::create(store, prefix + ".cfc", dh);
  return p;
}

void AttentionParams::randomize(Rng& rng) {
  const double s = 1.0 / std::sqrt(static_cast<double>(wo->value.rows));
  for (std::size_t h = 0; h < wq.size(); ++h) {
    fill_normal(wq[h]->value, rng, s);
    fill_normal(wk[h]->value, rng, s);
    fill_normal(wv[h]->value, rng, s);
  }
  fill_normal(wo->value, rng, s);
  cfc.randomize(rng, wq[0]->value.cols);
}

FfnParams FfnParams::create(ad::ParamStore& store, const std::string& prefix,
                            std::size_t d, std::size_t d_ff) {
  if (d_ff < d) throw ValidationError("FFN inner width must be >= model dim");
  FfnParams p;
  p.w1 = &store.create(prefix + ".w1", d, d_ff);
  p.b1 = &store.create(prefix + ".b1", 1, d_ff);
  p.w2 = &store.create(prefix + ".w2", d_ff, d);
  p.b2 = &store.create(prefix + ".b2", 1, d);
  return p;
}

void FfnParams::randomize(Rng& rng) {
  fill_normal(w1->value, rng, 1.0 / std::sqrt(static_cast<double>(w1->value.rows)));
  fill_normal(w2->value, rng, 1.0 / std::sqrt(static_cast<double>(w2->value.rows)));
  b1->value = ad::Mat(1, w1->value.cols, 0.0);
  b2->value = ad::Mat(1, w2->value.cols, 0.0);
}

LayerNormParams LayerNormParams::create(ad::ParamStore& store,
                                        const std::string& prefix,
                                        std::size_t d) {
  LayerNormParams p;
  p.gain = &store.create(prefix + ".gain", 1, d);
  p.bias = &store.create(prefix + ".bias", 1, d);
  p.reset(d);
  return p;
}

void LayerNormParams::reset(std::size_t d) {
  gain->value = ad::Mat(1, d, 1.0);
  bias->value = ad::Mat(1, d, 0.0);
}

TransformerLayerParams TransformerLayerParams::create(ad::ParamStore& store,
                                                      const std::string& prefix,
                                                      std::size_t d,
                                                      std::size_t heads,
                                                      std::size_t d_ff) {
  TransformerLayerParams p;
  p.attn = AttentionParams::create(store, prefix + ".attn", d, heads);
  p.ffn = FfnParams::create(store, prefix + ".ffn", d, d_ff);
  p.norm_attn = LayerNormParams::create(store, prefix + ".norm_attn", d);
  p.norm_ffn = LayerNormParams::create(store, prefix + ".norm_ffn", d);
  return p;
}

void TransformerLayerParams::randomize(Rng& rng, std::size_t d) {
  attn.randomize(rng);
  ffn.randomize(rng);
  norm_attn.reset(d);
  norm_ffn.reset(d);
}

ad::Mat dt_matrix(const std::vector<double>& t_q, const std::vector<double>& t_k,
                  double eps_tau_s) {
  if (eps_tau_s <= 0) throw ValidationError("dt_matrix needs eps_tau > 0");
  ad::Mat dt(t_q.size(), t_k.size());
  for (std::size_t i = 0; i < t_q.size(); ++i)
    for (std::size_t j = 0; j < t_k.size(); ++j)
      dt.at(i, j) = (t_q[i] - t_k[j]) / eps_tau_s;
  return dt;
}

ad::Mat positional_encoding(std::size_t m, std::size_t d) {
  if (m < 1 || d < 1) throw ValidationError("positional encoding needs m,d >= 1");
  if (d % 2 != 0) throw ValidationError("positional encoding needs even d");
  ad::Mat pe(m, d);
  for (std::size_t pos = 0; pos < m; ++pos) {
    for (std::size_t i = 0; i < d / 2; ++i) {
      const double angle =
          static_cast<double>(pos) /
          std::pow(10000.0, 2.0 * static_cast<double>(i) / static_cast<double>(d));
      pe.at(pos, 2 * i) = std::sin(angle);
      pe.at(pos, 2 * i + 1) = std::cos(angle);
    }
  }
  return pe;
}

CfcPre cfc_transform(ad::Tape& tape, const CfcParams& params, ad::Var keys) {
  auto map = [&](ad::Param* w, ad::Param* b) {
    ad::Var affine = tape.add_row(tape.matmul(keys, tape.param(*w)), tape.param(*b));
    return params.linear_activation ? affine : tape.lecun_tanh(affine);
  };
  return CfcPre{map(params.w1, params.b1), map(params.w2, params.b2),
                map(params.w3, params.b3)};
}

ad::Var cfc_evolve(ad::Tape& tape, const CfcParams& params, ad::Var keys,
                   double dt) {
  CfcPre pre = cfc_transform(tape, params, keys);
  ad::Var gate = tape.sigmoid(tape.scale(pre.xi1, -dt));
  return tape.add(pre.xi3, tape.mul(gate, tape.sub(pre.xi2, pre.xi3)));
}

KeyValueCache project_keys_values(ad::Tape& tape, const AttentionParams& params,
                                  ad::Var kv_in, bool vanilla) {
  if (kv_in.rows() == 0) throw ValidationError("attention memory is empty");
  KeyValueCache cache;
  cache.vanilla = vanilla;
  for (std::size_t h = 0; h < params.wq.size(); ++h) {
    ad::Var k = tape.matmul(kv_in, tape.param(*params.wk[h]));
    cache.keys.push_back(k);
    cache.values.push_back(tape.matmul(kv_in, tape.param(*params.wv[h])));
    if (!vanilla) cache.pre.push_back(cfc_transform(tape, params.cfc, k));
  }
  return cache;
}

ad::Var attend(ad::Tape& tape, const AttentionParams& params,
               const KeyValueCache& cache, ad::Var q_in, const ad::Mat& dt,
               std::vector<ad::Mat>* attn_out) {
  const std::size_t heads = params.wq.size();
  const std::size_t dh = params.wq[0]->value.cols;
  const double inv_sqrt = 1.0 / std::sqrt(static_cast<double>(dh));
  if (attn_out) attn_out->assign(heads, ad::Mat());

  std::vector<ad::Var> outs;
  outs.reserve(heads);
  for (std::size_t h = 0; h < heads; ++h) {
    ad::Var q = tape.matmul(q_in, tape.param(*params.wq[h]));
    if (cache.vanilla) {
      ad::Var scores =
          tape.scale(tape.matmul(q, tape.transpose(cache.keys[h])), inv_sqrt);
      ad::Var alpha = tape.softmax_rows(scores);
      if (attn_out) (*attn_out)[h] = alpha.value();
      outs.push_back(tape.matmul(alpha, cache.values[h]));
    } else {
      const CfcPre& pre = cache.pre[h];
      outs.push_back(tape.evolved_key_attention(
          q, pre.xi1, pre.xi2, pre.xi3, cache.values[h], dt, inv_sqrt,
          attn_out ? &(*attn_out)[h] : nullptr));
    }
  }
  ad::Var cat = heads == 1 ? outs[0] : tape.concat_cols(outs);
  return tape.matmul(cat, tape.param(*params.wo));
}

ad::Var ta_mha_self(ad::Tape& tape, const AttentionParams& params, ad::Var x,
                    const ad::Mat& dt, bool vanilla,
                    std::vector<ad::Mat>* attn_out) {
  KeyValueCache cache = project_keys_values(tape, params, x, vanilla);
  return attend(tape, params, cache, x, dt, attn_out);
}

ad::Var transformer_block(ad::Tape& tape, const TransformerLayerParams& params,
                          const KeyValueCache& cache, ad::Var q_in,
                          const ad::Mat& dt) {
  ad::Var mixed = attend(tape, params.attn, cache, q_in, dt);
  ad::Var h = tape.layer_norm_rows(tape.add(mixed, q_in),
                                   tape.param(*params.norm_attn.gain),
                                   tape.param(*params.norm_attn.bias),
                                   kLayerNormEps);
  ad::Var inner = tape.relu(
      tape.add_row(tape.matmul(h, tape.param(*params.ffn.w1)),
                   tape.param(*params.ffn.b1)));
  ad::Var ff = tape.add_row(tape.matmul(inner, tape.param(*params.ffn.w2)),
                            tape.param(*params.ffn.b2));
  return tape.layer_norm_rows(tape.add(ff, h),
                              tape.param(*params.norm_ffn.gain),
                              tape.param(*params.norm_ffn.bias), kLayerNormEps);
}

ad::Var encoder_layer(ad::Tape& tape, const TransformerLayerParams& params,
                      ad::Var x, const ad::Mat& dt_self, bool vanilla) {
  KeyValueCache cache = project_keys_values(tape, params.attn, x, vanilla);
  return transformer_block(tape, params, cache, x, dt_self);
}

}  // namespace trajrec
