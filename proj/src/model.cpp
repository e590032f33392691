#include "trajrec/model.hpp"

#include <algorithm>
#include <cmath>
#include <cstring>
#include <fstream>

#include "json.hpp"
#include "trajrec/errors.hpp"

namespace trajrec {

namespace {

using nlohmann::json;

RoadStateConfig road_config(const ModelConfig& cfg) {
  RoadStateConfig rc;
  rc.dim = cfg.dim;
  rc.layers = cfg.gat_layers;
  rc.heads = cfg.gat_heads;
  rc.leaky_slope = cfg.leaky_slope;
  return rc;
}

void fill_normal(ad::Mat& m, Rng& rng, double stddev) {
  for (double& x : m.data) x = stddev * rng.normal();
}

std::size_t argmax_row(const ad::Mat& row) {
  std::size_t best = 0;
  for (std::size_t j = 1; j < row.cols; ++j)
    if (row.data[j] > row.data[best]) best = j;
  return best;
}

}  // namespace

void ModelConfig::validate() const {
  if (dim < 2 || dim % 2 != 0) {
    throw ValidationError("model dim must be even and >= 2");
  }
  if (attn_heads == 0 || dim % attn_heads != 0) {
    throw ValidationError("attention heads must divide the model dim");
  }
  if (gat_heads == 0 || dim % gat_heads != 0) {
    throw ValidationError("GAT heads must divide the model dim");
  }
  if (gat_layers < 1) throw ValidationError("need >= 1 GAT layer");
  if (encoder_layers < 1) throw ValidationError("need >= 1 encoder layer");
  if (decoder_layers < 1) throw ValidationError("need >= 1 decoder layer");
  if (ffn() < dim) throw ValidationError("FFN width must be >= model dim");
  if (eta_m <= 0 || gamma_m <= 0) {
    throw ValidationError("eta and gamma must be positive");
  }
  if (eps_tau_s <= 0) throw ValidationError("eps_tau must be positive");
  if (mask_radius_m <= 0) throw ValidationError("mask radius must be positive");
  if (lambda_ratio < 0) throw ValidationError("lambda must be >= 0");
  if (tf_ratio < 0 || tf_ratio > 1) {
    throw ValidationError("teacher-forcing ratio must lie in [0, 1]");
  }
}

std::string ModelConfig::to_json() const {
  json j;
  j["dim"] = dim;
  j["gat_layers"] = gat_layers;
  j["gat_heads"] = gat_heads;
  j["encoder_layers"] = encoder_layers;
  j["decoder_layers"] = decoder_layers;
  j["attn_heads"] = attn_heads;
  j["ffn_dim"] = ffn_dim;
  j["eta_m"] = eta_m;
  j["gamma_m"] = gamma_m;
  j["eps_tau_s"] = eps_tau_s;
  j["lambda_ratio"] = lambda_ratio;
  j["tf_ratio"] = tf_ratio;
  j["mask_radius_m"] = mask_radius_m;
  j["leaky_slope"] = leaky_slope;
  j["vanilla_attention"] = vanilla_attention;
  j["time_invariant_field"] = time_invariant_field;
  return j.dump();
}

ModelConfig ModelConfig::from_json(const std::string& text) {
  json j = json::parse(text, nullptr, false);
  if (j.is_discarded() || !j.is_object()) {
    throw ParseError("model config: invalid JSON");
  }
  ModelConfig cfg;
  cfg.dim = j.value("dim", cfg.dim);
  cfg.gat_layers = j.value("gat_layers", cfg.gat_layers);
  cfg.gat_heads = j.value("gat_heads", cfg.gat_heads);
  cfg.encoder_layers = j.value("encoder_layers", cfg.encoder_layers);
  cfg.decoder_layers = j.value("decoder_layers", cfg.decoder_layers);
  cfg.attn_heads = j.value("attn_heads", cfg.attn_heads);
  cfg.ffn_dim = j.value("ffn_dim", cfg.ffn_dim);
  cfg.eta_m = j.value("eta_m", cfg.eta_m);
  cfg.gamma_m = j.value("gamma_m", cfg.gamma_m);
  cfg.eps_tau_s = j.value("eps_tau_s", cfg.eps_tau_s);
  cfg.lambda_ratio = j.value("lambda_ratio", cfg.lambda_ratio);
  cfg.tf_ratio = j.value("tf_ratio", cfg.tf_ratio);
  cfg.mask_radius_m = j.value("mask_radius_m", cfg.mask_radius_m);
  cfg.leaky_slope = j.value("leaky_slope", cfg.leaky_slope);
  cfg.vanilla_attention = j.value("vanilla_attention", cfg.vanilla_attention);
  cfg.time_invariant_field = j.value("time_invariant_field", cfg.time_invariant_field);
  cfg.validate();
  return cfg;
}

ModelParams ModelParams::create(ad::ParamStore& store, const ModelConfig& cfg,
                                std::size_t n_segments) {
  cfg.validate();
  ModelParams p;
  p.road = RoadStateParams::create(store, road_config(cfg), n_segments);
  for (std::size_t l = 0; l < cfg.encoder_layers; ++l) {
    p.encoder.push_back(TransformerLayerParams::create(
        store, "enc.l" + std::to_string(l), cfg.dim, cfg.attn_heads, cfg.ffn()));
  }
  for (std::size_t l = 0; l < cfg.decoder_layers; ++l) {
    p.decoder.push_back(TransformerLayerParams::create(
        store, "dec.l" + std::to_string(l), cfg.dim, cfg.attn_heads, cfg.ffn()));
  }
  p.predictor = &store.create("head.predictor", n_segments, cfg.dim);
  p.ratio_w1 = &store.create("head.ratio.w1", 2 * cfg.dim, cfg.dim);
  p.ratio_b1 = &store.create("head.ratio.b1", 1, cfg.dim);
  p.ratio_w2 = &store.create("head.ratio.w2", cfg.dim, 1);
  p.ratio_b2 = &store.create("head.ratio.b2", 1, 1);
  p.emb_w = &store.create("head.emb.w", 2 * cfg.dim + 1, cfg.dim);
  p.emb_b = &store.create("head.emb.b", 1, cfg.dim);
  return p;
}

void ModelParams::randomize(Rng& rng, const ModelConfig& cfg) {
  const double d = static_cast<double>(cfg.dim);
  road.randomize(rng, road_config(cfg));
  for (auto& layer : encoder) layer.randomize(rng, cfg.dim);
  for (auto& layer : decoder) layer.randomize(rng, cfg.dim);
  fill_normal(predictor->value, rng, 1.0 / std::sqrt(d));
  fill_normal(ratio_w1->value, rng, 1.0 / std::sqrt(2.0 * d));
  ratio_b1->value = ad::Mat(1, cfg.dim, 0.0);
  // Zero final layer: every ratio starts at sigmoid(0) = 0.5.
  ratio_w2->value = ad::Mat(cfg.dim, 1, 0.0);
  ratio_b2->value = ad::Mat(1, 1, 0.0);
  fill_normal(emb_w->value, rng, 1.0 / std::sqrt(2.0 * d + 1.0));
  emb_b->value = ad::Mat(1, cfg.dim, 0.0);
}

Model Model::build(const ModelConfig& cfg, const RoadNetwork& net,
                   std::uint64_t seed) {
  cfg.validate();
  if (net.empty()) throw DataError("cannot build a model on an empty network");
  Model m;
  m.config = cfg;
  m.params = ModelParams::create(m.store, cfg, net.size());
  Rng rng(Rng::derive(seed, 0x6d6f64656c, 0, 0));
  m.params.randomize(rng, cfg);
  m.net = &net;
  m.adjacency = gat_adjacency(net);
  return m;
}

std::vector<double> make_decode_grid(const RawTrajectory& raw,
                                     double eps_tau_s) {
  if (eps_tau_s <= 0) throw ValidationError("decode grid needs eps_tau > 0");
  if (raw.points.empty()) throw ValidationError("decode grid on empty trajectory");
  const double t1 = raw.points.front().t, tm = raw.points.back().t;
  if (!(tm > t1)) {
    throw ValidationError("trajectory " + std::to_string(raw.id) +
                          ": last timestamp must exceed the first");
  }
  const std::size_t n =
      static_cast<std::size_t>(std::floor((tm - t1) / eps_tau_s + 1e-9)) + 1;
  std::vector<double> grid(n);
  for (std::size_t i = 0; i < n; ++i) grid[i] = t1 + static_cast<double>(i) * eps_tau_s;
  return grid;
}

ConstraintMask build_constraint_mask(const RoadNetwork& net,
                                     const RawTrajectory& raw,
                                     const std::vector<double>& t_de,
                                     double eps_tau_s, double mask_radius_m,
                                     double gamma_m) {
  if (mask_radius_m <= 0 || gamma_m <= 0) {
    throw ValidationError("constraint mask needs positive radius and gamma");
  }
  ConstraintMask mask;
  mask.t_de = t_de;
  mask.rows = ad::Mat(t_de.size(), net.size(), 1.0);

  for (std::size_t i = 0; i < t_de.size(); ++i) {
    // Closest input point within eps/2, earlier point on time ties.
    const RawPoint* obs = nullptr;
    double best = eps_tau_s / 2.0;
    for (const RawPoint& p : raw.points) {
      const double gap = std::abs(p.t - t_de[i]);
      if (gap < best || (gap == best && obs == nullptr)) {
        best = gap;
        obs = &p;
      }
    }
    if (!obs) continue;

    const LonLat coord{obs->lon, obs->lat};
    double* row = mask.rows.row(i);
    std::fill(row, row + net.size(), 0.0);
    bool any = false;
    for (std::int64_t id : net.subregion(coord, mask_radius_m)) {
      const double d = net.project_onto_segment(id, coord).dist_m;
      row[net.index_of(id)] = std::exp(-(d * d) / (gamma_m * gamma_m));
      any = true;
    }
    if (!any) std::fill(row, row + net.size(), 1.0);
  }
  return mask;
}

EncodeResult encode(ad::Tape& tape, const Model& model,
                    const RawTrajectory& raw) {
  const ModelConfig& cfg = model.config;
  EncodeResult out;
  out.field = build_field(tape, model.params.road, road_config(cfg),
                          model.adjacency, cfg.time_invariant_field);
  ad::Var feats = extract_features(tape, out.field, *model.net, raw, cfg.eta_m,
                                   cfg.gamma_m);
  ad::Var h =
      tape.add(feats, tape.constant(positional_encoding(feats.rows(), cfg.dim)));
  for (const RawPoint& p : raw.points) out.t_en.push_back(p.t);
  const ad::Mat dt = dt_matrix(out.t_en, out.t_en, cfg.eps_tau_s);
  for (const auto& layer : model.params.encoder) {
    h = encoder_layer(tape, layer, h, dt, cfg.vanilla_attention);
  }
  out.memory = h;
  return out;
}

ad::Var init_decoder_state(ad::Tape& tape, ad::Var memory) {
  if (memory.rows() == 0) throw ValidationError("empty encoder memory");
  return tape.scale(tape.sum_rows(memory),
                    1.0 / static_cast<double>(memory.rows()));
}

DecodeOutput decode(ad::Tape& tape, const Model& model,
                    const EncodeResult& enc, const ConstraintMask& mask,
                    const DecodeOptions& opts) {
  const ModelConfig& cfg = model.config;
  const ModelParams& p = model.params;
  const RoadNetwork& net = *model.net;
  const std::size_t n = mask.t_de.size();
  const std::size_t nv = net.size();
  if (mask.rows.rows != n || mask.rows.cols != nv) {
    throw ValidationError("constraint mask shape mismatch");
  }
  if (opts.teacher && opts.teacher->points.size() != n) {
    throw ValidationError("teacher length does not match the decode grid");
  }
  if (opts.teacher && !opts.coin && opts.tf_ratio > 0 && opts.tf_ratio < 1) {
    throw ValidationError("teacher forcing with 0 < tf < 1 needs a coin rng");
  }

  DecodeOutput out;
  out.t_de = mask.t_de;

  // Everything that depends only on the memory is built once.
  std::vector<KeyValueCache> caches;
  for (const auto& layer : p.decoder) {
    caches.push_back(project_keys_values(tape, layer.attn, enc.memory,
                                         cfg.vanilla_attention));
  }
  ad::Var pred_t = tape.transpose(tape.param(*p.predictor));  // d x |V|
  ad::Var state = init_decoder_state(tape, enc.memory);

  ad::Var id_sum, ratio_sum;
  for (std::size_t i = 0; i < n; ++i) {
    ad::Var h = state;
    const ad::Mat dt = dt_matrix({mask.t_de[i]}, enc.t_en, cfg.eps_tau_s);
    for (std::size_t l = 0; l < p.decoder.size(); ++l) {
      h = transformer_block(tape, p.decoder[l], caches[l], h, dt);
    }
    ad::Var logits = tape.matmul(h, pred_t);  // 1 x |V|

    ad::Mat mrow(1, nv);
    std::memcpy(mrow.row(0), mask.rows.row(i), nv * sizeof(double));
    std::size_t target = 0;
    if (opts.teacher) {
      target = net.index_of(opts.teacher->points[i].segment);
      // A target outside the mask support would make the loss infinite;
      // the row falls back to all-ones for this step.
      if (mrow.data[target] == 0.0) mrow = ad::Mat(1, nv, 1.0);
    }

    const ad::Mat dist = ad::masked_softmax(logits.value(), mrow);
    const std::size_t pred = argmax_row(dist);
    out.segments.push_back(pred);
    if (opts.keep_distributions) out.distributions.push_back(dist);

    bool force = false;
    if (opts.teacher) {
      ad::Var id_i = tape.masked_softmax_ce(logits, mrow, target);
      id_sum = i == 0 ? id_i : tape.add(id_sum, id_i);
      force = opts.coin ? opts.coin->bernoulli(opts.tf_ratio)
                        : opts.tf_ratio >= 1.0;
    }

    // Ratio head (and the next-step embedding) read the road state of
    // the ground-truth segment on forced steps, otherwise the argmax.
    const std::size_t seg = force ? target : pred;
    ad::Var seg_state = road_state_rows(tape, enc.field, {seg},
                                        {minutes_of_day(mask.t_de[i])});
    ad::Var rcat = tape.concat_cols({h, seg_state});
    ad::Var rhid = tape.relu(tape.add_row(
        tape.matmul(rcat, tape.param(*p.ratio_w1)), tape.param(*p.ratio_b1)));
    ad::Var rhat = tape.sigmoid(tape.add_row(
        tape.matmul(rhid, tape.param(*p.ratio_w2)), tape.param(*p.ratio_b2)));
    out.ratios.push_back(rhat.value().data[0]);

    if (opts.teacher) {
      ad::Var diff = tape.sub(
          rhat, tape.constant(ad::Mat(1, 1, opts.teacher->points[i].ratio)));
      ad::Var sq = tape.mul(diff, diff);
      ratio_sum = i == 0 ? sq : tape.add(ratio_sum, sq);
    }

    if (i + 1 < n) {
      ad::Var r_in = force ? tape.constant(ad::Mat(1, 1, opts.teacher->points[i].ratio))
                           : rhat;
      ad::Var emb_in = tape.concat_cols({seg_state, r_in, h});
      state = tape.add_row(tape.matmul(emb_in, tape.param(*p.emb_w)),
                           tape.param(*p.emb_b));
    }
  }

  if (opts.teacher) {
    out.has_loss = true;
    out.loss_id = id_sum;
    out.loss_ratio = ratio_sum;
    out.loss_total = tape.add(id_sum, tape.scale(ratio_sum, cfg.lambda_ratio));
  }
  return out;
}

MapTrajectory recover(const Model& model, const RawTrajectory& raw) {
  validate(raw);
  ad::Tape tape;
  EncodeResult enc = encode(tape, model, raw);
  const std::vector<double> t_de = make_decode_grid(raw, model.config.eps_tau_s);
  const ConstraintMask mask =
      build_constraint_mask(*model.net, raw, t_de, model.config.eps_tau_s,
                            model.config.mask_radius_m, model.config.gamma_m);
  DecodeOutput out = decode(tape, model, enc, mask);

  MapTrajectory mt;
  mt.id = raw.id;
  for (std::size_t i = 0; i < out.segments.size(); ++i) {
    mt.points.push_back(
        MapPoint{model.net->id_at(out.segments[i]), out.ratios[i], t_de[i]});
  }
  return mt;
}

namespace {

void write_u32(std::ofstream& f, std::uint32_t v) {
  f.write(reinterpret_cast<const char*>(&v), sizeof v);
}
void write_u64(std::ofstream& f, std::uint64_t v) {
  f.write(reinterpret_cast<const char*>(&v), sizeof v);
}
std::uint32_t read_u32(std::ifstream& f) {
  std::uint32_t v = 0;
  f.read(reinterpret_cast<char*>(&v), sizeof v);
  return v;
}
std::uint64_t read_u64(std::ifstream& f) {
  std::uint64_t v = 0;
  f.read(reinterpret_cast<char*>(&v), sizeof v);
  return v;
}

constexpr char kMagic[8] = {'T', 'R', 'A', 'J', 'R', 'E', 'C', '1'};

}  // namespace

void Model::save(const std::string& path) const {
  std::ofstream f(path, std::ios::binary);
  if (!f) throw DataError("cannot write checkpoint: " + path);
  f.write(kMagic, sizeof kMagic);
  write_u32(f, 1);  // format version
  write_u32(f, static_cast<std::uint32_t>(config.dim));
  write_u32(f, static_cast<std::uint32_t>(config.attn_heads));
  write_u32(f, static_cast<std::uint32_t>(config.encoder_layers));
  write_u32(f, static_cast<std::uint32_t>(config.decoder_layers));
  write_u64(f, net ? net->size() : 0);
  const std::string cfg = config.to_json();
  write_u32(f, static_cast<std::uint32_t>(cfg.size()));
  f.write(cfg.data(), static_cast<std::streamsize>(cfg.size()));
  write_u64(f, store.size());
  for (std::size_t i = 0; i < store.size(); ++i) {
    const ad::Param& p = store[i];
    write_u32(f, static_cast<std::uint32_t>(p.name.size()));
    f.write(p.name.data(), static_cast<std::streamsize>(p.name.size()));
    write_u64(f, p.value.rows);
    write_u64(f, p.value.cols);
    std::vector<float> blob(p.value.size());
    for (std::size_t k = 0; k < blob.size(); ++k)
      blob[k] = static_cast<float>(p.value.data[k]);
    f.write(reinterpret_cast<const char*>(blob.data()),
            static_cast<std::streamsize>(blob.size() * sizeof(float)));
  }
  if (!f) throw DataError("checkpoint write failed: " + path);
}

Model Model::load(const std::string& path, const RoadNetwork& net) {
  std::ifstream f(path, std::ios::binary);
  if (!f) throw DataError("cannot open checkpoint: " + path);
  char magic[8];
  f.read(magic, sizeof magic);
  if (!f || std::memcmp(magic, kMagic, sizeof magic) != 0) {
    throw ParseError("not a model checkpoint: " + path);
  }
  const std::uint32_t version = read_u32(f);
  if (version != 1) {
    throw ParseError("unsupported checkpoint version " + std::to_string(version));
  }
  const std::uint32_t dim = read_u32(f), heads = read_u32(f);
  const std::uint32_t enc_layers = read_u32(f), dec_layers = read_u32(f);
  const std::uint64_t n_segments = read_u64(f);
  if (n_segments != net.size()) {
    throw DataError("checkpoint was trained on " + std::to_string(n_segments) +
                    " segments, network has " + std::to_string(net.size()));
  }
  const std::uint32_t cfg_len = read_u32(f);
  std::string cfg_text(cfg_len, '\0');
  f.read(cfg_text.data(), cfg_len);
  if (!f) throw ParseError("truncated checkpoint header: " + path);
  const ModelConfig cfg = ModelConfig::from_json(cfg_text);
  if (cfg.dim != dim || cfg.attn_heads != heads ||
      cfg.encoder_layers != enc_layers || cfg.decoder_layers != dec_layers) {
    throw ParseError("checkpoint header disagrees with its config block");
  }

  Model m = Model::build(cfg, net, 0);
  const std::uint64_t count = read_u64(f);
  if (count != m.store.size()) {
    throw ParseError("checkpoint parameter count mismatch");
  }
  for (std::uint64_t i = 0; i < count; ++i) {
    const std::uint32_t name_len = read_u32(f);
    std::string name(name_len, '\0');
    f.read(name.data(), name_len);
    const std::uint64_t rows = read_u64(f), cols = read_u64(f);
    if (!f || !m.store.contains(name)) {
      throw ParseError("checkpoint names unknown parameter: " + name);
    }
    ad::Param& p = m.store.at(name);
    if (p.value.rows != rows || p.value.cols != cols) {
      throw ParseError("checkpoint shape mismatch for " + name);
    }
    std::vector<float> blob(rows * cols);
    f.read(reinterpret_cast<char*>(blob.data()),
           static_cast<std::streamsize>(blob.size() * sizeof(float)));
    if (!f) throw ParseError("truncated checkpoint blob: " + name);
    for (std::size_t k = 0; k < blob.size(); ++k)
      p.value.data[k] = static_cast<double>(blob[k]);
  }
  return m;
}

}  // namespace trajrec
