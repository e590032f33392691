#include "trajrec/road_state.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>
#include <string>

#include "trajrec/errors.hpp"

namespace trajrec {

namespace {

void fill_normal(ad::Mat& m, Rng& rng, double stddev) {
  for (double& x : m.data) x = stddev * rng.normal();
}

void check_config(const RoadStateConfig& cfg) {
  if (cfg.dim < 2) throw ValidationError("road state dim must be >= 2");
  if (cfg.layers < 1) throw ValidationError("road state needs >= 1 GAT layer");
  if (cfg.heads < 1 || cfg.dim % cfg.heads != 0) {
    throw ValidationError("GAT head count must divide the embedding dim");
  }
}

}  // namespace

RoadStateParams RoadStateParams::create(ad::ParamStore& store,
                                        const RoadStateConfig& cfg,
                                        std::size_t n_segments) {
  check_config(cfg);
  if (n_segments == 0) throw ValidationError("road state needs >= 1 segment");
  const std::size_t d = cfg.dim, dh = d / cfg.heads;

  RoadStateParams p;
  p.segments = &store.create("road.segments", n_segments, d);
  p.gat_w.resize(cfg.layers);
  p.gat_a.resize(cfg.layers);
  for (std::size_t l = 0; l < cfg.layers; ++l) {
    for (std::size_t k = 0; k < cfg.heads; ++k) {
      const std::string tag =
          "road.gat.l" + std::to_string(l) + ".h" + std::to_string(k);
      p.gat_w[l].push_back(&store.create(tag + ".w", d, dh));
      p.gat_a[l].push_back(&store.create(tag + ".a", 1, 2 * dh));
    }
  }
  p.static_w = &store.create("road.static.w", d, d);
  p.static_b = &store.create("road.static.b", 1, d);
  p.freq_w = &store.create("road.freq.w", d, d);
  p.freq_b = &store.create("road.freq.b", 1, d);
  p.t2v_bias = &store.create("road.t2v_bias", 1, d);
  return p;
}

void RoadStateParams::randomize(Rng& rng, const RoadStateConfig& cfg) {
  const double d = static_cast<double>(cfg.dim);
  const double dh = d / static_cast<double>(cfg.heads);
  fill_normal(segments->value, rng, 1.0 / std::sqrt(d));
  for (auto& layer : gat_w)
    for (ad::Param* w : layer) fill_normal(w->value, rng, 1.0 / std::sqrt(d));
  for (auto& layer : gat_a)
    for (ad::Param* a : layer)
      fill_normal(a->value, rng, 1.0 / std::sqrt(2.0 * dh));
  fill_normal(static_w->value, rng, 1.0 / std::sqrt(d));
  static_b->value = ad::Mat(1, cfg.dim, 0.0);
  // Day-scale initial periods: omega entries come out ~2*pi/1440 sized,
  // so w*t sweeps about one radian over a day before training.
  const double day_scale = 2.0 * std::numbers::pi / 1440.0;
  fill_normal(freq_w->value, rng, day_scale / std::sqrt(d));
  freq_b->value = ad::Mat(1, cfg.dim, 0.0);
  for (double& b : t2v_bias->value.data)
    b = rng.uniform(-std::numbers::pi, std::numbers::pi);
}

void RoadStateParams::set_identity_heads(const RoadStateConfig& cfg) {
  static_w->value = ad::Mat::eye(cfg.dim);
  freq_w->value = ad::Mat::eye(cfg.dim);
  static_b->value = ad::Mat(1, cfg.dim, 0.0);
  freq_b->value = ad::Mat(1, cfg.dim, 0.0);
}

double minutes_of_day(double unix_seconds) {
  double s = std::fmod(unix_seconds, 86400.0);
  if (s < 0) s += 86400.0;
  return s / 60.0;
}

ad::CsrAdjacency gat_adjacency(const RoadNetwork& net) {
  ad::CsrAdjacency adj;
  adj.offsets.push_back(0);
  std::vector<std::uint32_t> row;
  for (std::size_t i = 0; i < net.size(); ++i) {
    row.clear();
    for (std::int64_t id : net.in_neighbors(net.id_at(i))) {
      row.push_back(static_cast<std::uint32_t>(net.index_of(id)));
    }
    row.push_back(static_cast<std::uint32_t>(i));
    std::sort(row.begin(), row.end());
    row.erase(std::unique(row.begin(), row.end()), row.end());
    adj.targets.insert(adj.targets.end(), row.begin(), row.end());
    adj.offsets.push_back(static_cast<std::uint32_t>(adj.targets.size()));
  }
  return adj;
}

ad::Var gat_stack(ad::Tape& tape, const RoadStateParams& params,
                  const RoadStateConfig& cfg, const ad::CsrAdjacency& adj) {
  check_config(cfg);
  if (adj.rows() != params.segments->value.rows) {
    throw ValidationError("GAT adjacency does not match the segment table");
  }
  ad::Var feats = tape.param(*params.segments);
  for (std::size_t l = 0; l < cfg.layers; ++l) {
    std::vector<ad::Var> heads;
    heads.reserve(cfg.heads);
    for (std::size_t k = 0; k < cfg.heads; ++k) {
      ad::Var proj = tape.matmul(feats, tape.param(*params.gat_w[l][k]));
      heads.push_back(tape.gat_head(proj, tape.param(*params.gat_a[l][k]), adj,
                                    cfg.leaky_slope));
    }
    feats = cfg.heads == 1 ? heads[0] : tape.concat_cols(heads);
  }
  return feats;
}

RoadField build_field(ad::Tape& tape, const RoadStateParams& params,
                      const RoadStateConfig& cfg, const ad::CsrAdjacency& adj,
                      bool time_invariant) {
  ad::Var sbar = gat_stack(tape, params, cfg, adj);
  RoadField field;
  field.shat = tape.add_row(tape.matmul(sbar, tape.param(*params.static_w)),
                            tape.param(*params.static_b));
  if (time_invariant) {
    field.omega = tape.constant(ad::Mat(sbar.rows(), cfg.dim, 0.0));
  } else {
    field.omega = tape.add_row(tape.matmul(sbar, tape.param(*params.freq_w)),
                               tape.param(*params.freq_b));
  }
  field.bias = tape.param(*params.t2v_bias);
  return field;
}

ad::Var road_state_rows(ad::Tape& tape, const RoadField& field,
                        const std::vector<std::size_t>& seg_indices,
                        const std::vector<double>& minutes) {
  if (seg_indices.size() != minutes.size()) {
    throw ValidationError("road_state_rows: index/time count mismatch");
  }
  if (seg_indices.empty()) {
    throw ValidationError("road_state_rows: empty request");
  }
  const std::size_t n = field.shat.rows(), d = field.shat.cols();
  for (std::size_t s : seg_indices) {
    if (s >= n) throw ValidationError("road_state_rows: segment index out of range");
  }
  ad::Mat t_col(seg_indices.size(), 1);
  for (std::size_t i = 0; i < minutes.size(); ++i) t_col.data[i] = minutes[i];

  ad::Var om = tape.gather_rows(field.omega, seg_indices);
  ad::Var sh = tape.gather_rows(field.shat, seg_indices);
  ad::Var pre = tape.add_row(tape.scale_rows(om, t_col), field.bias);
  ad::Var lin = tape.slice_cols(pre, 0, 1);
  ad::Var tail = tape.sine(tape.slice_cols(pre, 1, d));
  return tape.add(tape.concat_cols({lin, tail}), sh);
}

}  // namespace trajrec
