#include "trajrec/config.hpp"

#include <fstream>
#include <sstream>

#include "json.hpp"
#include "trajrec/errors.hpp"

namespace trajrec {

namespace {

using nlohmann::json;

template <typename T>
void take(json& j, const char* key, T& field) {
  auto it = j.find(key);
  if (it == j.end()) return;
  try {
    field = it->get<T>();
  } catch (const json::exception& e) {
    throw ParseError(std::string("config key '") + key + "': " + e.what());
  }
  j.erase(it);
}

// Field table shared by parsing and serialization; `apply` consumes
// keys so leftovers can be reported as typos.
void apply(json& j, RunConfig& c) {
  take(j, "network", c.network);
  take(j, "input", c.input);
  take(j, "dataset_dir", c.dataset_dir);
  take(j, "checkpoint", c.checkpoint);
  take(j, "out_dir", c.out_dir);
  take(j, "dim", c.dim);
  take(j, "attn_heads", c.attn_heads);
  take(j, "encoder_layers", c.encoder_layers);
  take(j, "decoder_layers", c.decoder_layers);
  take(j, "gat_layers", c.gat_layers);
  take(j, "gat_heads", c.gat_heads);
  take(j, "ffn_dim", c.ffn_dim);
  take(j, "eta_m", c.eta_m);
  take(j, "gamma_m", c.gamma_m);
  take(j, "mask_radius_m", c.mask_radius_m);
  take(j, "eps_tau_s", c.eps_tau_s);
  take(j, "keep_prob", c.keep_prob);
  take(j, "lambda_ratio", c.lambda_ratio);
  take(j, "tf_ratio", c.tf_ratio);
  take(j, "lr", c.lr);
  take(j, "batch", c.batch);
  take(j, "epochs", c.epochs);
  take(j, "clip_norm", c.clip_norm);
  take(j, "hmm_sigma_m", c.hmm_sigma_m);
  take(j, "hmm_beta", c.hmm_beta);
  take(j, "hmm_radius_m", c.hmm_radius_m);
  take(j, "synth_count", c.synth_count);
  take(j, "grid_rows", c.grid_rows);
  take(j, "grid_cols", c.grid_cols);
  take(j, "grid_spacing_m", c.grid_spacing_m);
  take(j, "walk_min_segments", c.walk_min_segments);
  take(j, "walk_max_segments", c.walk_max_segments);
  take(j, "vanilla_attention", c.vanilla_attention);
  take(j, "time_invariant_field", c.time_invariant_field);
  take(j, "seed", c.seed);
  if (!j.empty())
    throw ParseError("unknown config key '" + j.begin().key() + "'");
}

}  // namespace

void RunConfig::validate() const {
  if (keep_prob <= 0.0 || keep_prob > 1.0)
    throw ValidationError("config: keep_prob must be in (0,1]");
  if (lr <= 0.0) throw ValidationError("config: lr must be positive");
  if (batch == 0 || epochs == 0)
    throw ValidationError("config: batch and epochs must be positive");
  if (clip_norm < 0.0)
    throw ValidationError("config: clip_norm must be nonnegative");
  if (hmm_sigma_m <= 0.0 || hmm_beta <= 0.0 || hmm_radius_m <= 0.0)
    throw ValidationError("config: HMM parameters must be positive");
  if (grid_rows < 2 || grid_cols < 2)
    throw ValidationError("config: synthetic grid needs at least 2x2 junctions");
  if (grid_spacing_m <= 0.0)
    throw ValidationError("config: grid_spacing_m must be positive");
  if (walk_min_segments < 1 || walk_max_segments < walk_min_segments)
    throw ValidationError("config: invalid walk length bounds");
  model().validate();
}

ModelConfig RunConfig::model() const {
  ModelConfig m;
  m.dim = dim;
  m.gat_layers = gat_layers;
  m.gat_heads = gat_heads;
  m.encoder_layers = encoder_layers;
  m.decoder_layers = decoder_layers;
  m.attn_heads = attn_heads;
  m.ffn_dim = ffn_dim;
  m.eta_m = eta_m;
  m.gamma_m = gamma_m;
  m.eps_tau_s = eps_tau_s;
  m.lambda_ratio = lambda_ratio;
  m.tf_ratio = tf_ratio;
  m.mask_radius_m = mask_radius_m;
  m.vanilla_attention = vanilla_attention;
  m.time_invariant_field = time_invariant_field;
  return m;
}

TrainConfig RunConfig::train() const {
  TrainConfig t;
  t.epochs = epochs;
  t.batch_size = batch;
  t.adam.lr = lr;
  t.clip_norm = clip_norm;
  t.seed = seed;
  return t;
}

std::string RunConfig::to_json() const {
  json j;
  j["network"] = network;
  j["input"] = input;
  j["dataset_dir"] = dataset_dir;
  j["checkpoint"] = checkpoint;
  j["out_dir"] = out_dir;
  j["dim"] = dim;
  j["attn_heads"] = attn_heads;
  j["encoder_layers"] = encoder_layers;
  j["decoder_layers"] = decoder_layers;
  j["gat_layers"] = gat_layers;
  j["gat_heads"] = gat_heads;
  j["ffn_dim"] = ffn_dim;
  j["eta_m"] = eta_m;
  j["gamma_m"] = gamma_m;
  j["mask_radius_m"] = mask_radius_m;
  j["eps_tau_s"] = eps_tau_s;
  j["keep_prob"] = keep_prob;
  j["lambda_ratio"] = lambda_ratio;
  j["tf_ratio"] = tf_ratio;
  j["lr"] = lr;
  j["batch"] = batch;
  j["epochs"] = epochs;
  j["clip_norm"] = clip_norm;
  j["hmm_sigma_m"] = hmm_sigma_m;
  j["hmm_beta"] = hmm_beta;
  j["hmm_radius_m"] = hmm_radius_m;
  j["synth_count"] = synth_count;
  j["grid_rows"] = grid_rows;
  j["grid_cols"] = grid_cols;
  j["grid_spacing_m"] = grid_spacing_m;
  j["walk_min_segments"] = walk_min_segments;
  j["walk_max_segments"] = walk_max_segments;
  j["vanilla_attention"] = vanilla_attention;
  j["time_invariant_field"] = time_invariant_field;
  j["seed"] = seed;
  return j.dump(2);
}

RunConfig RunConfig::from_json(const std::string& text) {
  json j;
  try {
    j = json::parse(text);
  } catch (const json::exception& e) {
    throw ParseError(std::string("config: ") + e.what());
  }
  if (!j.is_object()) throw ParseError("config: expected a JSON object");
  RunConfig c;
  apply(j, c);
  return c;
}

RunConfig RunConfig::from_file(const std::string& path) {
  std::ifstream f(path);
  if (!f) throw DataError("config: cannot read " + path);
  std::ostringstream ss;
  ss << f.rdbuf();
  return from_json(ss.str());
}

void RunConfig::set(const std::string& assignment) {
  const std::size_t eq = assignment.find('=');
  if (eq == std::string::npos || eq == 0)
    throw ParseError("--set expects KEY=VALUE, got '" + assignment + "'");
  const std::string key = assignment.substr(0, eq);
  const std::string raw = assignment.substr(eq + 1);
  json value;
  try {
    value = json::parse(raw);
  } catch (const json::exception&) {
    value = raw;  // unquoted strings (paths) are the common case
  }
  json j;
  j[key] = value;
  apply(j, *this);
}

}  // namespace trajrec
