// Compares the OpenMP-parallel kernels against the serial reference
// path (same code with parallelism switched off). Thread count comes
// from OMP_NUM_THREADS as usual.
#include <chrono>
#include <cstdio>
#include <functional>
#include <string>
#include <vector>

#include "helpers.hpp"
#include "trajrec/dataset.hpp"
#include "trajrec/map_matching.hpp"
#include "trajrec/metrics.hpp"
#include "trajrec/model.hpp"
#include "trajrec/parallel.hpp"
#include "trajrec/rng.hpp"
#include "trajrec/road_network.hpp"
#include "trajrec/synthetic.hpp"
#include "trajrec/trajectory.hpp"

using namespace trajrec;
using Clock = std::chrono::steady_clock;

namespace {

double time_s(const std::function<void()>& fn) {
  auto t0 = Clock::now();
  fn();
  return std::chrono::duration<double>(Clock::now() - t0).count();
}

void report(const std::string& name, const std::function<void()>& fn) {
  par::set_enabled(false);
  double serial = time_s(fn);
  par::set_enabled(true);
  double parallel = time_s(fn);
  std::printf("%-22s serial %8.3fs   parallel %8.3fs   speedup %.2fx\n",
              name.c_str(), serial, parallel,
              parallel > 0 ? serial / parallel : 0.0);
}

}  // namespace

int main() {
  std::printf("threads available: %d\n\n", par::max_threads());

  RoadNetwork net = RoadNetwork::from_segments(testutil::grid_segments(6, 6));

  SyntheticParams sp;
  sp.min_segments = 6;
  sp.max_segments = 10;
  auto truth = generate_synthetic(net, 96, sp, 7);

  // Dense raw traces (keep everything) and sparse inputs (keep 25%).
  std::vector<RawTrajectory> raws, sparse;
  for (const auto& mt : truth) {
    std::uint64_t s = Rng::derive(11, 0x62656e6368, mt.id);
    raws.push_back(downsample(net, mt, 1.0, s));
    sparse.push_back(downsample(net, mt, 0.25, s));
  }

  ModelConfig mc;
  mc.dim = 64;
  mc.gat_layers = 1;
  mc.gat_heads = 2;
  mc.encoder_layers = 2;
  mc.decoder_layers = 1;
  mc.attn_heads = 4;
  mc.ffn_dim = 128;
  Model model = Model::build(mc, net, 5);

  report("hmm map matching", [&] {
    HmmParams hp;
    par::parallel_for_rethrow(raws.size(), [&](std::size_t i) {
      (void)hmm_map_match(net, raws[i], hp);
    });
  });

  report("batch recovery", [&] {
    par::parallel_for_rethrow(sparse.size(), [&](std::size_t i) {
      (void)recover(model, sparse[i]);
    });
  });

  std::vector<SegmentSeq> seqs;
  for (const auto& mt : truth) seqs.push_back(segment_sequence(mt));

  report("pairwise lcss", [&] { (void)pairwise_distances(seqs, lcss_distance); });
  report("pairwise edr", [&] { (void)pairwise_distances(seqs, edr_distance); });

  return 0;
}
