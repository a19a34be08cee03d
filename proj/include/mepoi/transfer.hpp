#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "mepoi/geo.hpp"
#include "mepoi/init.hpp"
#include "mepoi/optim.hpp"
#include "mepoi/pipeline.hpp"
#include "mepoi/prototypes.hpp"
#include "mepoi/rng.hpp"
#include "mepoi/tape.hpp"
#include "mepoi/world.hpp"

namespace mepoi {

// Bandwidth ladder for the spatial mixing kernel. Distances are measured in
// km, so the defaults read directly as 300 m, 1 km, and 3 km reach.
struct KernelConfig {
  std::vector<double> bandwidths_km = {0.3, 1.0, 3.0};
};

struct TransferredPrior {
  std::int64_t poi_id = 0;
  std::vector<double> bins;  // kWeekBins entries on the simplex
};

// Normalized Gaussian weights over anchors at one bandwidth. Computed in log
// space with max subtraction, so a tiny bandwidth degrades gracefully into
// an argmax on the nearest anchor instead of 0/0.
std::vector<double> kernel_weights(const std::vector<double>& dist_km, double sigma_km);

// Haversine km from one point to every anchor location.
std::vector<double> anchor_distances_km(const LatLon& from, const std::vector<LatLon>& anchors);

// Prior for one sparse POI: average over scales of the per-scale convex
// anchor mixtures, then a defensive renormalization (the mixture of simplex
// rows already sums to 1 up to rounding). Plain double loop; this is also
// the reference the batched precompute is checked against.
std::vector<double> transfer_prior(const std::vector<std::vector<double>>& per_scale_weights,
                                   const std::vector<std::vector<double>>& anchor_bins);

// Priors for every sparse POI in the partition. Distances are computed per
// (sparse, anchor) pair and each scale reduces over anchors with one matrix
// product, so the cost scales with scales x anchors x sparse. Deterministic
// for a fixed input, threads included.
std::vector<TransferredPrior> precompute_transfer(const std::vector<Poi>& pois, const Partition& partition,
                                                  const std::vector<VisitDistribution>& dists,
                                                  const KernelConfig& cfg);

void write_priors_jsonl(const std::string& path, const std::vector<TransferredPrior>& priors);
std::vector<TransferredPrior> load_priors_jsonl(const std::string& path);

// Two-layer ReLU MLP with a softmax output, mapping a prototype to a weekly
// visit distribution. One instance is shared by the anchor and sparse
// objectives.
template <typename T>
class DistributionHead {
 public:
  DistributionHead(ParamStore<T>& store, i64 in_dim, i64 hidden, i64 bins, const Rng& init_rng)
      : in_dim_(in_dim), bins_(bins) {
    check(in_dim >= 1 && hidden >= 1 && bins >= 2, "distribution head: dimensions must be positive");
    Rng r = init_rng.child("dist_head");
    w1_ = &store.add("dist_head.w1", xavier_uniform<T>(in_dim, hidden, r));
    b1_ = &store.add("dist_head.b1", Tensor<T>::zeros({hidden}));
    w2_ = &store.add("dist_head.w2", xavier_uniform<T>(hidden, bins, r));
    b2_ = &store.add("dist_head.b2", Tensor<T>::zeros({bins}));
  }

  i64 in_dim() const { return in_dim_; }
  i64 bins() const { return bins_; }

  // softmax(MLP(z)) per row; differentiable in z and in the head parameters.
  Value<T> forward(Tape<T>& tape, Value<T> z) const {
    check(tape.val(z).rank() == 2 && tape.val(z).cols() == in_dim_,
          "distribution head: input must be [n x " + std::to_string(in_dim_) + "]");
    Value<T> hidden = ops::relu(ops::add_rowvec(ops::matmul(z, tape.leaf(*w1_)), tape.leaf(*b1_)));
    return ops::softmax_rows(ops::add_rowvec(ops::matmul(hidden, tape.leaf(*w2_)), tape.leaf(*b2_)));
  }

 private:
  i64 in_dim_;
  i64 bins_;
  Param<T>* w1_ = nullptr;
  Param<T>* b1_ = nullptr;
  Param<T>* w2_ = nullptr;
  Param<T>* b2_ = nullptr;
};

// Mean KL(target row || head(prototype row)) over the listed POIs. Anchors
// pass their empirical distributions, sparse POIs their transferred priors;
// both paths go through this one kernel.
template <typename T>
Value<T> kl_distribution_loss(Tape<T>& tape, PrototypeBank<T>& bank, const DistributionHead<T>& head,
                              const std::vector<i64>& poi_ids, const Tensor<T>& targets) {
  check(!poi_ids.empty(), "kl loss: at least one POI required");
  check(targets.rank() == 2 && targets.rows() == static_cast<i64>(poi_ids.size()) && targets.cols() == head.bins(),
        "kl loss: targets must be [POI count x bins]");
  std::vector<i64> rows(poi_ids.size());
  for (std::size_t i = 0; i < poi_ids.size(); ++i) rows[i] = bank.row(poi_ids[i]);
  Value<T> z = ops::gather_rows(tape.leaf(bank.param()), rows);
  return ops::kl_rows(targets, head.forward(tape, z));
}

}  // namespace mepoi
