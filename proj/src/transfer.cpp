#include "mepoi/transfer.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <limits>
#include <stdexcept>

#include <json.hpp>

#include "mepoi/common.hpp"
#include "mepoi/parallel.hpp"
#include "mepoi/tensor.hpp"

namespace mepoi {
namespace {

using json = nlohmann::json;

std::ofstream open_out(const std::string& path) {
  std::ofstream out(path, std::ios::binary);
  check(out.good(), "cannot open for writing: " + path);
  return out;
}

std::ifstream open_in(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  check(in.good(), "cannot open for reading: " + path);
  return in;
}

void check_bandwidths(const KernelConfig& cfg) {
  check(!cfg.bandwidths_km.empty(), "kernel: at least one bandwidth required");
  double prev = 0.0;
  for (double s : cfg.bandwidths_km) {
    check(s > prev, "kernel: bandwidths must be positive and strictly increasing");
    prev = s;
  }
}

}  // namespace

std::vector<double> kernel_weights(const std::vector<double>& dist_km, double sigma_km) {
  check(!dist_km.empty(), "kernel_weights: anchor set is empty");
  check(sigma_km > 0.0, "kernel_weights: bandwidth must be positive");
  std::vector<double> logw(dist_km.size());
  double top = -std::numeric_limits<double>::infinity();
  for (std::size_t i = 0; i < dist_km.size(); ++i) {
    logw[i] = -(dist_km[i] * dist_km[i]) / (2.0 * sigma_km * sigma_km);
    top = std::max(top, logw[i]);
  }
  double denom = 0.0;
  for (double& w : logw) {
    w = std::exp(w - top);
    denom += w;
  }
  for (double& w : logw) w /= denom;
  return logw;
}

std::vector<double> anchor_distances_km(const LatLon& from, const std::vector<LatLon>& anchors) {
  std::vector<double> d(anchors.size());
  for (std::size_t i = 0; i < anchors.size(); ++i) d[i] = haversine_km(from, anchors[i]);
  return d;
}

std::vector<double> transfer_prior(const std::vector<std::vector<double>>& per_scale_weights,
                                   const std::vector<std::vector<double>>& anchor_bins) {
  check(!per_scale_weights.empty(), "transfer_prior: no scales");
  check(!anchor_bins.empty(), "transfer_prior: no anchors");
  const std::size_t bins = anchor_bins.front().size();

  std::vector<double> out(bins, 0.0);
  for (const auto& alpha : per_scale_weights) {
    check(alpha.size() == anchor_bins.size(), "transfer_prior: weight count does not match anchor count");
    for (std::size_t a = 0; a < alpha.size(); ++a) {
      check(anchor_bins[a].size() == bins, "transfer_prior: ragged anchor distributions");
      for (std::size_t t = 0; t < bins; ++t) out[t] += alpha[a] * anchor_bins[a][t];
    }
  }
  const double inv_m = 1.0 / static_cast<double>(per_scale_weights.size());
  double total = 0.0;
  for (double& v : out) {
    v *= inv_m;
    total += v;
  }
  check(total > 0.0, "transfer_prior: degenerate mixture");
  for (double& v : out) v /= total;
  return out;
}

std::vector<TransferredPrior> precompute_transfer(const std::vector<Poi>& pois, const Partition& partition,
                                                  const std::vector<VisitDistribution>& dists,
                                                  const KernelConfig& cfg) {
  check_bandwidths(cfg);
  check(!partition.anchors.empty(), "precompute_transfer: partition has no anchors");
  const i64 n_anchor = static_cast<i64>(partition.anchors.size());
  const i64 n_sparse = static_cast<i64>(partition.sparse.size());

  // Anchor locations and their empirical distributions as one matrix.
  std::vector<LatLon> anchor_locs(partition.anchors.size());
  Tensor<double> r = Tensor<double>::zeros({n_anchor, kWeekBins});
  for (i64 a = 0; a < n_anchor; ++a) {
    const auto id = static_cast<std::size_t>(partition.anchors[static_cast<std::size_t>(a)]);
    check(id < pois.size(), "precompute_transfer: anchor id out of range");
    check(id < dists.size() && dists[id].count > 0,
          "precompute_transfer: anchor POI " + std::to_string(id) + " has no visit distribution");
    anchor_locs[static_cast<std::size_t>(a)] = pois[id].location;
    for (i64 t = 0; t < kWeekBins; ++t) r.at(a, t) = dists[id].bins[static_cast<std::size_t>(t)];
  }

  std::vector<TransferredPrior> priors(partition.sparse.size());
  if (n_sparse == 0) return priors;

  // Distance matrix once, then one weight fill plus one gemm per scale.
  Tensor<double> dist = Tensor<double>::zeros({n_sparse, n_anchor});
  parallel_for(n_sparse, [&](i64 lo, i64 hi) {
    for (i64 s = lo; s < hi; ++s) {
      const auto id = static_cast<std::size_t>(partition.sparse[static_cast<std::size_t>(s)]);
      check(id < pois.size(), "precompute_transfer: sparse id out of range");
      const std::vector<double> row = anchor_distances_km(pois[id].location, anchor_locs);
      for (i64 a = 0; a < n_anchor; ++a) dist.at(s, a) = row[static_cast<std::size_t>(a)];
    }
  });

  Tensor<double> mixed = Tensor<double>::zeros({n_sparse, kWeekBins});
  Tensor<double> weights = Tensor<double>::zeros({n_sparse, n_anchor});
  for (double sigma : cfg.bandwidths_km) {
    parallel_for(n_sparse, [&](i64 lo, i64 hi) {
      std::vector<double> drow(static_cast<std::size_t>(n_anchor));
      for (i64 s = lo; s < hi; ++s) {
        for (i64 a = 0; a < n_anchor; ++a) drow[static_cast<std::size_t>(a)] = dist.at(s, a);
        const std::vector<double> w = kernel_weights(drow, sigma);
        for (i64 a = 0; a < n_anchor; ++a) weights.at(s, a) = w[static_cast<std::size_t>(a)];
      }
    });
    gemm_nn(weights, r, mixed, true);
  }

  const double inv_m = 1.0 / static_cast<double>(cfg.bandwidths_km.size());
  for (i64 s = 0; s < n_sparse; ++s) {
    TransferredPrior& p = priors[static_cast<std::size_t>(s)];
    p.poi_id = partition.sparse[static_cast<std::size_t>(s)];
    p.bins.resize(kWeekBins);
    double total = 0.0;
    for (i64 t = 0; t < kWeekBins; ++t) {
      p.bins[static_cast<std::size_t>(t)] = mixed.at(s, t) * inv_m;
      total += p.bins[static_cast<std::size_t>(t)];
    }
    check(total > 0.0, "precompute_transfer: degenerate prior for POI " + std::to_string(p.poi_id));
    for (double& v : p.bins) v /= total;
  }
  return priors;
}

void write_priors_jsonl(const std::string& path, const std::vector<TransferredPrior>& priors) {
  std::ofstream out = open_out(path);
  for (const TransferredPrior& p : priors) {
    json j;
    j["poi_id"] = p.poi_id;
    j["bins"] = p.bins;
    out << j.dump() << "\n";
  }
  check(out.good(), "write failed: " + path);
}

std::vector<TransferredPrior> load_priors_jsonl(const std::string& path) {
  std::ifstream in = open_in(path);
  std::vector<TransferredPrior> priors;
  std::string line;
  std::size_t lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    if (line.empty()) continue;
    try {
      const json j = json::parse(line);
      TransferredPrior p;
      p.poi_id = j.at("poi_id").get<std::int64_t>();
      p.bins = j.at("bins").get<std::vector<double>>();
      check(p.bins.size() == kWeekBins, "prior must have 168 bins");
      priors.push_back(std::move(p));
    } catch (const json::exception& e) {
      throw std::invalid_argument(path + ":" + std::to_string(lineno) + ": " + e.what());
    } catch (const std::invalid_argument& e) {
      throw std::invalid_argument(path + ":" + std::to_string(lineno) + ": " + e.what());
    }
  }
  return priors;
}

}  // namespace mepoi
