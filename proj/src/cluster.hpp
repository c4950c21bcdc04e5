#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "tensor.hpp"

namespace pctl {

struct KmeansResult {
  Tensor centroids;             // k x d
  std::vector<int> assignments; // n, cluster index per point
  double objective = 0.0;       // sum of squared distances to assigned centroid
  std::size_t iterations = 0;
  bool converged = false;
};

// Lloyd's algorithm with k-means++ initialization. Assignment ties go to the
// lowest cluster index; an empty cluster is repaired by re-seeding it from
// the point currently farthest from its assigned centroid. The objective is
// checked to be non-increasing after every iteration.
KmeansResult kmeans(const Tensor& points, std::size_t k, std::uint64_t seed);

// Per-cluster concentration factors:
//   raw_i = sum_{z in C_i} |z - h_i| / (|C_i| * ln(|C_i| + alpha)),
// then rescaled once by tau_prime / mean so the final values have mean
// exactly tau_prime while preserving ratios. A degenerate cluster (fewer
// than two members, or spread below 1e-8) adopts the widest well-populated
// raw value, and raw values are clipped to their 10th..90th percentile band
// before the rescale; a raw factor near zero would otherwise act as a
// near-infinite inverse temperature on that prototype's logits.
std::vector<double> concentration(const KmeansResult& result, const Tensor& points,
                                  double alpha, double tau_prime);

// One clustering pass: k^(m) prototypes over the normalized momentum
// embeddings of one domain, with concentration factors.
struct ClusteringRound {
  std::size_t m = 0;  // 1-based round index
  std::size_t k = 0;
  Tensor centroids;             // k x d, means of assigned normalized embeddings
  Tensor centroids_normalized;  // k x d, unit rows for similarity lookups
  std::vector<int> assignments;
  std::vector<double> phi;      // concentration factors, mean == tau_prime
};

struct DomainPrototypes {
  std::vector<ClusteringRound> rounds;  // M rounds
  // nearest[m][i]: index of the prototype of round m closest (by cosine over
  // normalized vectors, ties to the lowest index) to sample i of this
  // bank's own domain / of the other domain.
  std::vector<std::vector<int>> nearest_own;
  std::vector<std::vector<int>> nearest_cross;
};

// Per-epoch prototype sets for both domains plus the per-sample
// nearest-prototype indices needed by the contrastive and prototype
// cross-entropy terms. Immutable once built.
struct PrototypeBank {
  std::size_t epoch = 0;
  std::vector<std::size_t> schedule;  // {k^(1), ..., k^(M)}
  DomainPrototypes source;  // prototypes d over u'
  DomainPrototypes target;  // prototypes c over v'

  std::size_t rounds() const { return schedule.size(); }
};

// Builds the bank from raw momentum embeddings (rows follow the train-split
// order of each domain). Embeddings are L2-normalized before clustering so
// prototypes live in the same geometry as every similarity in the losses.
// Each k-means run is seeded by (seed, domain, m); the whole build is a pure
// function of (embeddings, schedule, seed).
PrototypeBank build_prototype_bank(const Tensor& source_momentum, const Tensor& target_momentum,
                                   const std::vector<std::size_t>& schedule, std::uint64_t seed,
                                   std::size_t epoch, double alpha, double tau_prime);

// Human-readable dump (centroids, cluster sizes, phi) for inspection.
std::string bank_debug_dump(const PrototypeBank& bank);

}  // namespace pctl
