#include "cluster.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <sstream>

namespace pctl {

namespace {

int nearest_centroid(const Tensor& points, std::size_t row, const Tensor& centroids) {
  int best = 0;
  double best_d = std::numeric_limits<double>::infinity();
  for (std::size_t j = 0; j < centroids.rows(); ++j) {
    double d = squared_distance_rows(points, row, centroids, j);
    if (d < best_d) {  // strict: equidistant points keep the lowest index
      best_d = d;
      best = static_cast<int>(j);
    }
  }
  return best;
}

Tensor kmeans_pp_init(const Tensor& points, std::size_t k, Rng& rng) {
  std::size_t n = points.rows();
  Tensor centroids(k, points.cols());
  std::size_t latest = static_cast<std::size_t>(rng.next_below(n));
  std::vector<double> dist2(n, std::numeric_limits<double>::infinity());
  for (std::size_t j = 0; j < k; ++j) {
    for (std::size_t c = 0; c < points.cols(); ++c) {
      centroids.at(j, c) = points.at(latest, c);
    }
    if (j + 1 == k) break;
    double total = 0.0;
    for (std::size_t i = 0; i < n; ++i) {
      double d = squared_distance_rows(points, i, points, latest);
      if (d < dist2[i]) dist2[i] = d;
      total += dist2[i];
    }
    if (total > 0.0) {
      // Weighted draw proportional to squared distance from the chosen set.
      double r = rng.next_double() * total;
      double acc = 0.0;
      latest = n - 1;
      for (std::size_t i = 0; i < n; ++i) {
        acc += dist2[i];
        if (r < acc) {
          latest = i;
          break;
        }
      }
    } else {
      latest = static_cast<std::size_t>(rng.next_below(n));  // all points coincide
    }
  }
  return centroids;
}

}  // namespace

KmeansResult kmeans(const Tensor& points, std::size_t k, std::uint64_t seed) {
  std::size_t n = points.rows();
  if (k == 0) throw Error::config("kmeans: k must be positive");
  if (n < k) {
    throw Error::config("kmeans: " + std::to_string(n) + " points for k = " + std::to_string(k));
  }
  if (!points.all_finite()) throw Error::runtime("kmeans: non-finite points");

  Rng rng(seed);
  KmeansResult res;
  res.centroids = kmeans_pp_init(points, k, rng);
  res.assignments.assign(n, -1);

  double prev_objective = std::numeric_limits<double>::infinity();
  constexpr std::size_t kMaxIterations = 100;
  for (std::size_t iter = 0; iter < kMaxIterations; ++iter) {
    // Assignment step.
    bool changed = false;
    double objective = 0.0;
    for (std::size_t i = 0; i < n; ++i) {
      int a = nearest_centroid(points, i, res.centroids);
      if (a != res.assignments[i]) changed = true;
      res.assignments[i] = a;
      objective += squared_distance_rows(points, i, res.centroids, static_cast<std::size_t>(a));
    }
    if (objective > prev_objective + 1e-9 * std::max(1.0, prev_objective)) {
      throw Error::runtime("kmeans: objective increased from " + format_double(prev_objective) +
                           " to " + format_double(objective) + " at iteration " +
                           std::to_string(iter));
    }
    prev_objective = objective;
    res.objective = objective;
    res.iterations = iter + 1;
    if (!changed && iter > 0) {
      res.converged = true;
      break;
    }

    // Update step.
    Tensor sums(k, points.cols());
    std::vector<std::size_t> counts(k, 0);
    for (std::size_t i = 0; i < n; ++i) {
      std::size_t a = static_cast<std::size_t>(res.assignments[i]);
      ++counts[a];
      for (std::size_t c = 0; c < points.cols(); ++c) sums.at(a, c) += points.at(i, c);
    }
    std::vector<char> reseeded(n, 0);
    for (std::size_t j = 0; j < k; ++j) {
      if (counts[j] > 0) {
        for (std::size_t c = 0; c < points.cols(); ++c) {
          res.centroids.at(j, c) = sums.at(j, c) / static_cast<double>(counts[j]);
        }
      } else {
        // Re-seed from the point farthest from its assigned centroid.
        double worst = -1.0;
        std::size_t pick = 0;
        for (std::size_t i = 0; i < n; ++i) {
          if (reseeded[i]) continue;
          std::size_t a = static_cast<std::size_t>(res.assignments[i]);
          double d = squared_distance_rows(points, i, res.centroids, a);
          if (d > worst) {
            worst = d;
            pick = i;
          }
        }
        reseeded[pick] = 1;
        for (std::size_t c = 0; c < points.cols(); ++c) {
          res.centroids.at(j, c) = points.at(pick, c);
        }
      }
    }
  }

  if (!res.converged) {
    // Final assignment against the last centroids so the invariants hold.
    double objective = 0.0;
    for (std::size_t i = 0; i < n; ++i) {
      res.assignments[i] = nearest_centroid(points, i, res.centroids);
      objective +=
          squared_distance_rows(points, i, res.centroids, static_cast<std::size_t>(res.assignments[i]));
    }
    res.objective = objective;
  }
  return res;
}

std::vector<double> concentration(const KmeansResult& result, const Tensor& points,
                                  double alpha, double tau_prime) {
  if (!(alpha > 0.0)) throw Error::config("concentration: alpha must be positive");
  if (!(tau_prime > 0.0)) throw Error::config("concentration: tau_prime must be positive");
  std::size_t k = result.centroids.rows();
  std::vector<double> sums(k, 0.0);
  std::vector<std::size_t> counts(k, 0);
  for (std::size_t i = 0; i < points.rows(); ++i) {
    std::size_t a = static_cast<std::size_t>(result.assignments[i]);
    sums[a] += std::sqrt(squared_distance_rows(points, i, result.centroids, a));
    ++counts[a];
  }
  constexpr double kEpsilon = 1e-8;
  std::vector<double> phi(k, 0.0);
  double widest = 0.0;
  for (std::size_t j = 0; j < k; ++j) {
    if (counts[j] == 0) {
      throw Error::runtime("concentration: cluster " + std::to_string(j) +
                           " is empty after repair");
    }
    double nj = static_cast<double>(counts[j]);
    phi[j] = sums[j] / (nj * std::log(nj + alpha));
    if (counts[j] >= 2) widest = std::max(widest, phi[j]);
  }
  // A singleton or zero-spread cluster has a raw factor of zero; treating it
  // as maximally sharp would put a near-infinite inverse temperature on that
  // prototype's logits. Degenerate clusters instead adopt the widest
  // well-populated spread, and the remaining spreads are clipped to the
  // 10th..90th percentile band before the mean-tau' rescale.
  if (widest <= 0.0) widest = kEpsilon;
  for (std::size_t j = 0; j < k; ++j) {
    if (counts[j] < 2 || phi[j] < kEpsilon) phi[j] = widest;
  }
  std::vector<double> sorted = phi;
  std::sort(sorted.begin(), sorted.end());
  double lo = sorted[(k - 1) / 10];
  double hi = sorted[((k - 1) * 9 + 9) / 10];
  double mean = 0.0;
  for (double& p : phi) {
    p = std::min(hi, std::max(lo, p));
    mean += p;
  }
  mean /= static_cast<double>(k);
  // Single rescale: the unique solution with mean tau_prime preserving ratios.
  double factor = tau_prime / mean;
  for (double& p : phi) p *= factor;
  return phi;
}

namespace {

std::vector<int> nearest_by_cosine(const Tensor& normalized_points,
                                   const Tensor& normalized_centroids) {
  std::vector<int> out(normalized_points.rows(), 0);
  for (std::size_t i = 0; i < normalized_points.rows(); ++i) {
    double best = -std::numeric_limits<double>::infinity();
    int arg = 0;
    for (std::size_t j = 0; j < normalized_centroids.rows(); ++j) {
      double s = dot_rows(normalized_points, i, normalized_centroids, j);
      if (s > best) {  // ties keep the lowest index
        best = s;
        arg = static_cast<int>(j);
      }
    }
    out[i] = arg;
  }
  return out;
}

DomainPrototypes cluster_domain(const Tensor& own_normalized, const Tensor& cross_normalized,
                                const std::vector<std::size_t>& schedule, std::uint64_t seed,
                                std::uint64_t domain_tag, double alpha, double tau_prime) {
  DomainPrototypes out;
  for (std::size_t m = 0; m < schedule.size(); ++m) {
    std::size_t k = schedule[m];
    if (own_normalized.rows() < k) {
      throw Error::config("prototype bank: round m = " + std::to_string(m + 1) + " needs k = " +
                          std::to_string(k) + " clusters but the domain has only " +
                          std::to_string(own_normalized.rows()) + " samples");
    }
    ClusteringRound round;
    round.m = m + 1;
    round.k = k;
    KmeansResult km = kmeans(own_normalized, k, mix_seed({seed, domain_tag, m + 1}));
    round.centroids = km.centroids;
    round.centroids_normalized = l2_normalize_rows_plain(km.centroids);
    round.assignments = km.assignments;
    round.phi = concentration(km, own_normalized, alpha, tau_prime);
    out.nearest_own.push_back(nearest_by_cosine(own_normalized, round.centroids_normalized));
    out.nearest_cross.push_back(nearest_by_cosine(cross_normalized, round.centroids_normalized));
    out.rounds.push_back(std::move(round));
  }
  return out;
}

}  // namespace

PrototypeBank build_prototype_bank(const Tensor& source_momentum, const Tensor& target_momentum,
                                   const std::vector<std::size_t>& schedule, std::uint64_t seed,
                                   std::size_t epoch, double alpha, double tau_prime) {
  if (schedule.empty()) throw Error::config("prototype bank: empty clustering schedule");
  Tensor source_norm = l2_normalize_rows_plain(source_momentum);
  Tensor target_norm = l2_normalize_rows_plain(target_momentum);

  PrototypeBank bank;
  bank.epoch = epoch;
  bank.schedule = schedule;
  bank.source = cluster_domain(source_norm, target_norm, schedule, seed, 1, alpha, tau_prime);
  bank.target = cluster_domain(target_norm, source_norm, schedule, seed, 2, alpha, tau_prime);

  // Concentration means must come out at tau_prime exactly (up to rounding);
  // a breach here would silently corrupt every prototype term downstream.
  for (const DomainPrototypes* d : {&bank.source, &bank.target}) {
    for (const ClusteringRound& r : d->rounds) {
      double mean = 0.0;
      for (double p : r.phi) {
        if (!(p > 0.0)) throw Error::runtime("prototype bank: non-positive concentration");
        mean += p;
      }
      mean /= static_cast<double>(r.phi.size());
      if (std::abs(mean - tau_prime) > 1e-9) {
        throw Error::runtime("prototype bank: concentration mean " + format_double(mean) +
                             " deviates from tau_prime = " + format_double(tau_prime));
      }
    }
  }
  return bank;
}

std::string bank_debug_dump(const PrototypeBank& bank) {
  std::ostringstream out;
  out << "epoch " << bank.epoch << "\n";
  auto dump_domain = [&](const char* name, const DomainPrototypes& d) {
    for (const ClusteringRound& r : d.rounds) {
      out << name << " round " << r.m << " k " << r.k << "\n";
      std::vector<std::size_t> sizes(r.k, 0);
      for (int a : r.assignments) ++sizes[static_cast<std::size_t>(a)];
      for (std::size_t j = 0; j < r.k; ++j) {
        out << "  cluster " << j << " size " << sizes[j] << " phi " << format_double(r.phi[j])
            << " centroid";
        for (std::size_t c = 0; c < r.centroids.cols(); ++c) {
          out << " " << format_double(r.centroids.at(j, c));
        }
        out << "\n";
      }
    }
  };
  dump_domain("source", bank.source);
  dump_domain("target", bank.target);
  return out.str();
}

}  // namespace pctl
