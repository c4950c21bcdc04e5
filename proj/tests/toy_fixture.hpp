// Shared test fixture: a small two-domain batch with a real prototype bank
// and drawn negative sets, plus conversion into the plain-array form the
// independent oracle consumes.
#pragma once

#include <vector>

#include "cluster.hpp"
#include "loss.hpp"
#include "model.hpp"
#include "oracle.hpp"

namespace toy {

using pctl::Tensor;

struct Fixture {
  std::size_t n = 0, d = 0, k = 0;
  std::vector<std::size_t> schedule;
  Tensor u0, v0;        // raw online embeddings (the differentiation point)
  Tensor u_mom, v_mom;  // raw momentum embeddings (constants)
  pctl::PrototypeBank bank;
  std::vector<pctl::NegativeSet> src_negs, tgt_negs;
  std::vector<int> src_labels, tgt_labels;
  std::vector<std::size_t> positions;
  pctl::LossConfig cfg;
};

inline Tensor random_tensor(std::size_t rows, std::size_t cols, pctl::Rng& rng) {
  Tensor t(rows, cols);
  for (std::size_t i = 0; i < t.numel(); ++i) t[i] = rng.next_uniform(-2.0, 2.0);
  return t;
}

// Embeddings drawn around k well-separated directions, one cluster per
// sample index modulo k. Balanced clusters keep every concentration factor
// an O(1) quantity, so toy losses and their gradients stay well conditioned.
inline Tensor clustered_tensor(std::size_t rows, std::size_t cols, std::size_t k,
                               pctl::Rng& rng, const Tensor& centers) {
  Tensor t(rows, cols);
  for (std::size_t i = 0; i < rows; ++i) {
    std::size_t c = i % k;
    for (std::size_t j = 0; j < cols; ++j) {
      t.at(i, j) = centers.at(c, j) + 0.35 * rng.next_normal();
    }
  }
  return t;
}

namespace detail {

inline bool well_conditioned(const pctl::PrototypeBank& bank) {
  for (const pctl::DomainPrototypes* dp : {&bank.source, &bank.target}) {
    for (const pctl::ClusteringRound& round : dp->rounds) {
      std::vector<std::size_t> sizes(round.k, 0);
      for (int a : round.assignments) ++sizes[static_cast<std::size_t>(a)];
      for (std::size_t j = 0; j < round.k; ++j) {
        if (sizes[j] < 2) return false;
      }
    }
  }
  return true;
}

inline Fixture try_make(std::uint64_t seed, std::size_t n, std::size_t d, std::size_t k,
                        std::size_t rounds) {
  pctl::Rng rng(seed);
  Fixture f;
  f.n = n;
  f.d = d;
  f.k = k;
  for (std::size_t m = 0; m < rounds; ++m) f.schedule.push_back(k);
  // Centers on scaled axes (k <= d) keep the generative clusters crisply
  // separated so k-means recovers a balanced partition.
  Tensor centers(k, d);
  for (std::size_t c = 0; c < k; ++c) {
    for (std::size_t j = 0; j < d; ++j) centers.at(c, j) = 0.3 * rng.next_normal();
    centers.at(c, c % d) += 3.0;
  }
  f.u0 = clustered_tensor(n, d, k, rng, centers);
  f.v0 = clustered_tensor(n, d, k, rng, centers);
  f.u_mom = clustered_tensor(n, d, k, rng, centers);
  f.v_mom = clustered_tensor(n, d, k, rng, centers);
  f.bank = pctl::build_prototype_bank(f.u_mom, f.v_mom, f.schedule, rng.next_u64(), 1, 10.0, 0.2);
  return f;
}

}  // namespace detail

inline Fixture make(std::uint64_t seed, std::size_t n, std::size_t d, std::size_t k,
                    std::size_t r, std::size_t r_prime, std::size_t rounds = 1) {
  if (n < 2 * k) {
    throw pctl::Error::config("toy fixture: need at least two samples per cluster");
  }
  // Degenerate (singleton) clusters would push a concentration factor to its
  // floor and blow the logits up; retry deterministically until the bank is
  // well conditioned.
  Fixture f;
  bool ok = false;
  for (std::uint64_t attempt = 0; attempt < 32 && !ok; ++attempt) {
    f = detail::try_make(pctl::mix_seed({seed, attempt}), n, d, k, rounds);
    ok = detail::well_conditioned(f.bank);
  }
  if (!ok) {
    throw pctl::Error::runtime("toy fixture seed " + std::to_string(seed) +
                               " produced only degenerate clusterings");
  }
  pctl::Rng rng(pctl::mix_seed({seed, 0x6e656773ULL}));
  f.cfg.lambda = 1.0 / 32.0;
  f.cfg.r = r;
  f.cfg.r_prime = r_prime;
  for (std::size_t i = 0; i < n; ++i) {
    f.positions.push_back(i);
    f.src_labels.push_back(static_cast<int>(rng.next_below(2)));
    f.tgt_labels.push_back(static_cast<int>(rng.next_below(2)));
    auto draw = [&](const pctl::DomainPrototypes& own, const pctl::DomainPrototypes& cross) {
      std::vector<int> s_own, s_cross;
      for (std::size_t m = 0; m < rounds; ++m) {
        s_own.push_back(own.nearest_own[m][i]);
        s_cross.push_back(cross.nearest_cross[m][i]);
      }
      return pctl::sample_negatives(n, i, s_own, s_cross, f.schedule, r, r_prime, rng);
    };
    f.src_negs.push_back(draw(f.bank.source, f.bank.target));
    f.tgt_negs.push_back(draw(f.bank.target, f.bank.source));
  }
  return f;
}

// Loss inputs over explicit online embeddings already on the tape.
inline pctl::BatchLossInputs inputs(const Fixture& f, pctl::Var u, pctl::Var v,
                                    pctl::Var inv_tau) {
  pctl::BatchLossInputs in;
  in.bank = &f.bank;
  in.cfg = f.cfg;
  in.inv_tau = inv_tau;
  in.source.online = u;
  in.source.momentum = f.u_mom;
  in.source.positions = f.positions;
  in.source.labels = f.src_labels;
  in.source.negatives = f.src_negs;
  in.target.online = v;
  in.target.momentum = f.v_mom;
  in.target.positions = f.positions;
  in.target.labels = f.tgt_labels;
  in.target.negatives = f.tgt_negs;
  return in;
}

// The point for gradient checks stacks u over v.
inline Tensor stack_uv(const Fixture& f) {
  Tensor point(2 * f.n, f.d);
  for (std::size_t i = 0; i < f.n; ++i) {
    for (std::size_t c = 0; c < f.d; ++c) {
      point.at(i, c) = f.u0.at(i, c);
      point.at(f.n + i, c) = f.v0.at(i, c);
    }
  }
  return point;
}

inline pctl::BatchLossInputs inputs_from_point(const Fixture& f, pctl::Tape& tape,
                                               pctl::Var point, pctl::Var inv_tau) {
  std::vector<std::size_t> top, bottom;
  for (std::size_t i = 0; i < f.n; ++i) top.push_back(i);
  for (std::size_t i = 0; i < f.n; ++i) bottom.push_back(f.n + i);
  return inputs(f, tape.slice_rows(point, top), tape.slice_rows(point, bottom), inv_tau);
}

// ---- conversion to the oracle's plain-array form ----

inline oracle::Mat to_mat(const Tensor& t) {
  oracle::Mat out(t.rows(), oracle::Vec(t.cols(), 0.0));
  for (std::size_t r = 0; r < t.rows(); ++r) {
    for (std::size_t c = 0; c < t.cols(); ++c) out[r][c] = t.at(r, c);
  }
  return out;
}

inline oracle::ProtoData proto_data(const pctl::DomainPrototypes& d) {
  oracle::ProtoData out;
  for (const pctl::ClusteringRound& round : d.rounds) {
    out.centroids.push_back(to_mat(round.centroids));
    out.phi.push_back(round.phi);
  }
  return out;
}

inline oracle::DomainData domain_data(const Fixture& f, bool source) {
  oracle::DomainData out;
  out.online = to_mat(source ? f.u0 : f.v0);
  out.momentum = to_mat(source ? f.u_mom : f.v_mom);
  const auto& negs = source ? f.src_negs : f.tgt_negs;
  const pctl::DomainPrototypes& own = source ? f.bank.source : f.bank.target;
  const pctl::DomainPrototypes& cross = source ? f.bank.target : f.bank.source;
  for (std::size_t i = 0; i < f.n; ++i) {
    out.instance_negatives.push_back(negs[i].instance_rows);
    out.proto_negs_own.push_back(negs[i].proto_own);
    out.proto_negs_cross.push_back(negs[i].proto_cross);
  }
  for (std::size_t m = 0; m < f.schedule.size(); ++m) {
    out.s_own.push_back(own.nearest_own[m]);
    out.s_cross.push_back(cross.nearest_cross[m]);
  }
  out.labels = source ? f.src_labels : f.tgt_labels;
  return out;
}

}  // namespace toy
