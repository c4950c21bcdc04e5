#include "loss.hpp"

#include <atomic>
#include <cmath>

namespace pctl {

namespace {

std::atomic<bool> g_info_nce_sign_flip{false};

void check_unit_row(const Tensor& t, std::size_t row, const char* what) {
  double sq = 0.0;
  for (std::size_t c = 0; c < t.cols(); ++c) sq += t.at(row, c) * t.at(row, c);
  if (std::abs(std::sqrt(sq) - 1.0) > 1e-9) {
    throw Error::runtime(std::string("info_nce: ") + what + " row " + std::to_string(row) +
                         " is not unit norm (|x| = " + format_double(std::sqrt(sq)) + ")");
  }
}

Var sum_losses(Tape& tape, const std::vector<Var>& parts) {
  return tape.sum(tape.concat_rows(parts));
}

}  // namespace

void set_info_nce_gradient_sign_flip(bool enabled) { g_info_nce_sign_flip = enabled; }
bool info_nce_gradient_sign_flip() { return g_info_nce_sign_flip; }

NegativeSet sample_negatives(std::size_t batch_size, std::size_t self_index,
                             const std::vector<int>& s_own, const std::vector<int>& s_cross,
                             const std::vector<std::size_t>& schedule, std::size_t r,
                             std::size_t r_prime, Rng& rng) {
  if (self_index >= batch_size) {
    throw Error::runtime("sample_negatives: self index out of range");
  }
  NegativeSet out;

  std::vector<std::size_t> peers;
  peers.reserve(batch_size - 1);
  for (std::size_t i = 0; i < batch_size; ++i) {
    if (i != self_index) peers.push_back(i);
  }
  if (peers.size() <= r) {
    out.instance_rows = peers;  // everything available, flagged
    out.instance_short = peers.size() < r;
  } else {
    // Partial Fisher-Yates: the first r entries become the draw.
    for (std::size_t i = 0; i < r; ++i) {
      std::size_t j = i + static_cast<std::size_t>(rng.next_below(peers.size() - i));
      std::swap(peers[i], peers[j]);
    }
    out.instance_rows.assign(peers.begin(), peers.begin() + static_cast<std::ptrdiff_t>(r));
  }

  auto draw_protos = [&](int positive, std::size_t k) {
    if (k < r_prime + 1) {
      throw Error::config("negative prototypes: k = " + std::to_string(k) +
                          " cannot supply r' = " + std::to_string(r_prime) +
                          " negatives plus one positive (minimum k is " +
                          std::to_string(r_prime + 1) + ")");
    }
    std::vector<int> pool;
    pool.reserve(k - 1);
    for (std::size_t j = 0; j < k; ++j) {
      if (static_cast<int>(j) != positive) pool.push_back(static_cast<int>(j));
    }
    for (std::size_t i = 0; i < r_prime; ++i) {
      std::size_t j = i + static_cast<std::size_t>(rng.next_below(pool.size() - i));
      std::swap(pool[i], pool[j]);
    }
    pool.resize(r_prime);
    return pool;
  };

  for (std::size_t m = 0; m < schedule.size(); ++m) {
    out.proto_own.push_back(draw_protos(s_own[m], schedule[m]));
  }
  for (std::size_t m = 0; m < schedule.size(); ++m) {
    out.proto_cross.push_back(draw_protos(s_cross[m], schedule[m]));
  }
  return out;
}

Var info_nce(Tape& tape, Var anchor, const Tensor& positive, const Tensor& negatives,
             Var inv_tau) {
  const Tensor& av = anchor.value();
  if (av.rows() != 1 || positive.rows() != 1 || positive.cols() != av.cols() ||
      (negatives.numel() > 0 && negatives.cols() != av.cols())) {
    throw Error::runtime("info_nce: anchor " + av.shape_string() + ", positive " +
                         positive.shape_string() + " and negatives " +
                         negatives.shape_string() + " do not conform");
  }
  double it = inv_tau.value().item();
  if (!(it > 0.0 && it <= 100.0)) {
    throw Error::runtime("info_nce: inverse temperature " + format_double(it) +
                         " outside (0, 100]");
  }
  check_unit_row(av, 0, "anchor");
  check_unit_row(positive, 0, "positive");
  for (std::size_t rrow = 0; rrow < negatives.rows(); ++rrow) {
    check_unit_row(negatives, rrow, "negative");
  }

  // Candidate set J: positive first, then the negatives.
  Tensor candidates(1 + negatives.rows(), av.cols());
  for (std::size_t c = 0; c < av.cols(); ++c) candidates.at(0, c) = positive.at(0, c);
  for (std::size_t rrow = 0; rrow < negatives.rows(); ++rrow) {
    for (std::size_t c = 0; c < av.cols(); ++c) {
      candidates.at(rrow + 1, c) = negatives.at(rrow, c);
    }
  }
  Var sims = tape.matmul(anchor, tape.transpose(tape.input(std::move(candidates))));
  Var logits = tape.mul_scalar(sims, inv_tau);
  Var loss = tape.nll_logits(logits, {0});
  if (g_info_nce_sign_flip) loss = tape.flip_gradient_sign(loss);
  return loss;
}

Var proto_term(Tape& tape, Var anchor, const ClusteringRound& round, int positive_index,
               const std::vector<int>& negative_indices) {
  const Tensor& av = anchor.value();
  if (av.rows() != 1 || av.cols() != round.centroids_normalized.cols()) {
    throw Error::runtime("proto_term: anchor " + av.shape_string() +
                         " does not match prototypes " +
                         round.centroids_normalized.shape_string());
  }
  if (negative_indices.size() + 1 > round.k) {
    throw Error::config("proto_term: " + std::to_string(negative_indices.size()) +
                        " negatives plus a positive exceed k = " + std::to_string(round.k));
  }
  check_unit_row(av, 0, "anchor");

  std::vector<std::size_t> rows;
  rows.push_back(static_cast<std::size_t>(positive_index));
  for (int j : negative_indices) {
    if (j == positive_index) {
      throw Error::runtime("proto_term: positive prototype appears in the negative set");
    }
    rows.push_back(static_cast<std::size_t>(j));
  }
  Tensor inv_phi(1, rows.size());
  for (std::size_t i = 0; i < rows.size(); ++i) {
    double phi = round.phi[rows[i]];
    if (!(phi > 0.0)) {
      throw Error::runtime("proto_term: non-positive concentration factor");
    }
    inv_phi.at(0, i) = 1.0 / phi;
  }
  Tensor protos = round.centroids_normalized.gather_rows(rows);
  Var sims = tape.matmul(anchor, tape.transpose(tape.input(std::move(protos))));
  Var logits = tape.mul(sims, tape.input(std::move(inv_phi)));
  return tape.nll_logits(logits, {0});
}

namespace {

// Everything one domain contributes to the intra-domain loss.
struct DomainIntra {
  Var total;  // per-sample mean
  double info_mean = 0;
  double proto_mean = 0;
};

DomainIntra domain_intra(Tape& tape, const DomainBatchInputs& batch,
                         const DomainPrototypes& own_protos, Var inv_tau,
                         const LossConfig& cfg, std::size_t rounds) {
  std::size_t n = batch.online.value().rows();
  Var online_norm = tape.l2_normalize_rows(batch.online);
  Tensor momentum_norm = l2_normalize_rows_plain(batch.momentum);

  std::vector<Var> instance_parts, proto_parts;
  for (std::size_t i = 0; i < n; ++i) {
    Var anchor = tape.slice_rows(online_norm, {i});
    const NegativeSet& negs = batch.negatives[i];
    instance_parts.push_back(info_nce(tape, anchor, momentum_norm.row_copy(i),
                                      momentum_norm.gather_rows(negs.instance_rows), inv_tau));
    if (cfg.proto_weight != 0.0) {
      for (std::size_t m = 0; m < rounds; ++m) {
        int s = own_protos.nearest_own[m][batch.positions[i]];
        proto_parts.push_back(
            proto_term(tape, anchor, own_protos.rounds[m], s, negs.proto_own[m]));
      }
    }
  }
  Var info_sum = sum_losses(tape, instance_parts);
  double inv_n = 1.0 / static_cast<double>(n);
  DomainIntra out{Var{}, 0, 0};
  if (proto_parts.empty()) {
    out.total = tape.scale(info_sum, inv_n);
    out.info_mean = info_sum.item() * inv_n;
    return out;
  }
  Var proto_sum = tape.scale(sum_losses(tape, proto_parts),
                             cfg.proto_weight / static_cast<double>(rounds));
  out.total = tape.scale(tape.add(info_sum, proto_sum), inv_n);
  out.info_mean = info_sum.item() * inv_n;
  out.proto_mean = proto_sum.item() * inv_n;
  return out;
}

// One direction of the inter-domain loss: anchors of one domain against the
// prototypes of the other, averaged over rounds, mean over the batch.
Var domain_inter(Tape& tape, const DomainBatchInputs& batch,
                 const DomainPrototypes& cross_protos, std::size_t rounds) {
  std::size_t n = batch.online.value().rows();
  Var online_norm = tape.l2_normalize_rows(batch.online);
  std::vector<Var> parts;
  for (std::size_t i = 0; i < n; ++i) {
    Var anchor = tape.slice_rows(online_norm, {i});
    const NegativeSet& negs = batch.negatives[i];
    for (std::size_t m = 0; m < rounds; ++m) {
      int s = cross_protos.nearest_cross[m][batch.positions[i]];
      parts.push_back(proto_term(tape, anchor, cross_protos.rounds[m], s, negs.proto_cross[m]));
    }
  }
  double inv = 1.0 / (static_cast<double>(rounds) * static_cast<double>(n));
  return tape.scale(sum_losses(tape, parts), inv);
}

void check_bank(const BatchLossInputs& in) {
  if (in.bank == nullptr) throw Error::runtime("loss: prototype bank missing");
  if (in.bank->rounds() == 0) throw Error::runtime("loss: prototype bank has no rounds");
}

}  // namespace

IntraResult intra_domain_loss(Tape& tape, const BatchLossInputs& in) {
  check_bank(in);
  std::size_t rounds = in.bank->rounds();
  DomainIntra target = domain_intra(tape, in.target, in.bank->target, in.inv_tau, in.cfg, rounds);
  DomainIntra source = domain_intra(tape, in.source, in.bank->source, in.inv_tau, in.cfg, rounds);
  IntraResult out;
  out.l_target = target.total;
  out.l_source = source.total;
  out.loss = tape.add(target.total, source.total);
  out.info_nce_target = target.info_mean;
  out.info_nce_source = source.info_mean;
  out.proto_target = target.proto_mean;
  out.proto_source = source.proto_mean;
  return out;
}

InterResult inter_domain_loss(Tape& tape, const BatchLossInputs& in) {
  check_bank(in);
  std::size_t rounds = in.bank->rounds();
  InterResult out;
  out.l_s2t = domain_inter(tape, in.source, in.bank->target, rounds);
  out.l_t2s = domain_inter(tape, in.target, in.bank->source, rounds);
  out.loss = tape.add(out.l_s2t, out.l_t2s);
  return out;
}

DualResult dual_proto_nce(Tape& tape, const BatchLossInputs& in) {
  DualResult out;
  out.intra = intra_domain_loss(tape, in);
  out.inter = inter_domain_loss(tape, in);
  out.loss = tape.add(out.intra.loss, out.inter.loss);
  return out;
}

namespace {

// Model CE plus the prototype CE terms for one domain; per-sample mean.
Var domain_ce(Tape& tape, const BatchLossInputs& in, const DomainBatchInputs& batch,
              const DomainPrototypes& own_protos, const ModelState& model,
              const ModelBinding& binding) {
  std::size_t n = batch.online.value().rows();
  for (int y : batch.labels) {
    if (y != 0 && y != 1) {
      throw Error::config("total_loss: label " + std::to_string(y) + " outside {0, 1}");
    }
  }
  Var model_logits = model.classifier_logits(tape, binding, batch.online);
  Var ce_sum = tape.sum(tape.nll_logits(model_logits, batch.labels));

  // Prototype CE: the classifier sees the raw nearest centroid of each
  // sample; the centroids are constants, so only the classifier learns here.
  std::size_t rounds = in.bank->rounds();
  std::vector<Var> proto_parts;
  for (std::size_t m = 0; m < rounds; ++m) {
    Var proto_logits =
        model.classifier_logits(tape, binding, tape.input(own_protos.rounds[m].centroids));
    std::vector<std::size_t> s_rows;
    s_rows.reserve(n);
    for (std::size_t i = 0; i < n; ++i) {
      s_rows.push_back(static_cast<std::size_t>(own_protos.nearest_own[m][batch.positions[i]]));
    }
    proto_parts.push_back(
        tape.sum(tape.nll_logits(tape.slice_rows(proto_logits, s_rows), batch.labels)));
  }
  Var proto_sum = tape.scale(sum_losses(tape, proto_parts), 1.0 / static_cast<double>(rounds));
  return tape.scale(tape.add(ce_sum, proto_sum), 1.0 / static_cast<double>(n));
}

}  // namespace

TotalResult total_loss(Tape& tape, const BatchLossInputs& in, const ModelState& model,
                       const ModelBinding& binding) {
  check_bank(in);
  DualResult dual = dual_proto_nce(tape, in);
  Var l_t = domain_ce(tape, in, in.target, in.bank->target, model, binding);
  Var l_s = domain_ce(tape, in, in.source, in.bank->source, model, binding);
  Var total = tape.add(tape.add(tape.scale(dual.loss, in.cfg.lambda), l_t), l_s);

  TotalResult out;
  out.loss = total;
  LossBreakdown& b = out.breakdown;
  b.info_nce_source = dual.intra.info_nce_source;
  b.info_nce_target = dual.intra.info_nce_target;
  b.proto_source = dual.intra.proto_source;
  b.proto_target = dual.intra.proto_target;
  b.l_target = dual.intra.l_target.item();
  b.l_source = dual.intra.l_source.item();
  b.l_intra = dual.intra.loss.item();
  b.l_s2t = dual.inter.l_s2t.item();
  b.l_t2s = dual.inter.l_t2s.item();
  b.l_inter = dual.inter.loss.item();
  b.l_dual_proto_nce = dual.loss.item();
  b.l_t = l_t.item();
  b.l_s = l_s.item();
  b.total = total.item();
  b.lambda = in.cfg.lambda;
  return out;
}

const std::vector<const char*>& LossBreakdown::field_names() {
  static const std::vector<const char*> names = {
      "info_nce_source", "info_nce_target", "proto_source", "proto_target",
      "l_target",        "l_source",        "l_intra",      "l_s2t",
      "l_t2s",           "l_inter",         "l_dual_proto_nce", "l_t",
      "l_s",             "total",           "lambda"};
  return names;
}

std::vector<double> LossBreakdown::field_values() const {
  return {info_nce_source, info_nce_target, proto_source, proto_target,
          l_target,        l_source,        l_intra,      l_s2t,
          l_t2s,           l_inter,         l_dual_proto_nce, l_t,
          l_s,             total,           lambda};
}

}  // namespace pctl
