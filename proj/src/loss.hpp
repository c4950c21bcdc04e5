#pragma once

#include <cstdint>
#include <vector>

#include "autodiff.hpp"
#include "cluster.hpp"
#include "model.hpp"

namespace pctl {

// Negatives for one anchor sample. Instance negatives index rows of the
// same-domain batch (self excluded); prototype negatives index prototypes of
// a clustering round with the positive excluded, separately for the
// own-domain and the cross-domain prototype sets.
struct NegativeSet {
  std::vector<std::size_t> instance_rows;
  bool instance_short = false;  // fewer than r peers were available
  std::vector<std::vector<int>> proto_own;    // per round
  std::vector<std::vector<int>> proto_cross;  // per round
};

// Draws the negative sets for one sample. Instance negatives are uniform
// without replacement from the batch peers; prototype negatives are uniform
// without replacement from {0..k-1} minus the positive. The rng must be
// seeded from (run seed, epoch, batch index, sample index) by the caller.
NegativeSet sample_negatives(std::size_t batch_size, std::size_t self_index,
                             const std::vector<int>& s_own, const std::vector<int>& s_cross,
                             const std::vector<std::size_t>& schedule, std::size_t r,
                             std::size_t r_prime, Rng& rng);

struct LossConfig {
  double lambda = 1.0 / 32.0;
  std::size_t r = 32;
  std::size_t r_prime = 32;
  // Test hook: weight on the prototype part of the intra terms. Zero skips
  // building the prototype terms entirely so the intra loss reduces exactly
  // to the summed instance terms.
  double proto_weight = 1.0;
};

// Scalar view of one total-loss evaluation. The additive identities hold
// bit-exactly because each aggregate is read from the graph node that adds
// its two stored operands:
//   l_intra == l_target + l_source
//   l_inter == l_s2t + l_t2s
//   l_dual_proto_nce == l_intra + l_inter
//   total == (lambda * l_dual_proto_nce + l_t) + l_s
// All values are per-sample means over the batch (one documented division
// by the batch size, applied to both the contrastive and the CE sums).
struct LossBreakdown {
  double info_nce_source = 0, info_nce_target = 0;
  double proto_source = 0, proto_target = 0;
  double l_target = 0, l_source = 0, l_intra = 0;
  double l_s2t = 0, l_t2s = 0, l_inter = 0;
  double l_dual_proto_nce = 0;
  double l_t = 0, l_s = 0;
  double total = 0;
  double lambda = 0;

  static const std::vector<const char*>& field_names();
  std::vector<double> field_values() const;
};

// One domain's slice of a paired batch as the loss builders consume it.
struct DomainBatchInputs {
  Var online;                           // raw encoder outputs, n x d
  Tensor momentum;                      // raw momentum outputs, n x d
  std::vector<std::size_t> positions;   // train-split positions (bank lookups)
  std::vector<int> labels;
  std::vector<NegativeSet> negatives;   // one per sample
};

struct BatchLossInputs {
  DomainBatchInputs source;
  DomainBatchInputs target;
  const PrototypeBank* bank = nullptr;
  Var inv_tau;
  LossConfig cfg;
};

// InfoNCE for one anchor: -log( exp(a.p / tau) / sum_j exp(a.n_j / tau) )
// with the positive included in the denominator. All rows must be unit norm
// within 1e-9; inv_tau must lie in (0, 100].
Var info_nce(Tape& tape, Var anchor, const Tensor& positive, const Tensor& negatives,
             Var inv_tau);

// Prototype term of ProtoNCE for one anchor against one clustering round:
// the positive is prototype s, negatives are round prototypes != s, and each
// logit is divided by that prototype's concentration factor.
Var proto_term(Tape& tape, Var anchor, const ClusteringRound& round, int positive_index,
               const std::vector<int>& negative_indices);

struct IntraResult {
  Var loss;      // l_target + l_source (per-sample means)
  Var l_target;
  Var l_source;
  double info_nce_target = 0, info_nce_source = 0;
  double proto_target = 0, proto_source = 0;
};
IntraResult intra_domain_loss(Tape& tape, const BatchLossInputs& in);

struct InterResult {
  Var loss;  // l_s2t + l_t2s
  Var l_s2t;
  Var l_t2s;
};
InterResult inter_domain_loss(Tape& tape, const BatchLossInputs& in);

struct DualResult {
  Var loss;  // intra + inter
  IntraResult intra;
  InterResult inter;
};
DualResult dual_proto_nce(Tape& tape, const BatchLossInputs& in);

struct TotalResult {
  Var loss;
  LossBreakdown breakdown;
};
// lambda * DualProtoNCE + L_t + L_s, where L_t and L_s combine the model CE
// with the prototype CE terms (classifier applied to the raw nearest
// prototypes, which are constants, so those terms train the classifier only).
TotalResult total_loss(Tape& tape, const BatchLossInputs& in, const ModelState& model,
                       const ModelBinding& binding);

// Verification hook: when enabled, info_nce emits a gradient with the wrong
// sign so the self-check can demonstrate that gradcheck catches corruption.
void set_info_nce_gradient_sign_flip(bool enabled);
bool info_nce_gradient_sign_flip();

}  // namespace pctl
