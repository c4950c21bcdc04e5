#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "autodiff.hpp"
#include "tensor.hpp"

namespace pctl {

enum class Domain { Source, Target };

const char* domain_name(Domain d);
Domain parse_domain(const std::string& s);

// Axis-aligned box in normalized image coordinates.
struct BoundingBox {
  double x1 = 0, y1 = 0, x2 = 0, y2 = 0;
  void validate() const;
};

// [x1, y1, x2, y2, w, h, w*h]
std::vector<double> positional_encoding(const BoundingBox& box);

// One labeled instance: an instruction feature vector, the candidate region
// feature and box, detector context regions, a binary match label and the
// domain tag.
struct SampleRecord {
  std::uint64_t id = 0;
  Domain domain = Domain::Source;
  int label = 0;  // 1 iff the candidate matches the referred object
  std::vector<double> instruction_feats;
  std::vector<double> candidate_feat;
  BoundingBox candidate_box;
  std::vector<std::vector<double>> context_feats;
  std::vector<BoundingBox> context_boxes;

  void validate() const;
};

struct EncoderConfig {
  std::size_t d_inst = 16;
  std::size_t d_vis = 16;
  std::size_t n_det = 4;
  std::size_t hidden = 32;        // #H
  std::size_t layers = 2;         // #L trunk depth
  std::size_t embed_dim = 16;     // d
  std::size_t classifier_hidden = 16;
  std::string activation = "tanh";  // or "relu"
  double gamma = 0.999;             // EMA smoothing coefficient

  std::size_t input_dim() const { return d_inst + 2 * d_vis + 14; }
  void validate() const;
};

enum class Which { Online, Momentum };

// Learning-rate groups: the MLP trunk stands in for the transformer and gets
// the lower rate; the embedder, classifier and temperature get the general
// rate.
enum class ParamGroup { Body, General };

// Vars for every trainable tensor on one tape, in declaration order.
struct ModelBinding {
  std::vector<Var> encoder;     // embedder, trunk layers, head
  std::vector<Var> classifier;  // W1, b1, W2, b2
  Var inv_tau;
};

// Encoder f_theta, its momentum copy f_theta', the two-layer classifier g and
// the learnable inverse temperature. Parameter tensors persist across the
// per-batch tapes; bind() re-creates leaves on a fresh tape each step.
class ModelState {
 public:
  ModelState() = default;
  static ModelState init(const EncoderConfig& cfg, std::uint64_t seed);

  const EncoderConfig& config() const { return cfg_; }

  // Trainable tensors in declaration order (encoder, classifier, inv_tau).
  std::vector<Tensor*> trainable();
  std::vector<const Tensor*> trainable() const;
  // Group id per trainable tensor, parallel to trainable().
  std::vector<ParamGroup> groups() const;

  ModelBinding bind(Tape& tape) const;          // trainable leaves
  ModelBinding bind_frozen(Tape& tape) const;   // constant leaves (evaluation)

  // Builds the (n x input_dim) matrix for a batch of samples, validating
  // feature dimensions against the configuration.
  Tensor assemble_inputs(const std::vector<const SampleRecord*>& samples) const;

  // Batch encode on the given tape. Online uses the bound parameters and
  // participates in gradients; Momentum uses theta' as constants and can
  // never contribute gradients.
  Var encode(Tape& tape, const ModelBinding& binding, const Tensor& inputs, Which which) const;

  // Convenience single-sample encode on a scratch tape (values only).
  Tensor encode_values(const SampleRecord& sample, Which which) const;
  Tensor encode_values(const std::vector<const SampleRecord*>& samples, Which which) const;

  // Classifier logits for rows of `embeddings`; column 1 is the match class.
  Var classifier_logits(Tape& tape, const ModelBinding& binding, Var embeddings) const;
  // p(y=1) for one embedding.
  double classify(const std::vector<double>& embedding) const;

  // theta' <- gamma * theta' + (1 - gamma) * theta
  void momentum_update();

  double inv_tau() const { return inv_tau_.item(); }
  void set_inv_tau(double v) { inv_tau_[0] = v; }
  // Clamp 1/tau into [kInvTauFloor, kInvTauCeiling].
  void clamp_temperature();

  static constexpr double kInvTauInit = 0.07;
  static constexpr double kInvTauFloor = 1e-4;
  static constexpr double kInvTauCeiling = 100.0;

  const std::vector<Tensor>& encoder_params() const { return encoder_; }
  std::vector<Tensor>& encoder_params() { return encoder_; }
  const std::vector<Tensor>& momentum_params() const { return momentum_; }
  std::vector<Tensor>& momentum_params() { return momentum_; }
  std::vector<Tensor>& classifier_params() { return classifier_; }

  void save(const std::string& path) const;
  static ModelState load(const std::string& path);

  bool operator==(const ModelState& other) const;

 private:
  Var forward_mlp(Tape& tape, const std::vector<Var>& params, Var x) const;

  EncoderConfig cfg_;
  std::vector<Tensor> encoder_;   // W_emb, b_emb, [W_i, b_i]..., W_head, b_head
  std::vector<Tensor> momentum_;  // same shapes as encoder_
  std::vector<Tensor> classifier_;  // W1, b1, W2, b2
  Tensor inv_tau_ = Tensor::scalar(kInvTauInit);
};

}  // namespace pctl
