#include "model.hpp"

#include <algorithm>
#include <cmath>
#include <cstring>
#include <fstream>

namespace pctl {

const char* domain_name(Domain d) { return d == Domain::Source ? "source" : "target"; }

Domain parse_domain(const std::string& s) {
  if (s == "source") return Domain::Source;
  if (s == "target") return Domain::Target;
  throw Error::config("unknown domain '" + s + "' (expected source|target)");
}

void BoundingBox::validate() const {
  auto in_unit = [](double v) { return v >= 0.0 && v <= 1.0; };
  if (!in_unit(x1) || !in_unit(y1) || !in_unit(x2) || !in_unit(y2) || x2 < x1 || y2 < y1) {
    throw Error::config("BoundingBox: invalid coordinates (" + format_double(x1) + ", " +
                        format_double(y1) + ", " + format_double(x2) + ", " +
                        format_double(y2) + ")");
  }
}

std::vector<double> positional_encoding(const BoundingBox& box) {
  box.validate();
  double w = box.x2 - box.x1;
  double h = box.y2 - box.y1;
  return {box.x1, box.y1, box.x2, box.y2, w, h, w * h};
}

void SampleRecord::validate() const {
  if (label != 0 && label != 1) {
    throw Error::config("SampleRecord " + std::to_string(id) + ": label must be 0 or 1");
  }
  if (context_feats.size() != context_boxes.size()) {
    throw Error::config("SampleRecord " + std::to_string(id) +
                        ": context feature/box counts differ");
  }
  if (context_feats.empty()) {
    throw Error::config("SampleRecord " + std::to_string(id) + ": no context regions");
  }
  candidate_box.validate();
  for (const BoundingBox& b : context_boxes) b.validate();
  auto finite = [](const std::vector<double>& v) {
    return std::all_of(v.begin(), v.end(), [](double x) { return std::isfinite(x); });
  };
  if (!finite(instruction_feats) || !finite(candidate_feat)) {
    throw Error::config("SampleRecord " + std::to_string(id) + ": non-finite features");
  }
  for (const auto& c : context_feats) {
    if (!finite(c)) {
      throw Error::config("SampleRecord " + std::to_string(id) + ": non-finite features");
    }
  }
}

void EncoderConfig::validate() const {
  if (d_inst == 0 || d_vis == 0 || n_det == 0 || hidden == 0 || embed_dim == 0 ||
      classifier_hidden == 0) {
    throw Error::config("EncoderConfig: dimensions must be positive");
  }
  if (activation != "tanh" && activation != "relu") {
    throw Error::config("EncoderConfig: activation '" + activation + "' (expected tanh|relu)");
  }
  if (!(gamma >= 0.0 && gamma <= 1.0)) {
    throw Error::config("EncoderConfig: gamma " + format_double(gamma) + " outside [0, 1]");
  }
}

namespace {

Tensor init_linear(std::size_t fan_in, std::size_t fan_out, Rng& rng) {
  Tensor w(fan_in, fan_out);
  double bound = 1.0 / std::sqrt(static_cast<double>(fan_in));
  for (std::size_t i = 0; i < w.numel(); ++i) w[i] = rng.next_uniform(-bound, bound);
  return w;
}

Tensor init_bias(std::size_t fan_in, std::size_t fan_out, Rng& rng) {
  Tensor b(1, fan_out);
  double bound = 1.0 / std::sqrt(static_cast<double>(fan_in));
  for (std::size_t i = 0; i < b.numel(); ++i) b[i] = rng.next_uniform(-bound, bound);
  return b;
}

}  // namespace

ModelState ModelState::init(const EncoderConfig& cfg, std::uint64_t seed) {
  cfg.validate();
  ModelState m;
  m.cfg_ = cfg;
  Rng rng(mix_seed({seed, 0x6d6f64656cULL}));

  std::size_t in = cfg.input_dim();
  m.encoder_.push_back(init_linear(in, cfg.hidden, rng));       // embedder W
  m.encoder_.push_back(init_bias(in, cfg.hidden, rng));         // embedder b
  for (std::size_t l = 0; l < cfg.layers; ++l) {
    m.encoder_.push_back(init_linear(cfg.hidden, cfg.hidden, rng));
    m.encoder_.push_back(init_bias(cfg.hidden, cfg.hidden, rng));
  }
  m.encoder_.push_back(init_linear(cfg.hidden, cfg.embed_dim, rng));  // head W
  m.encoder_.push_back(init_bias(cfg.hidden, cfg.embed_dim, rng));    // head b

  m.momentum_ = m.encoder_;  // theta' starts as a copy of theta

  m.classifier_.push_back(init_linear(cfg.embed_dim, cfg.classifier_hidden, rng));
  m.classifier_.push_back(init_bias(cfg.embed_dim, cfg.classifier_hidden, rng));
  m.classifier_.push_back(init_linear(cfg.classifier_hidden, 2, rng));
  m.classifier_.push_back(init_bias(cfg.classifier_hidden, 2, rng));

  m.inv_tau_ = Tensor::scalar(kInvTauInit);
  return m;
}

std::vector<Tensor*> ModelState::trainable() {
  std::vector<Tensor*> out;
  for (Tensor& t : encoder_) out.push_back(&t);
  for (Tensor& t : classifier_) out.push_back(&t);
  out.push_back(&inv_tau_);
  return out;
}

std::vector<const Tensor*> ModelState::trainable() const {
  std::vector<const Tensor*> out;
  for (const Tensor& t : encoder_) out.push_back(&t);
  for (const Tensor& t : classifier_) out.push_back(&t);
  out.push_back(&inv_tau_);
  return out;
}

std::vector<ParamGroup> ModelState::groups() const {
  // Embedder (first linear) belongs to the general group; trunk layers and
  // the head form the body group.
  std::vector<ParamGroup> out;
  for (std::size_t i = 0; i < encoder_.size(); ++i) {
    out.push_back(i < 2 ? ParamGroup::General : ParamGroup::Body);
  }
  for (std::size_t i = 0; i < classifier_.size(); ++i) out.push_back(ParamGroup::General);
  out.push_back(ParamGroup::General);  // inv_tau
  return out;
}

ModelBinding ModelState::bind(Tape& tape) const {
  ModelBinding b;
  for (const Tensor& t : encoder_) b.encoder.push_back(tape.param(t));
  for (const Tensor& t : classifier_) b.classifier.push_back(tape.param(t));
  b.inv_tau = tape.param(inv_tau_);
  return b;
}

ModelBinding ModelState::bind_frozen(Tape& tape) const {
  ModelBinding b;
  for (const Tensor& t : encoder_) b.encoder.push_back(tape.input(t));
  for (const Tensor& t : classifier_) b.classifier.push_back(tape.input(t));
  b.inv_tau = tape.input(inv_tau_);
  return b;
}

Tensor ModelState::assemble_inputs(const std::vector<const SampleRecord*>& samples) const {
  std::size_t in = cfg_.input_dim();
  Tensor x(samples.size(), in);
  for (std::size_t i = 0; i < samples.size(); ++i) {
    const SampleRecord& s = *samples[i];
    s.validate();
    if (s.instruction_feats.size() != cfg_.d_inst || s.candidate_feat.size() != cfg_.d_vis) {
      throw Error::config("sample " + std::to_string(s.id) + ": feature dims (" +
                          std::to_string(s.instruction_feats.size()) + ", " +
                          std::to_string(s.candidate_feat.size()) +
                          ") do not match configured (d_inst, d_vis) = (" +
                          std::to_string(cfg_.d_inst) + ", " + std::to_string(cfg_.d_vis) + ")");
    }
    for (const auto& c : s.context_feats) {
      if (c.size() != cfg_.d_vis) {
        throw Error::config("sample " + std::to_string(s.id) +
                            ": context feature dim does not match d_vis");
      }
    }
    std::size_t col = 0;
    for (double v : s.instruction_feats) x.at(i, col++) = v;
    for (double v : s.candidate_feat) x.at(i, col++) = v;
    for (double v : positional_encoding(s.candidate_box)) x.at(i, col++) = v;
    // Mean-pooled context representation and mean of context encodings: a
    // permutation-invariant stand-in for the attention pooling.
    std::size_t nctx = s.context_feats.size();
    std::vector<double> ctx_mean(cfg_.d_vis, 0.0), pos_mean(7, 0.0);
    for (std::size_t j = 0; j < nctx; ++j) {
      for (std::size_t c = 0; c < cfg_.d_vis; ++c) ctx_mean[c] += s.context_feats[j][c];
      std::vector<double> pe = positional_encoding(s.context_boxes[j]);
      for (std::size_t c = 0; c < 7; ++c) pos_mean[c] += pe[c];
    }
    for (double& v : ctx_mean) v /= static_cast<double>(nctx);
    for (double& v : pos_mean) v /= static_cast<double>(nctx);
    for (double v : ctx_mean) x.at(i, col++) = v;
    for (double v : pos_mean) x.at(i, col++) = v;
    if (col != in) throw Error::runtime("assemble_inputs: column bookkeeping error");
  }
  return x;
}

Var ModelState::forward_mlp(Tape& tape, const std::vector<Var>& params, Var x) const {
  auto act = [&](Var h) { return cfg_.activation == "relu" ? tape.relu(h) : tape.tanh(h); };
  auto linear = [&](Var h, std::size_t p) {
    return tape.add_rowvec(tape.matmul(h, params[p]), params[p + 1]);
  };
  std::size_t p = 0;
  Var h = linear(x, p);  // embedder
  p += 2;
  for (std::size_t l = 0; l < cfg_.layers; ++l) {
    h = linear(act(h), p);
    p += 2;
  }
  // Head: linear to the embedding dimension.
  return linear(act(h), p);
}

Var ModelState::encode(Tape& tape, const ModelBinding& binding, const Tensor& inputs,
                       Which which) const {
  Var x = tape.input(inputs);
  if (which == Which::Online) {
    return forward_mlp(tape, binding.encoder, x);
  }
  // Momentum parameters enter as constants, so nothing downstream of them
  // can ever produce a gradient on theta.
  std::vector<Var> frozen;
  for (const Tensor& t : momentum_) frozen.push_back(tape.input(t));
  return forward_mlp(tape, frozen, x);
}

Tensor ModelState::encode_values(const std::vector<const SampleRecord*>& samples,
                                 Which which) const {
  Tape tape;
  ModelBinding binding = bind_frozen(tape);
  return encode(tape, binding, assemble_inputs(samples), which).value();
}

Tensor ModelState::encode_values(const SampleRecord& sample, Which which) const {
  return encode_values(std::vector<const SampleRecord*>{&sample}, which);
}

Var ModelState::classifier_logits(Tape& tape, const ModelBinding& binding, Var embeddings) const {
  if (embeddings.value().cols() != cfg_.embed_dim) {
    throw Error::config("classifier: embedding dim " +
                        std::to_string(embeddings.value().cols()) + " does not match d = " +
                        std::to_string(cfg_.embed_dim));
  }
  auto act = [&](Var h) { return cfg_.activation == "relu" ? tape.relu(h) : tape.tanh(h); };
  Var h = act(tape.add_rowvec(tape.matmul(embeddings, binding.classifier[0]),
                              binding.classifier[1]));
  return tape.add_rowvec(tape.matmul(h, binding.classifier[2]), binding.classifier[3]);
}

double ModelState::classify(const std::vector<double>& embedding) const {
  Tape tape;
  ModelBinding binding = bind_frozen(tape);
  Var e = tape.input(Tensor::row(embedding));
  Var probs = tape.softmax_rows(classifier_logits(tape, binding, e));
  return probs.value().at(0, 1);
}

void ModelState::momentum_update() {
  if (momentum_.size() != encoder_.size()) {
    throw Error::runtime("momentum_update: theta and theta' layouts differ");
  }
  double g = cfg_.gamma;
  for (std::size_t i = 0; i < encoder_.size(); ++i) {
    if (!momentum_[i].same_shape(encoder_[i])) {
      throw Error::runtime("momentum_update: shape mismatch between theta and theta' at tensor " +
                           std::to_string(i));
    }
    for (std::size_t j = 0; j < encoder_[i].numel(); ++j) {
      momentum_[i][j] = g * momentum_[i][j] + (1.0 - g) * encoder_[i][j];
    }
  }
}

void ModelState::clamp_temperature() {
  inv_tau_[0] = std::min(kInvTauCeiling, std::max(kInvTauFloor, inv_tau_[0]));
}

namespace {

constexpr char kCheckpointMagic[8] = {'P', 'C', 'T', 'L', 'C', 'K', 'P', 'T'};
constexpr std::uint32_t kCheckpointVersion = 1;

void write_u32(std::ostream& out, std::uint32_t v) {
  unsigned char b[4];
  for (int i = 0; i < 4; ++i) b[i] = static_cast<unsigned char>((v >> (8 * i)) & 0xff);
  out.write(reinterpret_cast<const char*>(b), 4);
}

std::uint32_t read_u32(std::istream& in) {
  unsigned char b[4];
  in.read(reinterpret_cast<char*>(b), 4);
  std::uint32_t v = 0;
  for (int i = 0; i < 4; ++i) v |= static_cast<std::uint32_t>(b[i]) << (8 * i);
  return v;
}

void write_f64(std::ostream& out, double v) {
  std::uint64_t bits;
  std::memcpy(&bits, &v, 8);
  unsigned char b[8];
  for (int i = 0; i < 8; ++i) b[i] = static_cast<unsigned char>((bits >> (8 * i)) & 0xff);
  out.write(reinterpret_cast<const char*>(b), 8);
}

double read_f64(std::istream& in) {
  unsigned char b[8];
  in.read(reinterpret_cast<char*>(b), 8);
  std::uint64_t bits = 0;
  for (int i = 0; i < 8; ++i) bits |= static_cast<std::uint64_t>(b[i]) << (8 * i);
  double v;
  std::memcpy(&v, &bits, 8);
  return v;
}

void write_block(std::ostream& out, const Tensor& t) {
  for (std::size_t i = 0; i < t.numel(); ++i) write_f64(out, t[i]);
}

void read_block(std::istream& in, Tensor& t) {
  for (std::size_t i = 0; i < t.numel(); ++i) t[i] = read_f64(in);
}

}  // namespace

void ModelState::save(const std::string& path) const {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw Error::config("cannot write checkpoint '" + path + "'");
  out.write(kCheckpointMagic, 8);
  write_u32(out, kCheckpointVersion);
  write_u32(out, static_cast<std::uint32_t>(cfg_.d_inst));
  write_u32(out, static_cast<std::uint32_t>(cfg_.d_vis));
  write_u32(out, static_cast<std::uint32_t>(cfg_.n_det));
  write_u32(out, static_cast<std::uint32_t>(cfg_.hidden));
  write_u32(out, static_cast<std::uint32_t>(cfg_.layers));
  write_u32(out, static_cast<std::uint32_t>(cfg_.embed_dim));
  write_u32(out, static_cast<std::uint32_t>(cfg_.classifier_hidden));
  write_u32(out, cfg_.activation == "relu" ? 1u : 0u);
  write_f64(out, cfg_.gamma);
  write_f64(out, inv_tau_.item());
  for (const Tensor& t : encoder_) write_block(out, t);
  for (const Tensor& t : momentum_) write_block(out, t);
  for (const Tensor& t : classifier_) write_block(out, t);
  if (!out) throw Error::runtime("checkpoint write failed for '" + path + "'");
}

ModelState ModelState::load(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw Error::config("cannot open checkpoint '" + path + "'");
  char magic[8];
  in.read(magic, 8);
  if (!in || std::memcmp(magic, kCheckpointMagic, 8) != 0) {
    throw Error::config("'" + path + "' is not a checkpoint file");
  }
  std::uint32_t version = read_u32(in);
  if (version != kCheckpointVersion) {
    throw Error::config("checkpoint '" + path + "' has unsupported version " +
                        std::to_string(version));
  }
  EncoderConfig cfg;
  cfg.d_inst = read_u32(in);
  cfg.d_vis = read_u32(in);
  cfg.n_det = read_u32(in);
  cfg.hidden = read_u32(in);
  cfg.layers = read_u32(in);
  cfg.embed_dim = read_u32(in);
  cfg.classifier_hidden = read_u32(in);
  cfg.activation = read_u32(in) == 1u ? "relu" : "tanh";
  cfg.gamma = read_f64(in);
  double inv_tau = read_f64(in);

  ModelState m = ModelState::init(cfg, 0);
  m.inv_tau_ = Tensor::scalar(inv_tau);
  for (Tensor& t : m.encoder_) read_block(in, t);
  for (Tensor& t : m.momentum_) read_block(in, t);
  for (Tensor& t : m.classifier_) read_block(in, t);
  if (!in) throw Error::config("checkpoint '" + path + "' is truncated");
  return m;
}

bool ModelState::operator==(const ModelState& other) const {
  return encoder_ == other.encoder_ && momentum_ == other.momentum_ &&
         classifier_ == other.classifier_ && inv_tau_ == other.inv_tau_;
}

}  // namespace pctl
