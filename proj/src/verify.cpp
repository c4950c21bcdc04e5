#include "verify.hpp"

#include <cmath>
#include <sstream>

#include "cluster.hpp"
#include "loss.hpp"
#include "optim.hpp"
#include "trainer.hpp"

namespace pctl {

namespace {

Tensor random_tensor(std::size_t rows, std::size_t cols, Rng& rng, double lo = -2.0,
                     double hi = 2.0) {
  Tensor t(rows, cols);
  for (std::size_t i = 0; i < t.numel(); ++i) t[i] = rng.next_uniform(lo, hi);
  return t;
}

// A self-contained toy two-domain instance for loss-level gradient checks.
struct ToyInstance {
  std::size_t n, d;
  Tensor u0, v0;          // base online embeddings; the gradcheck point
  Tensor u_mom, v_mom;    // momentum embeddings (constants)
  PrototypeBank bank;
  std::vector<NegativeSet> src_negs, tgt_negs;
  std::vector<int> src_labels, tgt_labels;
  std::vector<std::size_t> positions;
  LossConfig cfg;
};

// Embeddings around k separated directions (cluster = index mod k) so the
// toy bank has no degenerate cluster and the losses stay well conditioned.
Tensor clustered_tensor(std::size_t rows, std::size_t cols, std::size_t k, Rng& rng,
                        const Tensor& centers) {
  Tensor t(rows, cols);
  for (std::size_t i = 0; i < rows; ++i) {
    for (std::size_t j = 0; j < cols; ++j) {
      t.at(i, j) = centers.at(i % k, j) + 0.35 * rng.next_normal();
    }
  }
  return t;
}

ToyInstance make_toy(std::uint64_t seed, std::size_t n, std::size_t d, std::size_t k,
                     std::size_t r, std::size_t r_prime) {
  Rng rng(seed);
  ToyInstance toy;
  toy.n = n;
  toy.d = d;
  Tensor centers(k, d);
  for (std::size_t i = 0; i < centers.numel(); ++i) centers[i] = 2.0 * rng.next_normal();
  toy.u0 = clustered_tensor(n, d, k, rng, centers);
  toy.v0 = clustered_tensor(n, d, k, rng, centers);
  toy.u_mom = clustered_tensor(n, d, k, rng, centers);
  toy.v_mom = clustered_tensor(n, d, k, rng, centers);
  toy.bank = build_prototype_bank(toy.u_mom, toy.v_mom, {k}, rng.next_u64(), 1, 10.0, 0.2);
  toy.cfg.lambda = 1.0 / 32.0;
  toy.cfg.r = r;
  toy.cfg.r_prime = r_prime;
  for (std::size_t i = 0; i < n; ++i) {
    toy.positions.push_back(i);
    toy.src_labels.push_back(static_cast<int>(rng.next_below(2)));
    toy.tgt_labels.push_back(static_cast<int>(rng.next_below(2)));
    auto draw = [&](const DomainPrototypes& own, const DomainPrototypes& cross) {
      std::vector<int> s_own = {own.nearest_own[0][i]};
      std::vector<int> s_cross = {cross.nearest_cross[0][i]};
      return sample_negatives(n, i, s_own, s_cross, {k}, r, r_prime, rng);
    };
    toy.src_negs.push_back(draw(toy.bank.source, toy.bank.target));
    toy.tgt_negs.push_back(draw(toy.bank.target, toy.bank.source));
  }
  return toy;
}

// The gradcheck point packs u over v as a (2n x d) matrix.
BatchLossInputs toy_inputs(const ToyInstance& toy, Tape& tape, Var point, Var inv_tau) {
  std::vector<std::size_t> top, bottom;
  for (std::size_t i = 0; i < toy.n; ++i) top.push_back(i);
  for (std::size_t i = 0; i < toy.n; ++i) bottom.push_back(toy.n + i);
  BatchLossInputs in;
  in.bank = &toy.bank;
  in.cfg = toy.cfg;
  in.inv_tau = inv_tau;
  in.source.online = tape.slice_rows(point, top);
  in.source.momentum = toy.u_mom;
  in.source.positions = toy.positions;
  in.source.labels = toy.src_labels;
  in.source.negatives = toy.src_negs;
  in.target.online = tape.slice_rows(point, bottom);
  in.target.momentum = toy.v_mom;
  in.target.positions = toy.positions;
  in.target.labels = toy.tgt_labels;
  in.target.negatives = toy.tgt_negs;
  return in;
}

Tensor stack_uv(const ToyInstance& toy) {
  Tensor point(2 * toy.n, toy.d);
  for (std::size_t i = 0; i < toy.n; ++i) {
    for (std::size_t c = 0; c < toy.d; ++c) {
      point.at(i, c) = toy.u0.at(i, c);
      point.at(toy.n + i, c) = toy.v0.at(i, c);
    }
  }
  return point;
}

void add_check(VerifyReport& report, const std::string& name, double measured, double tolerance,
               const std::string& detail = "") {
  VerifyCheck c;
  c.name = name;
  c.measured = measured;
  c.tolerance = tolerance;
  c.passed = std::isfinite(measured) && measured <= tolerance;
  c.detail = detail;
  report.checks.push_back(c);
}

void check_primitive_gradients(VerifyReport& report) {
  Rng rng(41);
  double worst = 0.0;
  std::string worst_name = "none";
  auto probe = [&](const char* name, std::size_t rows, std::size_t cols, auto&& builder) {
    Tensor point = random_tensor(rows, cols, rng);
    double err = gradcheck(builder, point, 1e-5);
    if (err > worst) {
      worst = err;
      worst_name = name;
    }
  };

  probe("add/scale", 3, 4, [](Tape& t, Var x) {
    return t.sum(t.add(t.scale(x, 1.7), x));
  });
  Tensor sub_c = random_tensor(3, 4, rng);
  probe("sub/mul", 3, 4, [&](Tape& t, Var x) {
    return t.sum(t.mul(t.sub(x, t.input(sub_c)), x));
  });
  Tensor mm_c = random_tensor(4, 2, rng);
  probe("matmul/transpose", 3, 4, [&](Tape& t, Var x) {
    return t.sum(t.matmul(t.transpose(t.matmul(x, t.input(mm_c))), x));
  });
  probe("exp/log", 2, 3, [](Tape& t, Var x) {
    return t.sum(t.log(t.add(t.exp(x), t.exp(x))));
  });
  probe("tanh", 3, 3, [](Tape& t, Var x) { return t.sum(t.tanh(x)); });
  probe("relu", 3, 3, [](Tape& t, Var x) { return t.sum(t.relu(t.add(x, t.scale(x, 0.1)))); });
  Tensor l2_c = random_tensor(3, 4, rng);
  probe("l2_normalize_rows", 3, 4, [&](Tape& t, Var x) {
    return t.sum(t.mul(t.l2_normalize_rows(x), t.input(l2_c)));
  });
  probe("log_sum_exp_rows", 3, 5, [](Tape& t, Var x) {
    return t.sum(t.log_sum_exp_rows(x));
  });
  Tensor soft_c = random_tensor(3, 5, rng);
  probe("softmax_rows", 3, 5, [&](Tape& t, Var x) {
    return t.sum(t.mul(t.softmax_rows(x), t.input(soft_c)));
  });
  probe("dot", 1, 6, [](Tape& t, Var x) { return t.dot(x, x); });
  probe("concat/slice/reshape", 2, 4, [](Tape& t, Var x) {
    Var c = t.concat_cols({x, x});
    Var s = t.slice_rows(t.concat_rows({x, x}), {1, 2});
    return t.add(t.sum(t.reshape(c, 4, 4)), t.sum(s));
  });
  probe("mean/mean_rows", 3, 4, [](Tape& t, Var x) {
    return t.add(t.mean(x), t.sum(t.mean_rows(x)));
  });
  probe("nll_logits", 3, 4, [](Tape& t, Var x) {
    return t.sum(t.nll_logits(x, {0, 3, 2}));
  });
  Tensor row_c = random_tensor(1, 4, rng);
  probe("mul_scalar/add_rowvec", 3, 4, [&](Tape& t, Var x) {
    Var s = t.input(Tensor::scalar(0.7));
    return t.sum(t.mul_scalar(t.add_rowvec(x, t.input(row_c)), s));
  });

  add_check(report, "primitive gradients vs central differences", worst, 1e-6,
            "worst primitive: " + worst_name);
}

void check_gradcheck_quadratic(VerifyReport& report) {
  Rng rng(43);
  Tensor point = random_tensor(2, 3, rng);
  double err = gradcheck([](Tape& t, Var x) { return t.dot(x, x); }, point, 1e-5);
  add_check(report, "gradcheck on a quadratic", err, 1e-9);
}

void check_info_nce_gradient(VerifyReport& report) {
  std::size_t d = 8, r = 4;
  Rng rng(47);
  Tensor positive = l2_normalize_rows_plain(random_tensor(1, d, rng));
  Tensor negatives = l2_normalize_rows_plain(random_tensor(r, d, rng));
  // Point: raw anchor coordinates plus the inverse temperature.
  Tensor point(d + 1, 1);
  for (std::size_t i = 0; i < d; ++i) point[i] = rng.next_uniform(-2.0, 2.0);
  point[d] = 0.5;
  std::vector<std::size_t> head(d);
  for (std::size_t i = 0; i < d; ++i) head[i] = i;
  auto builder = [&](Tape& t, Var x) {
    Var anchor = t.l2_normalize_rows(t.transpose(t.slice_rows(x, head)));
    Var inv_tau = t.slice_rows(x, {d});
    return info_nce(t, anchor, positive, negatives, inv_tau);
  };
  double err = gradcheck(builder, point, 1e-5);
  add_check(report, "info_nce gradient (d=8, r=4)", err, 1e-4);
}

void check_dual_proto_nce_gradient(VerifyReport& report) {
  ToyInstance toy = make_toy(53, 4, 4, 2, 1, 1);
  auto builder = [&](Tape& t, Var x) {
    Var inv_tau = t.input(Tensor::scalar(0.5));
    BatchLossInputs in = toy_inputs(toy, t, x, inv_tau);
    return dual_proto_nce(t, in).loss;
  };
  double err = gradcheck(builder, stack_uv(toy), 1e-5);
  add_check(report, "dual_proto_nce gradient (6-sample toy)", err, 1e-4);
}

void check_limit_cases(VerifyReport& report) {
  double worst = 0.0;
  // Uniform similarities: anchor orthogonal to positive and negatives.
  for (std::size_t r : {std::size_t{1}, std::size_t{2}, std::size_t{32}}) {
    std::size_t d = r + 2;
    Tensor anchor(1, d), positive(1, d);
    anchor.at(0, 0) = 1.0;
    positive.at(0, 1) = 1.0;
    Tensor negatives(r, d);
    for (std::size_t i = 0; i < r; ++i) negatives.at(i, (i + 2) % d) = 1.0;
    Tape tape;
    Var loss = info_nce(tape, tape.input(anchor), positive, negatives,
                        tape.input(Tensor::scalar(0.07)));
    worst = std::max(worst, std::abs(loss.item() - std::log(static_cast<double>(r) + 1.0)));
  }
  add_check(report, "uniform info_nce equals ln(r+1) for r in {1,2,32}", worst, 1e-9);

  // Uniform prototype term: ln(r' + 1) when all similarities and phi match.
  std::size_t r_prime = 32, k = 33, d = k + 1;
  ClusteringRound round;
  round.m = 1;
  round.k = k;
  round.centroids = Tensor(k, d);
  for (std::size_t j = 0; j < k; ++j) round.centroids.at(j, j + 1) = 1.0;
  round.centroids_normalized = round.centroids;
  round.phi.assign(k, 0.2);
  Tensor anchor(1, d);
  anchor.at(0, 0) = 1.0;
  std::vector<int> negs;
  for (std::size_t j = 1; j < k; ++j) negs.push_back(static_cast<int>(j));
  Tape tape;
  Var loss = proto_term(tape, tape.input(anchor), round, 0, negs);
  add_check(report, "uniform proto_term equals ln(r'+1)",
            std::abs(loss.item() - std::log(static_cast<double>(r_prime) + 1.0)), 1e-9);
}

void check_concentration(VerifyReport& report) {
  // Mirror-image two-cluster geometry: both factors land exactly on tau'.
  Tensor points(4, 2);
  points.at(0, 0) = -1.0; points.at(0, 1) = 0.0;
  points.at(1, 0) = -1.0; points.at(1, 1) = 2.0;
  points.at(2, 0) = 1.0;  points.at(2, 1) = 0.0;
  points.at(3, 0) = 1.0;  points.at(3, 1) = 2.0;
  KmeansResult km;
  km.centroids = Tensor(2, 2);
  km.centroids.at(0, 0) = -1.0; km.centroids.at(0, 1) = 1.0;
  km.centroids.at(1, 0) = 1.0;  km.centroids.at(1, 1) = 1.0;
  km.assignments = {0, 0, 1, 1};
  std::vector<double> phi = concentration(km, points, 10.0, 0.2);
  double err = std::max(std::abs(phi[0] - 0.2), std::abs(phi[1] - 0.2));
  add_check(report, "symmetric two-cluster concentration equals tau' = 0.2", err, 1e-9);

  // Direct evaluation: cluster {0, 2} with centroid 1 has raw factor
  // (1 + 1) / (2 ln 12) = 1/ln 12; its partner {10, 10.4} has one fifth of
  // that, and the mean-tau' rescale preserves the ratio.
  Tensor pts(4, 1);
  pts.at(0, 0) = 0.0;
  pts.at(1, 0) = 2.0;
  pts.at(2, 0) = 10.0;
  pts.at(3, 0) = 10.4;
  KmeansResult km2;
  km2.centroids = Tensor(2, 1);
  km2.centroids.at(0, 0) = 1.0;
  km2.centroids.at(1, 0) = 10.2;
  km2.assignments = {0, 0, 1, 1};
  std::vector<double> phi2 = concentration(km2, pts, 10.0, 0.2);
  double raw0 = 1.0 / std::log(12.0), raw1 = 0.2 / std::log(12.0);
  double mean = (raw0 + raw1) / 2.0;
  double expected0 = raw0 * (0.2 / mean);
  add_check(report, "concentration direct evaluation (raw 1/ln 12, ratio preserved)",
            std::abs(phi2[0] - expected0), 1e-12);
}

void check_kmeans(VerifyReport& report) {
  Tensor pts(4, 1);
  pts.at(0, 0) = 0.0;
  pts.at(1, 0) = 1.0;
  pts.at(2, 0) = 9.0;
  pts.at(3, 0) = 10.0;
  KmeansResult km = kmeans(pts, 2, 99);
  double err = std::abs(km.objective - 1.0);
  // Centroids must be {0.5, 9.5} in some order.
  double c0 = km.centroids.at(0, 0), c1 = km.centroids.at(1, 0);
  double centro_err = std::min(std::abs(c0 - 0.5) + std::abs(c1 - 9.5),
                               std::abs(c0 - 9.5) + std::abs(c1 - 0.5));
  add_check(report, "kmeans partition oracle on {0,1,9,10}", err + centro_err, 1e-12);

  // Monotonicity is asserted inside kmeans on every iteration; exercise it.
  Rng rng(61);
  bool threw = false;
  for (int i = 0; i < 20 && !threw; ++i) {
    Tensor cloud = random_tensor(40, 3, rng);
    try {
      kmeans(cloud, 5, rng.next_u64());
    } catch (const Error&) {
      threw = true;
    }
  }
  add_check(report, "kmeans objective monotone on 20 random instances", threw ? 1.0 : 0.0, 0.0);
}

void check_ema(VerifyReport& report) {
  EncoderConfig cfg;
  cfg.d_inst = 3;
  cfg.d_vis = 3;
  cfg.n_det = 2;
  cfg.hidden = 4;
  cfg.layers = 1;
  cfg.embed_dim = 3;
  cfg.classifier_hidden = 3;
  cfg.gamma = 0.9;
  ModelState model = ModelState::init(cfg, 5);
  // Offset theta' so the decay is visible, then hold theta fixed.
  std::vector<Tensor> initial_diff;
  for (std::size_t i = 0; i < model.momentum_params().size(); ++i) {
    for (std::size_t j = 0; j < model.momentum_params()[i].numel(); ++j) {
      model.momentum_params()[i][j] = model.encoder_params()[i][j] + 1.0;
    }
  }
  double worst = 0.0;
  for (int t = 1; t <= 20; ++t) {
    model.momentum_update();
    double expected = std::pow(0.9, t);
    for (std::size_t i = 0; i < model.momentum_params().size(); ++i) {
      double norm = 0.0;
      std::size_t numel = model.momentum_params()[i].numel();
      for (std::size_t j = 0; j < numel; ++j) {
        double diff = model.momentum_params()[i][j] - model.encoder_params()[i][j];
        norm += diff * diff;
      }
      double expected_norm = expected * std::sqrt(static_cast<double>(numel));
      worst = std::max(worst, std::abs(std::sqrt(norm) - expected_norm));
    }
  }
  add_check(report, "EMA decay |theta'_t - theta| = gamma^t |theta'_0 - theta|", worst, 1e-9);
}

void check_temperature(VerifyReport& report) {
  EncoderConfig cfg;
  cfg.d_inst = 3;
  cfg.d_vis = 3;
  cfg.n_det = 2;
  cfg.hidden = 4;
  cfg.layers = 0;
  cfg.embed_dim = 3;
  cfg.classifier_hidden = 3;
  ModelState model = ModelState::init(cfg, 5);
  double err = std::abs(model.inv_tau() - 0.07);
  model.set_inv_tau(1e6);
  model.clamp_temperature();
  err = std::max(err, std::abs(model.inv_tau() - 100.0));
  add_check(report, "temperature init 0.07 and clamp at 100", err, 0.0);
}

void check_row_invariants(VerifyReport& report) {
  Rng rng(71);
  Tape tape;
  Var x = tape.input(random_tensor(5, 7, rng, -3.0, 3.0));
  Var soft = tape.softmax_rows(x);
  Var norm = tape.l2_normalize_rows(x);
  double worst = 0.0;
  for (std::size_t r = 0; r < 5; ++r) {
    double s = 0.0, n2 = 0.0;
    for (std::size_t c = 0; c < 7; ++c) {
      s += soft.value().at(r, c);
      n2 += norm.value().at(r, c) * norm.value().at(r, c);
    }
    worst = std::max({worst, std::abs(s - 1.0), std::abs(std::sqrt(n2) - 1.0)});
  }
  Tape tape2;
  Var big = tape2.softmax_rows(tape2.input(Tensor::row({1000.0, 1000.0})));
  worst = std::max(worst, std::abs(big.value().at(0, 0) - 0.5));
  Var lse = tape2.log_sum_exp_rows(tape2.input(Tensor::row({0.0, 0.0})));
  worst = std::max(worst, std::abs(lse.item() - std::log(2.0)));
  add_check(report, "softmax/l2norm row invariants and stabilization", worst, 1e-12);
}

void check_sgd(VerifyReport& report) {
  Tensor p = Tensor::scalar(0.0);
  Tensor g = Tensor::scalar(1.0);
  SgdMomentum opt(0.9, {SgdMomentum::Group{0.1, {0}}});
  opt.step({&p}, {&g});
  opt.step({&p}, {&g});
  add_check(report, "sgd momentum hand-unrolled two-step recurrence",
            std::abs(p.item() - (-0.29)), 1e-12);
}

void check_momentum_isolation(VerifyReport& report) {
  EncoderConfig cfg;
  cfg.d_inst = 3;
  cfg.d_vis = 3;
  cfg.n_det = 2;
  cfg.hidden = 4;
  cfg.layers = 1;
  cfg.embed_dim = 3;
  cfg.classifier_hidden = 3;
  ModelState model = ModelState::init(cfg, 9);
  SampleRecord s;
  s.id = 0;
  s.label = 1;
  s.instruction_feats = {0.1, -0.2, 0.3};
  s.candidate_feat = {0.4, 0.5, -0.6};
  s.candidate_box = {0.1, 0.1, 0.5, 0.5};
  s.context_feats = {{0.2, 0.1, 0.0}, {-0.1, 0.3, 0.2}};
  s.context_boxes = {{0.0, 0.0, 1.0, 1.0}, {0.2, 0.2, 0.4, 0.9}};

  Tape tape;
  ModelBinding binding = model.bind(tape);
  Var mom = model.encode(tape, binding, model.assemble_inputs({&s}), Which::Momentum);
  Var loss = tape.sum(mom);
  tape.backward(loss);
  double worst = 0.0;
  for (const Var& v : binding.encoder) {
    for (std::size_t i = 0; i < v.grad().numel(); ++i) {
      worst = std::max(worst, std::abs(v.grad()[i]));
    }
  }
  add_check(report, "momentum encoding contributes no theta gradients", worst, 0.0);
}

}  // namespace

bool VerifyReport::all_passed() const {
  for (const VerifyCheck& c : checks) {
    if (!c.passed) return false;
  }
  return true;
}

std::string VerifyReport::to_text() const {
  std::ostringstream out;
  for (const VerifyCheck& c : checks) {
    out << (c.passed ? "PASS" : "FAIL") << "  " << c.name << "  measured "
        << format_double(c.measured) << " vs tolerance " << format_double(c.tolerance);
    if (!c.detail.empty()) out << "  (" << c.detail << ")";
    out << "\n";
  }
  out << (all_passed() ? "all checks passed" : "verification FAILED") << "\n";
  return out.str();
}

VerifyReport run_verification(bool inject_info_nce_sign_flip) {
  set_info_nce_gradient_sign_flip(inject_info_nce_sign_flip);
  VerifyReport report;
  try {
    check_primitive_gradients(report);
    check_gradcheck_quadratic(report);
    check_info_nce_gradient(report);
    check_dual_proto_nce_gradient(report);
    check_limit_cases(report);
    check_concentration(report);
    check_kmeans(report);
    check_ema(report);
    check_temperature(report);
    check_row_invariants(report);
    check_sgd(report);
    check_momentum_isolation(report);
  } catch (...) {
    set_info_nce_gradient_sign_flip(false);
    throw;
  }
  set_info_nce_gradient_sign_flip(false);
  return report;
}

}  // namespace pctl
