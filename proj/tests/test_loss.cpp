#include <doctest.h>

#include <cmath>

#include "loss.hpp"
#include "oracle.hpp"
#include "toy_fixture.hpp"

using namespace pctl;

namespace {

Tensor unit_axis(std::size_t d, std::size_t axis) {
  Tensor t(1, d);
  t.at(0, axis) = 1.0;
  return t;
}

}  // namespace

TEST_SUITE_BEGIN("loss");

TEST_CASE("info_nce analytic values") {
  SUBCASE("uniform similarities give ln(r+1)") {
    for (std::size_t r : {std::size_t{1}, std::size_t{2}, std::size_t{32}}) {
      std::size_t d = r + 2;
      Tensor negatives(r, d);
      for (std::size_t i = 0; i < r; ++i) negatives.at(i, i + 2) = 1.0;
      Tape tape;
      Var loss = info_nce(tape, tape.input(unit_axis(d, 0)), unit_axis(d, 1), negatives,
                          tape.input(Tensor::scalar(0.07)));
      CHECK(std::abs(loss.item() - std::log(static_cast<double>(r) + 1.0)) < 1e-9);
    }
  }

  SUBCASE("a single negative identical to the positive gives ln 2") {
    std::size_t d = 4;
    Tensor negatives = unit_axis(d, 1);
    Tape tape;
    Var loss = info_nce(tape, tape.input(unit_axis(d, 0)), unit_axis(d, 1), negatives,
                        tape.input(Tensor::scalar(0.07)));
    CHECK(loss.item() == doctest::Approx(std::log(2.0)).epsilon(1e-12));
  }

  SUBCASE("anchor equals positive, 4 orthogonal negatives, 1/tau = 0.07") {
    std::size_t d = 6;
    Tensor negatives(4, d);
    for (std::size_t i = 0; i < 4; ++i) negatives.at(i, i + 1) = 1.0;
    Tape tape;
    Var loss = info_nce(tape, tape.input(unit_axis(d, 0)), unit_axis(d, 0), negatives,
                        tape.input(Tensor::scalar(0.07)));
    double expected = -std::log(std::exp(0.07) / (std::exp(0.07) + 4.0));
    CHECK(loss.item() == doctest::Approx(expected).epsilon(1e-12));
    // Cross-check against the independent oracle.
    oracle::Mat negs(4, oracle::Vec(d, 0.0));
    for (std::size_t i = 0; i < 4; ++i) negs[i][i + 1] = 1.0;
    oracle::Vec e0(d, 0.0);
    e0[0] = 1.0;
    CHECK(loss.item() == doctest::Approx(oracle::info_nce(e0, e0, negs, 0.07)).epsilon(1e-14));
  }

  SUBCASE("no negatives collapses to exactly zero") {
    std::size_t d = 3;
    Tape tape;
    Var loss = info_nce(tape, tape.input(unit_axis(d, 0)), unit_axis(d, 0), Tensor(0, d),
                        tape.input(Tensor::scalar(0.07)));
    CHECK(loss.item() == 0.0);
  }

  SUBCASE("non-unit rows are a validation error") {
    Tape tape;
    Tensor anchor(1, 3);
    anchor.at(0, 0) = 2.0;
    CHECK_THROWS_WITH_AS(info_nce(tape, tape.input(anchor), unit_axis(3, 0), Tensor(0, 3),
                                  tape.input(Tensor::scalar(0.07))),
                         doctest::Contains("unit norm"), Error);
  }

  SUBCASE("inverse temperature outside (0, 100] is rejected") {
    Tape tape;
    CHECK_THROWS_AS(info_nce(tape, tape.input(unit_axis(3, 0)), unit_axis(3, 1), Tensor(0, 3),
                             tape.input(Tensor::scalar(0.0))),
                    Error);
    CHECK_THROWS_AS(info_nce(tape, tape.input(unit_axis(3, 0)), unit_axis(3, 1), Tensor(0, 3),
                             tape.input(Tensor::scalar(101.0))),
                    Error);
  }
}

TEST_CASE("info_nce decreases strictly as the positive similarity rises") {
  std::size_t d = 3;
  Tensor negatives(1, d);
  negatives.at(0, 2) = 1.0;
  double prev = std::numeric_limits<double>::infinity();
  for (double t : {0.0, 0.3, 0.6, 0.9, 1.2}) {
    // Positive rotates toward the anchor as t grows.
    Tensor positive(1, d);
    positive.at(0, 0) = std::sin(t);
    positive.at(0, 1) = std::cos(t);
    Tape tape;
    Var loss = info_nce(tape, tape.input(unit_axis(d, 0)), positive, negatives,
                        tape.input(Tensor::scalar(2.0)));
    CHECK(loss.item() < prev);
    prev = loss.item();
  }
}

TEST_CASE("proto_term analytic values") {
  SUBCASE("uniform similarities and factors give ln(r'+1)") {
    std::size_t r_prime = 32, k = r_prime + 1, d = k + 1;
    ClusteringRound round;
    round.m = 1;
    round.k = k;
    round.centroids = Tensor(k, d);
    for (std::size_t j = 0; j < k; ++j) round.centroids.at(j, j + 1) = 1.0;
    round.centroids_normalized = round.centroids;
    round.phi.assign(k, 0.37);
    std::vector<int> negs;
    for (std::size_t j = 1; j < k; ++j) negs.push_back(static_cast<int>(j));
    Tape tape;
    Var loss = proto_term(tape, tape.input(unit_axis(d, 0)), round, 0, negs);
    CHECK(std::abs(loss.item() - std::log(static_cast<double>(r_prime) + 1.0)) < 1e-9);
  }

  SUBCASE("two prototypes, similarities (1, 0), phi (0.2, 0.4)") {
    std::size_t d = 3;
    ClusteringRound round;
    round.m = 1;
    round.k = 2;
    round.centroids = Tensor(2, d);
    round.centroids.at(0, 0) = 1.0;
    round.centroids.at(1, 1) = 1.0;
    round.centroids_normalized = round.centroids;
    round.phi = {0.2, 0.4};
    Tape tape;
    Var loss = proto_term(tape, tape.input(unit_axis(d, 0)), round, 0, {1});
    double expected = -std::log(std::exp(5.0) / (std::exp(5.0) + std::exp(0.0)));
    CHECK(loss.item() == doctest::Approx(expected).epsilon(1e-12));
  }

  SUBCASE("more candidates than prototypes is a configuration error") {
    ClusteringRound round;
    round.k = 2;
    round.centroids = Tensor(2, 3);
    round.centroids_normalized = round.centroids;
    round.phi = {0.2, 0.2};
    Tape tape;
    CHECK_THROWS_AS(proto_term(tape, tape.input(unit_axis(3, 0)), round, 0, {1, 1}), Error);
  }
}

TEST_CASE("sample_negatives contract") {
  std::vector<int> s_own = {3}, s_cross = {5};
  std::vector<std::size_t> schedule = {64};

  SUBCASE("batch 64, r = 32: exactly 32 distinct peers, self excluded") {
    Rng rng(7);
    NegativeSet negs = sample_negatives(64, 10, s_own, s_cross, schedule, 32, 32, rng);
    CHECK(negs.instance_rows.size() == 32);
    CHECK_FALSE(negs.instance_short);
    std::vector<std::size_t> sorted = negs.instance_rows;
    std::sort(sorted.begin(), sorted.end());
    CHECK(std::adjacent_find(sorted.begin(), sorted.end()) == sorted.end());
    for (std::size_t row : negs.instance_rows) {
      CHECK(row != 10);
      CHECK(row < 64);
    }
    CHECK(negs.proto_own[0].size() == 32);
    for (int j : negs.proto_own[0]) CHECK(j != 3);
    CHECK(negs.proto_cross[0].size() == 32);
    for (int j : negs.proto_cross[0]) CHECK(j != 5);
  }

  SUBCASE("k = 33 with r' = 32 forces the full non-positive set") {
    Rng rng(7);
    NegativeSet negs = sample_negatives(8, 0, {3}, {5}, {33}, 4, 32, rng);
    std::vector<int> own = negs.proto_own[0];
    std::sort(own.begin(), own.end());
    std::vector<int> expected;
    for (int j = 0; j < 33; ++j) {
      if (j != 3) expected.push_back(j);
    }
    CHECK(own == expected);
  }

  SUBCASE("k = 32 with r' = 32 is rejected with the minimum-k message") {
    Rng rng(7);
    CHECK_THROWS_WITH_AS(sample_negatives(8, 0, {3}, {5}, {32}, 4, 32, rng),
                         doctest::Contains("minimum k is 33"), Error);
  }

  SUBCASE("same seed tuple, same draw") {
    Rng a(12345), b(12345);
    NegativeSet na = sample_negatives(64, 2, s_own, s_cross, schedule, 32, 32, a);
    NegativeSet nb = sample_negatives(64, 2, s_own, s_cross, schedule, 32, 32, b);
    CHECK(na.instance_rows == nb.instance_rows);
    CHECK(na.proto_own == nb.proto_own);
    CHECK(na.proto_cross == nb.proto_cross);
  }

  SUBCASE("batch of one degenerates to an empty, flagged instance set") {
    Rng rng(7);
    NegativeSet negs = sample_negatives(1, 0, s_own, s_cross, schedule, 32, 32, rng);
    CHECK(negs.instance_rows.empty());
    CHECK(negs.instance_short);
  }
}

TEST_CASE("intra/inter/dual/total match the independent oracle within 1e-12") {
  // 4-sample toy first (d = 4, k = 2, r = r' = 1), then the richer 6-sample
  // two-domain instance.
  for (auto [seed, n, d, k] : {std::tuple<std::uint64_t, std::size_t, std::size_t, std::size_t>{
                                   101, 4, 4, 2},
                               {202, 6, 4, 2}}) {
    toy::Fixture f = toy::make(seed, n, d, k, 1, 1);
    double inv_tau_value = 0.7;

    EncoderConfig ecfg;
    ecfg.d_inst = 2;
    ecfg.d_vis = 2;
    ecfg.n_det = 1;
    ecfg.hidden = 3;
    ecfg.layers = 0;
    ecfg.embed_dim = d;
    ecfg.classifier_hidden = 3;
    ModelState model = ModelState::init(ecfg, seed + 1);

    Tape tape;
    ModelBinding binding = model.bind(tape);
    Var u = tape.input(f.u0);
    Var v = tape.input(f.v0);
    BatchLossInputs in = toy::inputs(f, u, v, tape.input(Tensor::scalar(inv_tau_value)));

    TotalResult res = total_loss(tape, in, model, binding);

    oracle::DomainData src = toy::domain_data(f, true);
    oracle::DomainData tgt = toy::domain_data(f, false);
    oracle::ProtoData src_protos = toy::proto_data(f.bank.source);
    oracle::ProtoData tgt_protos = toy::proto_data(f.bank.target);
    oracle::Classifier clf;
    clf.w1 = toy::to_mat(model.classifier_params()[0]);
    clf.b1 = model.classifier_params()[1].values();
    clf.w2 = toy::to_mat(model.classifier_params()[2]);
    clf.b2 = model.classifier_params()[3].values();

    oracle::Breakdown expected = oracle::total_loss(src, tgt, src_protos, tgt_protos, clf,
                                                    inv_tau_value, f.cfg.lambda);

    CHECK(res.breakdown.l_target == doctest::Approx(expected.l_target).epsilon(1e-12));
    CHECK(res.breakdown.l_source == doctest::Approx(expected.l_source).epsilon(1e-12));
    CHECK(res.breakdown.l_intra == doctest::Approx(expected.l_intra).epsilon(1e-12));
    CHECK(res.breakdown.l_s2t == doctest::Approx(expected.l_s2t).epsilon(1e-12));
    CHECK(res.breakdown.l_t2s == doctest::Approx(expected.l_t2s).epsilon(1e-12));
    CHECK(res.breakdown.l_inter == doctest::Approx(expected.l_inter).epsilon(1e-12));
    CHECK(res.breakdown.l_dual_proto_nce == doctest::Approx(expected.l_dual).epsilon(1e-12));
    CHECK(res.breakdown.l_t == doctest::Approx(expected.l_t).epsilon(1e-12));
    CHECK(res.breakdown.l_s == doctest::Approx(expected.l_s).epsilon(1e-12));
    CHECK(res.breakdown.total == doctest::Approx(expected.total).epsilon(1e-12));
  }
}

TEST_CASE("breakdown additivity identities hold bit-exactly") {
  toy::Fixture f = toy::make(303, 4, 4, 2, 1, 1);
  EncoderConfig ecfg;
  ecfg.d_inst = 2;
  ecfg.d_vis = 2;
  ecfg.n_det = 1;
  ecfg.hidden = 3;
  ecfg.layers = 0;
  ecfg.embed_dim = 4;
  ecfg.classifier_hidden = 3;
  ModelState model = ModelState::init(ecfg, 9);

  Tape tape;
  ModelBinding binding = model.bind(tape);
  BatchLossInputs in = toy::inputs(f, tape.input(f.u0), tape.input(f.v0),
                                   tape.input(Tensor::scalar(0.7)));
  LossBreakdown b = total_loss(tape, in, model, binding).breakdown;
  CHECK(b.l_intra == b.l_target + b.l_source);
  CHECK(b.l_inter == b.l_s2t + b.l_t2s);
  CHECK(b.l_dual_proto_nce == b.l_intra + b.l_inter);
  CHECK(b.total == (b.lambda * b.l_dual_proto_nce + b.l_t) + b.l_s);
}

TEST_CASE("dual equals intra when the inter part is zeroed, and additivity by construction") {
  toy::Fixture f = toy::make(404, 4, 4, 2, 1, 1);
  Tape tape;
  BatchLossInputs in = toy::inputs(f, tape.input(f.u0), tape.input(f.v0),
                                   tape.input(Tensor::scalar(0.7)));
  DualResult dual = dual_proto_nce(tape, in);
  CHECK(dual.loss.item() == dual.intra.loss.item() + dual.inter.loss.item());
  // Subtracting the inter value recovers the intra value exactly.
  CHECK(dual.loss.item() - dual.inter.loss.item() - dual.intra.loss.item() == 0.0);
}

TEST_CASE("lambda only scales the dual term") {
  toy::Fixture f = toy::make(505, 4, 4, 2, 1, 1);
  EncoderConfig ecfg;
  ecfg.d_inst = 2;
  ecfg.d_vis = 2;
  ecfg.n_det = 1;
  ecfg.hidden = 3;
  ecfg.layers = 0;
  ecfg.embed_dim = 4;
  ecfg.classifier_hidden = 3;
  ModelState model = ModelState::init(ecfg, 10);

  auto run = [&](double lambda) {
    toy::Fixture g = f;
    g.cfg.lambda = lambda;
    Tape tape;
    ModelBinding binding = model.bind(tape);
    BatchLossInputs in = toy::inputs(g, tape.input(g.u0), tape.input(g.v0),
                                     tape.input(Tensor::scalar(0.7)));
    return total_loss(tape, in, model, binding).breakdown;
  };
  LossBreakdown a = run(0.5), b = run(0.001);
  CHECK(a.l_dual_proto_nce == b.l_dual_proto_nce);
  CHECK(a.l_t == b.l_t);
  CHECK(a.l_s == b.l_s);
  CHECK(a.l_intra == b.l_intra);

  LossBreakdown zero = run(0.0);
  CHECK(zero.total == zero.l_t + zero.l_s);
}

TEST_CASE("uniform classifier makes every CE term ln 2 and L_t = 2 ln 2 per sample") {
  toy::Fixture f = toy::make(616, 4, 4, 2, 1, 1);
  EncoderConfig ecfg;
  ecfg.d_inst = 2;
  ecfg.d_vis = 2;
  ecfg.n_det = 1;
  ecfg.hidden = 3;
  ecfg.layers = 0;
  ecfg.embed_dim = 4;
  ecfg.classifier_hidden = 3;
  ModelState model = ModelState::init(ecfg, 11);
  for (Tensor& t : model.classifier_params()) t.fill(0.0);  // p = 0.5 everywhere

  Tape tape;
  ModelBinding binding = model.bind(tape);
  BatchLossInputs in = toy::inputs(f, tape.input(f.u0), tape.input(f.v0),
                                   tape.input(Tensor::scalar(0.7)));
  LossBreakdown b = total_loss(tape, in, model, binding).breakdown;
  CHECK(b.l_t == doctest::Approx(2.0 * std::log(2.0)).epsilon(1e-12));
  CHECK(b.l_s == doctest::Approx(2.0 * std::log(2.0)).epsilon(1e-12));
}

TEST_CASE("with the prototype hook at zero, L_Target reduces exactly to summed info_nce") {
  toy::Fixture f = toy::make(707, 4, 5, 2, 2, 1);
  f.cfg.proto_weight = 0.0;
  Tape tape;
  BatchLossInputs in = toy::inputs(f, tape.input(f.u0), tape.input(f.v0),
                                   tape.input(Tensor::scalar(0.7)));
  IntraResult intra = intra_domain_loss(tape, in);

  // Reassemble the instance sum with the same ops in the same order.
  Tape tape2;
  Var inv_tau = tape2.input(Tensor::scalar(0.7));
  Var v_norm = tape2.l2_normalize_rows(tape2.input(f.v0));
  Tensor v_mom_norm = l2_normalize_rows_plain(f.v_mom);
  std::vector<Var> parts;
  for (std::size_t i = 0; i < f.n; ++i) {
    parts.push_back(info_nce(tape2, tape2.slice_rows(v_norm, {i}), v_mom_norm.row_copy(i),
                             v_mom_norm.gather_rows(f.tgt_negs[i].instance_rows), inv_tau));
  }
  Var expected = tape2.scale(tape2.sum(tape2.concat_rows(parts)),
                             1.0 / static_cast<double>(f.n));
  CHECK(intra.l_target.item() == expected.item());
}

TEST_CASE("normalization invariance: pre-scaling anchors and positives changes nothing") {
  toy::Fixture f = toy::make(818, 4, 4, 2, 1, 1);
  auto value_with_scale = [&](double scale) {
    toy::Fixture g = f;
    for (std::size_t i = 0; i < g.u0.numel(); ++i) {
      g.u0[i] *= scale;
      g.v0[i] *= scale;
      g.u_mom[i] *= scale;
      g.v_mom[i] *= scale;
    }
    // The bank stays as built from the unscaled momentum embeddings: the
    // clustering geometry is normalized anyway.
    Tape tape;
    BatchLossInputs in = toy::inputs(g, tape.input(g.u0), tape.input(g.v0),
                                     tape.input(Tensor::scalar(0.7)));
    return dual_proto_nce(tape, in).loss.item();
  };
  double base = value_with_scale(1.0);
  CHECK(value_with_scale(3.0) == doctest::Approx(base).epsilon(1e-12));
  CHECK(value_with_scale(0.04) == doctest::Approx(base).epsilon(1e-12));
}

TEST_CASE("every loss is finite and non-negative on random instances") {
  for (std::uint64_t seed : {1ull, 2ull, 3ull, 4ull, 5ull}) {
    toy::Fixture f = toy::make(seed, 6, 6, 3, 2, 2);
    Tape tape;
    BatchLossInputs in = toy::inputs(f, tape.input(f.u0), tape.input(f.v0),
                                     tape.input(Tensor::scalar(0.9)));
    DualResult dual = dual_proto_nce(tape, in);
    for (double v : {dual.loss.item(), dual.intra.l_target.item(), dual.intra.l_source.item(),
                     dual.inter.l_s2t.item(), dual.inter.l_t2s.item()}) {
      CHECK(std::isfinite(v));
      CHECK(v >= 0.0);
    }
  }
}

TEST_CASE("gradients of every loss op match finite differences (d = 8)") {
  toy::Fixture f = toy::make(909, 6, 8, 3, 2, 2);

  SUBCASE("intra") {
    auto builder = [&](Tape& t, Var x) {
      BatchLossInputs in = toy::inputs_from_point(f, t, x, t.input(Tensor::scalar(0.7)));
      return intra_domain_loss(t, in).loss;
    };
    CHECK(gradcheck(builder, toy::stack_uv(f), 1e-5) < 1e-4);
  }
  SUBCASE("inter") {
    auto builder = [&](Tape& t, Var x) {
      BatchLossInputs in = toy::inputs_from_point(f, t, x, t.input(Tensor::scalar(0.7)));
      return inter_domain_loss(t, in).loss;
    };
    CHECK(gradcheck(builder, toy::stack_uv(f), 1e-5) < 1e-4);
  }
  SUBCASE("dual including the learnable temperature") {
    // Point carries u, v and a final extra row whose first entry is 1/tau.
    Tensor point(2 * f.n + 1, f.d);
    Tensor uv = toy::stack_uv(f);
    for (std::size_t i = 0; i < uv.rows(); ++i) {
      for (std::size_t c = 0; c < f.d; ++c) point.at(i, c) = uv.at(i, c);
    }
    point.at(2 * f.n, 0) = 0.7;
    auto builder = [&](Tape& t, Var x) {
      Var inv_tau = t.reshape(t.slice_rows(t.transpose(t.slice_rows(x, {2 * f.n})), {0}), 1, 1);
      std::vector<std::size_t> top, bottom;
      for (std::size_t i = 0; i < f.n; ++i) top.push_back(i);
      for (std::size_t i = 0; i < f.n; ++i) bottom.push_back(f.n + i);
      BatchLossInputs in = toy::inputs(f, t.slice_rows(x, top), t.slice_rows(x, bottom), inv_tau);
      return dual_proto_nce(t, in).loss;
    };
    CHECK(gradcheck(builder, point, 1e-5) < 1e-4);
  }
}

TEST_CASE("the sign-flip hook corrupts gradients but not values, and gradcheck catches it") {
  toy::Fixture f = toy::make(111, 4, 4, 2, 1, 1);
  auto builder = [&](Tape& t, Var x) {
    BatchLossInputs in = toy::inputs_from_point(f, t, x, t.input(Tensor::scalar(0.7)));
    return intra_domain_loss(t, in).loss;
  };
  double clean = gradcheck(builder, toy::stack_uv(f), 1e-5);
  CHECK(clean < 1e-4);
  set_info_nce_gradient_sign_flip(true);
  double corrupted = gradcheck(builder, toy::stack_uv(f), 1e-5);
  set_info_nce_gradient_sign_flip(false);
  CHECK(corrupted > 1e-2);
}

TEST_SUITE_END();
