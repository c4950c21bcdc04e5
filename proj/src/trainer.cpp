#include "trainer.hpp"

#include <chrono>
#include <cmath>
#include <fstream>
#include <limits>
#include <sstream>

#include "cluster.hpp"

namespace pctl {

namespace {

constexpr std::uint64_t kBankTag = 0x62616e6bULL;
constexpr std::uint64_t kNegTag = 0x6e6567ULL;

std::vector<const SampleRecord*> gather(const std::vector<const SampleRecord*>& split,
                                        const std::vector<std::size_t>& positions) {
  std::vector<const SampleRecord*> out;
  out.reserve(positions.size());
  for (std::size_t p : positions) out.push_back(split[p]);
  return out;
}

std::vector<int> labels_of(const std::vector<const SampleRecord*>& samples) {
  std::vector<int> out;
  out.reserve(samples.size());
  for (const SampleRecord* s : samples) out.push_back(s->label);
  return out;
}

SgdMomentum make_optimizer(const TrainConfig& cfg, const ModelState& model) {
  std::vector<ParamGroup> groups = model.groups();
  SgdMomentum::Group body{cfg.lr_body, {}}, general{cfg.lr, {}};
  for (std::size_t i = 0; i < groups.size(); ++i) {
    (groups[i] == ParamGroup::Body ? body : general).members.push_back(i);
  }
  return SgdMomentum(cfg.momentum, {body, general});
}

// Gradients of the bound leaves, in the same order as model.trainable().
std::vector<const Tensor*> binding_grads(const ModelBinding& binding) {
  std::vector<const Tensor*> out;
  for (const Var& v : binding.encoder) out.push_back(&v.grad());
  for (const Var& v : binding.classifier) out.push_back(&v.grad());
  out.push_back(&binding.inv_tau.grad());
  return out;
}

struct EpochAccumulator {
  std::vector<double> sums;
  std::size_t steps = 0;

  void add(const LossBreakdown& b) {
    std::vector<double> vals = b.field_values();
    if (sums.empty()) sums.assign(vals.size(), 0.0);
    for (std::size_t i = 0; i < vals.size(); ++i) sums[i] += vals[i];
    ++steps;
  }

  LossBreakdown mean() const {
    LossBreakdown b;
    if (steps == 0) return b;
    std::vector<double> vals = sums;
    for (double& v : vals) v /= static_cast<double>(steps);
    std::size_t i = 0;
    b.info_nce_source = vals[i++];
    b.info_nce_target = vals[i++];
    b.proto_source = vals[i++];
    b.proto_target = vals[i++];
    b.l_target = vals[i++];
    b.l_source = vals[i++];
    b.l_intra = vals[i++];
    b.l_s2t = vals[i++];
    b.l_t2s = vals[i++];
    b.l_inter = vals[i++];
    b.l_dual_proto_nce = vals[i++];
    b.l_t = vals[i++];
    b.l_s = vals[i++];
    b.total = vals[i++];
    b.lambda = vals[i++];
    return b;
  }
};

struct BestTracker {
  double best_ce = std::numeric_limits<double>::infinity();
  std::size_t best_epoch = 0;
  ModelState best;

  // Strict improvement only: ties keep the earlier epoch.
  void consider(std::size_t epoch, double val_ce, const ModelState& model,
                const std::string& checkpoint_path) {
    if (val_ce < best_ce) {
      best_ce = val_ce;
      best_epoch = epoch;
      best = model;
      if (!checkpoint_path.empty()) best.save(checkpoint_path);
    }
  }
};

double epoch_seconds(const std::chrono::steady_clock::time_point& t0) {
  auto dt = std::chrono::steady_clock::now() - t0;
  return std::chrono::duration<double>(dt).count();
}

void finish_epoch(RunMetrics& metrics, BestTracker& best, const ModelState& model,
                  const DatasetFile& ds, Domain val_domain, std::size_t epoch,
                  const EpochAccumulator& acc,
                  const std::chrono::steady_clock::time_point& t0, const TrainHooks& hooks,
                  bool track_best) {
  EvalResult val = evaluate(model, ds, val_domain, Split::Validation);
  EvalResult test = evaluate(model, ds, Domain::Target, Split::Test);
  EpochRow row;
  row.epoch = epoch;
  row.mean = acc.mean();
  row.val_ce = val.cross_entropy;
  row.val_acc = val.accuracy;
  row.test_acc = test.accuracy;
  row.seconds = epoch_seconds(t0);
  metrics.rows.push_back(row);
  if (track_best) best.consider(epoch, val.cross_entropy, model, hooks.checkpoint_path);
  if (hooks.on_epoch) hooks.on_epoch(row);
}

[[noreturn]] void abort_run(std::size_t epoch, std::size_t batch, const std::string& detail) {
  throw Error::runtime("training aborted at epoch " + std::to_string(epoch) + ", batch " +
                       std::to_string(batch) + ": " + detail);
}

// Cross-entropy-only epoch over one domain; shared by the baselines.
void ce_epoch(const TrainConfig& cfg, const DatasetFile& ds, Domain domain, std::size_t epoch,
              ModelState& model, SgdMomentum& opt, EpochAccumulator& acc,
              std::size_t& batch_counter) {
  std::vector<const SampleRecord*> split = ds.split(domain, Split::Train);
  for (const std::vector<std::size_t>& positions :
       domain_batches(ds, domain, cfg.batch_size, epoch, cfg.seed)) {
    std::vector<const SampleRecord*> samples = gather(split, positions);
    std::size_t n = samples.size();
    Tape tape;
    ModelBinding binding = model.bind(tape);
    Var embeddings = model.encode(tape, binding, model.assemble_inputs(samples), Which::Online);
    Var logits = model.classifier_logits(tape, binding, embeddings);
    Var ce = tape.scale(tape.sum(tape.nll_logits(logits, labels_of(samples))),
                        1.0 / static_cast<double>(n));
    double value = ce.item();
    if (!std::isfinite(value)) abort_run(epoch, batch_counter, "non-finite loss");
    tape.backward(ce);
    try {
      opt.step(model.trainable(), binding_grads(binding));
    } catch (const Error& e) {
      abort_run(epoch, batch_counter, e.what());
    }
    model.clamp_temperature();
    model.momentum_update();

    LossBreakdown b;
    b.lambda = cfg.lambda;
    if (domain == Domain::Target) b.l_t = value; else b.l_s = value;
    b.total = value;
    acc.add(b);
    ++batch_counter;
  }
}

}  // namespace

TrainResult train_pctl(const TrainConfig& cfg, const DatasetFile& ds, const TrainHooks& hooks) {
  cfg.validate();
  ModelState model = ModelState::init(cfg.encoder_config(ds), cfg.seed);
  SgdMomentum opt = make_optimizer(cfg, model);
  std::vector<const SampleRecord*> src_train = ds.split(Domain::Source, Split::Train);
  std::vector<const SampleRecord*> tgt_train = ds.split(Domain::Target, Split::Train);

  LossConfig loss_cfg;
  loss_cfg.lambda = cfg.lambda;
  loss_cfg.r = cfg.r;
  loss_cfg.r_prime = cfg.r_prime;

  RunMetrics metrics;
  BestTracker best;

  for (std::size_t epoch = 1; epoch <= cfg.epochs; ++epoch) {
    auto t0 = std::chrono::steady_clock::now();

    // Momentum-encode the full training sets, then rebuild the prototypes.
    Tensor u_mom_all = model.encode_values(src_train, Which::Momentum);
    Tensor v_mom_all = model.encode_values(tgt_train, Which::Momentum);
    PrototypeBank bank =
        build_prototype_bank(u_mom_all, v_mom_all, cfg.k_schedule,
                             mix_seed({cfg.seed, kBankTag, epoch}), epoch, cfg.alpha,
                             cfg.tau_prime);
    if (!hooks.dump_dir.empty()) {
      std::ofstream dump(hooks.dump_dir + "/prototypes_epoch" + std::to_string(epoch) + ".txt");
      dump << bank_debug_dump(bank);
    }

    EpochAccumulator acc;
    for (const BatchPair& pair : paired_batches(ds, cfg.batch_size, epoch, cfg.seed)) {
      std::vector<const SampleRecord*> src = gather(src_train, pair.source_positions);
      std::vector<const SampleRecord*> tgt = gather(tgt_train, pair.target_positions);

      Tape tape;
      ModelBinding binding = model.bind(tape);

      BatchLossInputs in;
      in.bank = &bank;
      in.cfg = loss_cfg;
      in.inv_tau = binding.inv_tau;

      in.source.online = model.encode(tape, binding, model.assemble_inputs(src), Which::Online);
      in.source.momentum = model.encode_values(src, Which::Momentum);
      in.source.positions = pair.source_positions;
      in.source.labels = labels_of(src);
      in.target.online = model.encode(tape, binding, model.assemble_inputs(tgt), Which::Online);
      in.target.momentum = model.encode_values(tgt, Which::Momentum);
      in.target.positions = pair.target_positions;
      in.target.labels = labels_of(tgt);

      auto draw = [&](DomainBatchInputs& side, const DomainPrototypes& own,
                      const DomainPrototypes& cross, std::uint64_t domain_tag) {
        for (std::size_t i = 0; i < side.positions.size(); ++i) {
          std::vector<int> s_own, s_cross;
          for (std::size_t m = 0; m < cfg.k_schedule.size(); ++m) {
            s_own.push_back(own.nearest_own[m][side.positions[i]]);
            s_cross.push_back(cross.nearest_cross[m][side.positions[i]]);
          }
          Rng rng(mix_seed({cfg.seed, kNegTag, epoch, pair.index, domain_tag, i}));
          side.negatives.push_back(sample_negatives(side.positions.size(), i, s_own, s_cross,
                                                    cfg.k_schedule, cfg.r, cfg.r_prime, rng));
          if (side.negatives.back().instance_short) ++metrics.short_negative_warnings;
        }
      };
      draw(in.source, bank.source, bank.target, 1);
      draw(in.target, bank.target, bank.source, 2);

      TotalResult res = total_loss(tape, in, model, binding);
      if (!std::isfinite(res.breakdown.total)) {
        abort_run(epoch, pair.index, "non-finite loss");
      }
      tape.backward(res.loss);
      try {
        opt.step(model.trainable(), binding_grads(binding));
      } catch (const Error& e) {
        abort_run(epoch, pair.index, e.what());
      }
      model.clamp_temperature();
      model.momentum_update();

      acc.add(res.breakdown);
      ++metrics.source_batches;
      ++metrics.target_batches;
    }

    finish_epoch(metrics, best, model, ds, Domain::Target, epoch, acc, t0, hooks, true);
  }

  metrics.best_epoch = best.best_epoch;
  TrainResult out;
  out.best = best.best_epoch ? best.best : model;
  out.metrics = std::move(metrics);
  return out;
}

TrainResult train_target_only(const TrainConfig& cfg, const DatasetFile& ds,
                              const TrainHooks& hooks) {
  cfg.validate();
  ModelState model = ModelState::init(cfg.encoder_config(ds), cfg.seed);
  SgdMomentum opt = make_optimizer(cfg, model);
  RunMetrics metrics;
  BestTracker best;
  for (std::size_t epoch = 1; epoch <= cfg.epochs; ++epoch) {
    auto t0 = std::chrono::steady_clock::now();
    EpochAccumulator acc;
    ce_epoch(cfg, ds, Domain::Target, epoch, model, opt, acc, metrics.target_batches);
    finish_epoch(metrics, best, model, ds, Domain::Target, epoch, acc, t0, hooks, true);
  }
  metrics.best_epoch = best.best_epoch;
  TrainResult out;
  out.best = best.best_epoch ? best.best : model;
  out.metrics = std::move(metrics);
  return out;
}

TrainResult train_fine_tune(const TrainConfig& cfg, const DatasetFile& ds,
                            const TrainHooks& hooks) {
  cfg.validate();
  ModelState model = ModelState::init(cfg.encoder_config(ds), cfg.seed);
  SgdMomentum opt = make_optimizer(cfg, model);
  RunMetrics metrics;
  BestTracker best;

  // Phase 1: supervised pretraining on the source split; the final weights
  // hand off to phase 2 unchanged and do not compete for the best epoch.
  for (std::size_t epoch = 1; epoch <= cfg.pretrain_epochs; ++epoch) {
    auto t0 = std::chrono::steady_clock::now();
    EpochAccumulator acc;
    ce_epoch(cfg, ds, Domain::Source, epoch, model, opt, acc, metrics.source_batches);
    finish_epoch(metrics, best, model, ds, Domain::Source, epoch, acc, t0, hooks, false);
  }
  metrics.phase2_start = cfg.pretrain_epochs + 1;

  // Phase 2: fine-tune on the target split with a fresh optimizer state.
  SgdMomentum opt2 = make_optimizer(cfg, model);
  for (std::size_t epoch = cfg.pretrain_epochs + 1;
       epoch <= cfg.pretrain_epochs + cfg.epochs; ++epoch) {
    auto t0 = std::chrono::steady_clock::now();
    EpochAccumulator acc;
    ce_epoch(cfg, ds, Domain::Target, epoch, model, opt2, acc, metrics.target_batches);
    finish_epoch(metrics, best, model, ds, Domain::Target, epoch, acc, t0, hooks, true);
  }
  metrics.best_epoch = best.best_epoch;
  TrainResult out;
  out.best = best.best_epoch ? best.best : model;
  out.metrics = std::move(metrics);
  return out;
}

TrainResult train(const TrainConfig& cfg, const DatasetFile& ds, const TrainHooks& hooks) {
  switch (cfg.mode) {
    case TrainMode::Pctl: return train_pctl(cfg, ds, hooks);
    case TrainMode::TargetOnly: return train_target_only(cfg, ds, hooks);
    case TrainMode::FineTune: return train_fine_tune(cfg, ds, hooks);
  }
  throw Error::config("train: unknown mode");
}

EvalResult evaluate(const ModelState& model, const DatasetFile& ds, Domain domain, Split split) {
  std::vector<const SampleRecord*> samples = ds.split(domain, split);
  if (samples.empty()) throw Error::config("evaluate: empty split");

  Tape tape;
  ModelBinding binding = model.bind_frozen(tape);
  Var embeddings = model.encode(tape, binding, model.assemble_inputs(samples), Which::Online);
  Var logits = model.classifier_logits(tape, binding, embeddings);
  Var probs = tape.softmax_rows(logits);
  Var nll = tape.nll_logits(logits, labels_of(samples));

  EvalResult out;
  double ce_sum = 0.0;
  for (std::size_t i = 0; i < samples.size(); ++i) {
    double p1 = probs.value().at(i, 1);
    int pred = p1 >= 0.5 ? 1 : 0;  // ties predicted positive
    int y = samples[i]->label;
    if (pred == 1 && y == 1) ++out.tp;
    else if (pred == 1 && y == 0) ++out.fp;
    else if (pred == 0 && y == 1) ++out.fn;
    else ++out.tn;
    ce_sum += nll.value().at(i, 0);
  }
  out.accuracy = static_cast<double>(out.tp + out.tn) / static_cast<double>(samples.size());
  out.cross_entropy = ce_sum / static_cast<double>(samples.size());
  return out;
}

const std::vector<std::string>& RunMetrics::csv_columns() {
  static const std::vector<std::string> columns = [] {
    std::vector<std::string> c = {"epoch"};
    for (const char* name : LossBreakdown::field_names()) c.push_back(name);
    c.insert(c.end(), {"val_ce", "val_acc", "test_acc", "seconds"});
    return c;
  }();
  return columns;
}

std::string RunMetrics::to_csv() const {
  std::ostringstream out;
  const auto& columns = csv_columns();
  for (std::size_t i = 0; i < columns.size(); ++i) {
    if (i) out << ",";
    out << columns[i];
  }
  out << "\n";
  for (const EpochRow& row : rows) {
    out << row.epoch;
    for (double v : row.mean.field_values()) out << "," << format_double(v);
    out << "," << format_double(row.val_ce) << "," << format_double(row.val_acc) << ","
        << format_double(row.test_acc) << "," << format_double(row.seconds) << "\n";
  }
  return out.str();
}

namespace {

std::string schedule_name(const std::vector<std::size_t>& schedule) {
  std::string s = "k=";
  for (std::size_t i = 0; i < schedule.size(); ++i) {
    if (i) s += ",";
    s += std::to_string(schedule[i]);
  }
  if (schedule.size() > 1) s = "M=" + std::to_string(schedule.size()) + " " + s;
  return s;
}

}  // namespace

std::vector<AblationCondition> parse_ablation_conditions(const std::string& spec) {
  std::vector<AblationCondition> out;
  std::istringstream in(spec);
  std::string item;
  while (std::getline(in, item, ';')) {
    if (item.empty()) continue;
    AblationCondition cond;
    std::istringstream nums(item);
    std::string n;
    while (std::getline(nums, n, ',')) {
      try {
        cond.schedule.push_back(static_cast<std::size_t>(std::stoul(n)));
      } catch (const std::exception&) {
        throw Error::config("ablation conditions: cannot parse '" + n + "'");
      }
    }
    if (cond.schedule.empty()) throw Error::config("ablation conditions: empty condition");
    cond.name = schedule_name(cond.schedule);
    out.push_back(std::move(cond));
  }
  if (out.empty()) throw Error::config("ablation conditions: nothing to run");
  return out;
}

AblationReport run_ablation(const TrainConfig& cfg, const DatasetFile& ds,
                            const std::vector<AblationCondition>& conditions) {
  AblationReport report;
  for (const AblationCondition& cond : conditions) {
    TrainConfig run_cfg = cfg;
    run_cfg.mode = TrainMode::Pctl;
    run_cfg.k_schedule = cond.schedule;
    run_cfg.validate();  // rejects k below r' + 1 with the minimum-k message
    AblationRow row;
    row.name = cond.name;
    for (std::size_t t = 0; t < cfg.trials; ++t) {
      run_cfg.seed = cfg.seed + t;
      TrainResult res = train_pctl(run_cfg, ds);
      row.accuracies.push_back(evaluate(res.best, ds, Domain::Target, Split::Test).accuracy);
    }
    double mean = 0.0;
    for (double a : row.accuracies) mean += a;
    mean /= static_cast<double>(row.accuracies.size());
    double var = 0.0;
    for (double a : row.accuracies) var += (a - mean) * (a - mean);
    row.mean = mean;
    row.stddev = row.accuracies.size() > 1
                     ? std::sqrt(var / static_cast<double>(row.accuracies.size() - 1))
                     : 0.0;
    report.rows.push_back(std::move(row));
  }
  return report;
}

std::string AblationReport::to_text() const {
  std::ostringstream out;
  out << "condition | mean_acc | std | trials\n";
  for (const AblationRow& row : rows) {
    out << row.name << " | " << format_double(row.mean) << " | " << format_double(row.stddev)
        << " |";
    for (double a : row.accuracies) out << " " << format_double(a);
    out << "\n";
  }
  return out.str();
}

}  // namespace pctl
