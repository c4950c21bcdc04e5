#include "data.hpp"

#include <cmath>
#include <fstream>
#include <sstream>

#include <json.hpp>

namespace pctl {

using nlohmann::json;

const char* split_name(Split s) {
  switch (s) {
    case Split::Train: return "train";
    case Split::Validation: return "validation";
    case Split::Test: return "test";
  }
  return "?";
}

Split parse_split(const std::string& s) {
  if (s == "train") return Split::Train;
  if (s == "validation" || s == "val") return Split::Validation;
  if (s == "test") return Split::Test;
  throw Error::config("unknown split '" + s + "' (expected train|validation|test)");
}

void GeneratorConfig::validate() const {
  if (latent_clusters == 0 || latent_dim == 0 || d_inst == 0 || d_vis == 0 || n_det == 0) {
    throw Error::config("generator: counts and dimensions must be >= 1");
  }
  if (shift_scale < 0.0 || noise_scale < 0.0 || margin < 0.0) {
    throw Error::config("generator: scales must be >= 0");
  }
  for (Domain d : {Domain::Source, Domain::Target}) {
    for (Split s : {Split::Train, Split::Validation, Split::Test}) {
      if (count(d, s) == 0) throw Error::config("generator: split sizes must be >= 1");
    }
  }
}

std::size_t GeneratorConfig::count(Domain d, Split s) const {
  if (d == Domain::Source) {
    switch (s) {
      case Split::Train: return source_train;
      case Split::Validation: return source_validation;
      case Split::Test: return source_test;
    }
  }
  switch (s) {
    case Split::Train: return target_train;
    case Split::Validation: return target_validation;
    case Split::Test: return target_test;
  }
  return 0;
}

namespace {

constexpr Domain kDomainOrder[2] = {Domain::Source, Domain::Target};
constexpr Split kSplitOrder[3] = {Split::Train, Split::Validation, Split::Test};

}  // namespace

std::size_t DatasetFile::split_offset(Domain d, Split s) const {
  std::size_t off = 0;
  for (Domain dd : kDomainOrder) {
    for (Split ss : kSplitOrder) {
      if (dd == d && ss == s) return off;
      off += count(dd, ss);
    }
  }
  return off;
}

std::vector<const SampleRecord*> DatasetFile::split(Domain d, Split s) const {
  std::size_t off = split_offset(d, s);
  std::size_t n = count(d, s);
  std::vector<const SampleRecord*> out;
  out.reserve(n);
  for (std::size_t i = 0; i < n; ++i) out.push_back(&records[off + i]);
  return out;
}

bool DatasetFile::operator==(const DatasetFile& other) const {
  return dataset_to_string(*this) == dataset_to_string(other);
}

namespace {

// Ridge probe (features -> {-1,+1}) solved by Gaussian elimination; used
// only for the generation-time gap check.
std::vector<double> ridge_fit(const std::vector<std::vector<double>>& xs,
                              const std::vector<int>& ys) {
  std::size_t d = xs[0].size() + 1;  // intercept
  std::vector<std::vector<double>> a(d, std::vector<double>(d, 0.0));
  std::vector<double> b(d, 0.0);
  for (std::size_t i = 0; i < xs.size(); ++i) {
    std::vector<double> row = xs[i];
    row.push_back(1.0);
    double y = ys[i] == 1 ? 1.0 : -1.0;
    for (std::size_t p = 0; p < d; ++p) {
      b[p] += row[p] * y;
      for (std::size_t q = 0; q < d; ++q) a[p][q] += row[p] * row[q];
    }
  }
  for (std::size_t p = 0; p < d; ++p) a[p][p] += 1e-3;
  for (std::size_t col = 0; col < d; ++col) {
    std::size_t piv = col;
    for (std::size_t rr = col + 1; rr < d; ++rr) {
      if (std::abs(a[rr][col]) > std::abs(a[piv][col])) piv = rr;
    }
    std::swap(a[col], a[piv]);
    std::swap(b[col], b[piv]);
    double diag = a[col][col];
    for (std::size_t rr = col + 1; rr < d; ++rr) {
      double f = a[rr][col] / diag;
      for (std::size_t q = col; q < d; ++q) a[rr][q] -= f * a[col][q];
      b[rr] -= f * b[col];
    }
  }
  std::vector<double> w(d, 0.0);
  for (std::size_t col = d; col-- > 0;) {
    double acc = b[col];
    for (std::size_t q = col + 1; q < d; ++q) acc -= a[col][q] * w[q];
    w[col] = acc / a[col][col];
  }
  return w;
}

double probe_accuracy(const std::vector<double>& w, const std::vector<std::vector<double>>& xs,
                      const std::vector<int>& ys) {
  std::size_t correct = 0;
  for (std::size_t i = 0; i < xs.size(); ++i) {
    double score = w.back();
    for (std::size_t p = 0; p < xs[i].size(); ++p) score += w[p] * xs[i][p];
    int pred = score >= 0.0 ? 1 : 0;
    if (pred == ys[i]) ++correct;
  }
  return static_cast<double>(correct) / static_cast<double>(xs.size());
}

// Flat probe features: instruction block, candidate block, context mean.
std::vector<double> probe_features(const SampleRecord& s) {
  std::vector<double> x = s.instruction_feats;
  x.insert(x.end(), s.candidate_feat.begin(), s.candidate_feat.end());
  std::vector<double> ctx(s.context_feats[0].size(), 0.0);
  for (const auto& c : s.context_feats) {
    for (std::size_t j = 0; j < ctx.size(); ++j) ctx[j] += c[j];
  }
  for (double& v : ctx) v /= static_cast<double>(s.context_feats.size());
  x.insert(x.end(), ctx.begin(), ctx.end());
  return x;
}

BoundingBox random_box(Rng& rng) {
  BoundingBox b;
  b.x1 = rng.next_double() * 0.9;
  b.y1 = rng.next_double() * 0.9;
  b.x2 = b.x1 + rng.next_double() * (1.0 - b.x1);
  b.y2 = b.y1 + rng.next_double() * (1.0 - b.y1);
  return b;
}

std::vector<double> map_latent(const std::vector<std::vector<double>>& map,
                               const std::vector<double>& z, double noise_scale, Rng& rng) {
  std::vector<double> out(map.size(), 0.0);
  for (std::size_t i = 0; i < map.size(); ++i) {
    double acc = 0.0;
    for (std::size_t j = 0; j < z.size(); ++j) acc += map[i][j] * z[j];
    out[i] = acc + noise_scale * rng.next_normal();
  }
  return out;
}

std::vector<std::vector<double>> random_map(std::size_t rows, std::size_t cols, Rng& rng) {
  std::vector<std::vector<double>> m(rows, std::vector<double>(cols, 0.0));
  double scale = 1.0 / std::sqrt(static_cast<double>(cols));
  for (auto& row : m) {
    for (double& v : row) v = scale * rng.next_normal();
  }
  return m;
}

}  // namespace

DatasetFile generate_synthetic(const GeneratorConfig& cfg) {
  cfg.validate();
  Rng rng(mix_seed({cfg.seed, 0x67656e6572617465ULL}));
  DatasetFile ds;
  ds.d_inst = cfg.d_inst;
  ds.d_vis = cfg.d_vis;
  ds.n_det = cfg.n_det;
  ds.generator = cfg;

  std::size_t dl = cfg.latent_dim;

  // Shared latent structure: cluster centers, a unit label direction, and a
  // fixed random unit shift direction per cluster. Cluster-dependent shifts
  // cannot be absorbed by a bias term, so the gap is structural rather than
  // a translation.
  std::vector<std::vector<double>> centers(cfg.latent_clusters, std::vector<double>(dl, 0.0));
  for (auto& c : centers) {
    for (double& v : c) v = rng.next_normal();
  }
  std::vector<double> label_dir(dl, 0.0);
  double nw = 0.0;
  for (double& v : label_dir) {
    v = rng.next_normal();
    nw += v * v;
  }
  for (double& v : label_dir) v /= std::sqrt(nw);
  std::vector<std::vector<double>> shift_dirs(cfg.latent_clusters,
                                              std::vector<double>(dl, 0.0));
  for (auto& dir : shift_dirs) {
    double nd = 0.0;
    for (double& v : dir) {
      v = rng.next_normal();
      nd += v * v;
    }
    for (double& v : dir) v /= std::sqrt(nd);
  }

  auto map_inst = random_map(cfg.d_inst, dl, rng);
  auto map_cand = random_map(cfg.d_vis, dl, rng);
  auto map_ctx = random_map(cfg.d_vis, dl, rng);

  constexpr double kLatentSpread = 0.5;
  constexpr std::size_t kMaxDraws = 1000;

  std::uint64_t next_id = 0;
  for (Domain domain : kDomainOrder) {
    for (Split split : kSplitOrder) {
      std::size_t n = cfg.count(domain, split);
      std::size_t quota_pos = (n + 1) / 2;
      std::size_t quota_neg = n - quota_pos;
      std::size_t used_pos = 0, used_neg = 0;
      for (std::size_t i = 0; i < n; ++i) {
        std::vector<double> z(dl, 0.0);
        int label = -1;
        bool found = false;
        for (std::size_t attempt = 0; attempt < kMaxDraws; ++attempt) {
          std::size_t c = static_cast<std::size_t>(rng.next_below(cfg.latent_clusters));
          double score = 0.0;
          for (std::size_t j = 0; j < dl; ++j) {
            z[j] = centers[c][j] + kLatentSpread * rng.next_normal();
            score += label_dir[j] * z[j];
          }
          if (std::abs(score) < cfg.margin) continue;  // inside the margin band
          int y = score > 0.0 ? 1 : 0;
          if (y == 1 && used_pos >= quota_pos) continue;
          if (y == 0 && used_neg >= quota_neg) continue;
          label = y;
          found = true;
          break;
        }
        if (!found) {
          throw Error::runtime("generate_synthetic: could not balance labels for " +
                               std::string(domain_name(domain)) + "/" + split_name(split) +
                               " after " + std::to_string(kMaxDraws) + " rejection rounds");
        }
        if (label == 1) ++used_pos; else ++used_neg;

        // The label comes from the shared latent rule; the target domain
        // observes shifted latents, which is exactly the transfer gap.
        if (domain == Domain::Target) {
          for (std::size_t j = 0; j < dl; ++j) z[j] += cfg.shift_scale * shift_dir[j];
        }

        SampleRecord rec;
        rec.id = next_id++;
        rec.domain = domain;
        rec.label = label;
        rec.instruction_feats = map_latent(map_inst, z, cfg.noise_scale, rng);
        rec.candidate_feat = map_latent(map_cand, z, cfg.noise_scale, rng);
        rec.candidate_box = random_box(rng);
        for (std::size_t j = 0; j < cfg.n_det; ++j) {
          rec.context_feats.push_back(map_latent(map_ctx, z, cfg.noise_scale, rng));
          rec.context_boxes.push_back(random_box(rng));
        }
        rec.validate();
        ds.records.push_back(std::move(rec));
      }
    }
  }

  // Generation-time sanity probe: with a real gap, a source-trained linear
  // probe must score strictly worse on target data than a target-trained one.
  auto collect = [&](Domain d, Split s, std::vector<std::vector<double>>& xs,
                     std::vector<int>& ys) {
    for (const SampleRecord* r : ds.split(d, s)) {
      xs.push_back(probe_features(*r));
      ys.push_back(r->label);
    }
  };
  std::vector<std::vector<double>> xs_s, xs_t;
  std::vector<int> ys_s, ys_t;
  collect(Domain::Source, Split::Train, xs_s, ys_s);
  collect(Domain::Target, Split::Train, xs_t, ys_t);
  std::vector<double> w_source = ridge_fit(xs_s, ys_s);
  std::vector<double> w_target = ridge_fit(xs_t, ys_t);
  ds.probe_source_accuracy = probe_accuracy(w_source, xs_t, ys_t);
  ds.probe_target_accuracy = probe_accuracy(w_target, xs_t, ys_t);
  if (cfg.shift_scale > 0.0 && !(ds.probe_source_accuracy < ds.probe_target_accuracy)) {
    throw Error::runtime(
        "generate_synthetic: domain gap check failed (source probe " +
        format_double(ds.probe_source_accuracy) + " vs target probe " +
        format_double(ds.probe_target_accuracy) + " on target data); the configured shift is vacuous");
  }
  return ds;
}

namespace {

json box_to_json(const BoundingBox& b) { return json::array({b.x1, b.y1, b.x2, b.y2}); }

BoundingBox box_from_json(const json& j) {
  if (!j.is_array() || j.size() != 4) throw Error::config("bounding box must be [x1,y1,x2,y2]");
  BoundingBox b;
  b.x1 = j[0].get<double>();
  b.y1 = j[1].get<double>();
  b.x2 = j[2].get<double>();
  b.y2 = j[3].get<double>();
  return b;
}

json generator_to_json(const GeneratorConfig& g) {
  return json{{"latent_clusters", g.latent_clusters},
              {"latent_dim", g.latent_dim},
              {"shift_scale", g.shift_scale},
              {"noise_scale", g.noise_scale},
              {"margin", g.margin},
              {"d_inst", g.d_inst},
              {"d_vis", g.d_vis},
              {"n_det", g.n_det},
              {"source_train", g.source_train},
              {"source_validation", g.source_validation},
              {"source_test", g.source_test},
              {"target_train", g.target_train},
              {"target_validation", g.target_validation},
              {"target_test", g.target_test},
              {"seed", g.seed}};
}

GeneratorConfig generator_from_json(const json& j) {
  GeneratorConfig g;
  g.latent_clusters = j.at("latent_clusters").get<std::size_t>();
  g.latent_dim = j.at("latent_dim").get<std::size_t>();
  g.shift_scale = j.at("shift_scale").get<double>();
  g.noise_scale = j.at("noise_scale").get<double>();
  g.margin = j.at("margin").get<double>();
  g.d_inst = j.at("d_inst").get<std::size_t>();
  g.d_vis = j.at("d_vis").get<std::size_t>();
  g.n_det = j.at("n_det").get<std::size_t>();
  g.source_train = j.at("source_train").get<std::size_t>();
  g.source_validation = j.at("source_validation").get<std::size_t>();
  g.source_test = j.at("source_test").get<std::size_t>();
  g.target_train = j.at("target_train").get<std::size_t>();
  g.target_validation = j.at("target_validation").get<std::size_t>();
  g.target_test = j.at("target_test").get<std::size_t>();
  g.seed = j.at("seed").get<std::uint64_t>();
  return g;
}

}  // namespace

std::string dataset_to_string(const DatasetFile& ds) {
  std::ostringstream out;
  json counts;
  for (Domain d : kDomainOrder) {
    for (Split s : kSplitOrder) {
      counts[domain_name(d)][split_name(s)] = ds.count(d, s);
    }
  }
  json header{{"schema_version", ds.schema_version},
              {"d_inst", ds.d_inst},
              {"d_vis", ds.d_vis},
              {"n_det", ds.n_det},
              {"counts", counts},
              {"generator", generator_to_json(ds.generator)},
              {"probe_source_accuracy", ds.probe_source_accuracy},
              {"probe_target_accuracy", ds.probe_target_accuracy}};
  out << header.dump() << "\n";
  for (const SampleRecord& r : ds.records) {
    json cont = json::array(), cont_boxes = json::array();
    for (const auto& c : r.context_feats) cont.push_back(c);
    for (const auto& b : r.context_boxes) cont_boxes.push_back(box_to_json(b));
    json line{{"id", r.id},
              {"domain", domain_name(r.domain)},
              {"y", r.label},
              {"inst", r.instruction_feats},
              {"cand", r.candidate_feat},
              {"cand_box", box_to_json(r.candidate_box)},
              {"cont", cont},
              {"cont_boxes", cont_boxes}};
    out << line.dump() << "\n";
  }
  return out.str();
}

DatasetFile dataset_from_string(const std::string& text) {
  std::istringstream in(text);
  std::string line;
  std::size_t line_no = 0;
  if (!std::getline(in, line)) throw Error::config("dataset: empty file");
  ++line_no;
  DatasetFile ds;
  try {
    json header = json::parse(line);
    std::uint32_t version = header.at("schema_version").get<std::uint32_t>();
    if (version != 1) {
      throw Error::config("dataset: schema version " + std::to_string(version) +
                          " is not supported (expected 1)");
    }
    ds.schema_version = version;
    ds.d_inst = header.at("d_inst").get<std::size_t>();
    ds.d_vis = header.at("d_vis").get<std::size_t>();
    ds.n_det = header.at("n_det").get<std::size_t>();
    ds.generator = generator_from_json(header.at("generator"));
    ds.probe_source_accuracy = header.value("probe_source_accuracy", 0.0);
    ds.probe_target_accuracy = header.value("probe_target_accuracy", 0.0);
    json counts = header.at("counts");
    for (Domain d : kDomainOrder) {
      for (Split s : kSplitOrder) {
        std::size_t expected = counts.at(domain_name(d)).at(split_name(s)).get<std::size_t>();
        if (expected != ds.generator.count(d, s)) {
          throw Error::config("dataset: header counts disagree with the generator echo for " +
                              std::string(domain_name(d)) + "/" + split_name(s));
        }
      }
    }
  } catch (const Error&) {
    throw;
  } catch (const std::exception& e) {
    throw Error::config("dataset line 1: " + std::string(e.what()));
  }

  std::size_t expected_records = 0;
  for (Domain d : kDomainOrder) {
    for (Split s : kSplitOrder) expected_records += ds.count(d, s);
  }

  // Split membership is positional: blocks follow the canonical
  // domain/split order with the counts from the header.
  std::vector<Domain> expected_domain;
  expected_domain.reserve(expected_records);
  for (Domain d : kDomainOrder) {
    for (Split s : kSplitOrder) {
      for (std::size_t i = 0; i < ds.count(d, s); ++i) expected_domain.push_back(d);
    }
  }

  std::vector<char> seen_ids;
  std::size_t record_index = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (line.empty()) {
      throw Error::config("dataset line " + std::to_string(line_no) + ": empty line");
    }
    if (record_index >= expected_records) {
      throw Error::config("dataset line " + std::to_string(line_no) +
                          ": more records than the header counts announce");
    }
    try {
      json j = json::parse(line);
      SampleRecord r;
      r.id = j.at("id").get<std::uint64_t>();
      r.domain = parse_domain(j.at("domain").get<std::string>());
      r.label = j.at("y").get<int>();
      r.instruction_feats = j.at("inst").get<std::vector<double>>();
      r.candidate_feat = j.at("cand").get<std::vector<double>>();
      r.candidate_box = box_from_json(j.at("cand_box"));
      for (const json& c : j.at("cont")) r.context_feats.push_back(c.get<std::vector<double>>());
      for (const json& b : j.at("cont_boxes")) r.context_boxes.push_back(box_from_json(b));
      if (r.instruction_feats.size() != ds.d_inst || r.candidate_feat.size() != ds.d_vis ||
          r.context_feats.size() != ds.n_det) {
        throw Error::config("record dimensions do not match the header");
      }
      if (r.domain != expected_domain[record_index]) {
        throw Error::config("record domain breaks the canonical source-then-target block order");
      }
      r.validate();
      if (r.id >= seen_ids.size()) seen_ids.resize(r.id + 1, 0);
      if (seen_ids[r.id]) throw Error::config("duplicate id " + std::to_string(r.id));
      seen_ids[r.id] = 1;
      ds.records.push_back(std::move(r));
      ++record_index;
    } catch (const Error& e) {
      throw Error::config("dataset line " + std::to_string(line_no) + ": " +
                          std::string(e.what()));
    } catch (const std::exception& e) {
      throw Error::config("dataset line " + std::to_string(line_no) + ": " +
                          std::string(e.what()));
    }
  }
  if (record_index != expected_records) {
    throw Error::config("dataset: truncated after line " + std::to_string(line_no) + " (" +
                        std::to_string(record_index) + " of " +
                        std::to_string(expected_records) + " records); last good line is " +
                        std::to_string(line_no));
  }
  return ds;
}

void save_dataset(const DatasetFile& ds, const std::string& path) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw Error::config("cannot write dataset '" + path + "'");
  out << dataset_to_string(ds);
  if (!out) throw Error::runtime("dataset write failed for '" + path + "'");
}

DatasetFile load_dataset(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw Error::config("cannot open dataset '" + path + "'");
  std::ostringstream buf;
  buf << in.rdbuf();
  return dataset_from_string(buf.str());
}

namespace {

std::vector<std::size_t> shuffled_positions(std::size_t n, std::size_t epoch, std::uint64_t seed,
                                            std::uint64_t domain_tag) {
  std::vector<std::size_t> pos(n);
  for (std::size_t i = 0; i < n; ++i) pos[i] = i;
  Rng rng(mix_seed({seed, 0x7368756666ULL, epoch, domain_tag}));
  rng.shuffle(pos);
  return pos;
}

}  // namespace

std::vector<BatchPair> paired_batches(const DatasetFile& ds, std::size_t batch_size,
                                      std::size_t epoch, std::uint64_t seed) {
  if (batch_size < 2) {
    throw Error::config("batch size " + std::to_string(batch_size) +
                        " is too small (instance negatives need at least one peer)");
  }
  std::vector<std::size_t> src = shuffled_positions(ds.count(Domain::Source, Split::Train),
                                                    epoch, seed, 1);
  std::vector<std::size_t> tgt = shuffled_positions(ds.count(Domain::Target, Split::Train),
                                                    epoch, seed, 2);
  std::vector<BatchPair> out;
  std::size_t chunk = 0;
  while (true) {
    std::size_t s0 = chunk * batch_size, t0 = chunk * batch_size;
    if (s0 >= src.size() || t0 >= tgt.size()) break;
    std::size_t sn = std::min(batch_size, src.size() - s0);
    std::size_t tn = std::min(batch_size, tgt.size() - t0);
    // Pairs must be the same size; a mismatched tail (one domain exhausted
    // mid-chunk) ends the epoch, and an equal-size tail below 2 is dropped.
    if (sn != tn || sn < 2) break;
    BatchPair pair;
    pair.index = chunk;
    pair.source_positions.assign(src.begin() + static_cast<std::ptrdiff_t>(s0),
                                 src.begin() + static_cast<std::ptrdiff_t>(s0 + sn));
    pair.target_positions.assign(tgt.begin() + static_cast<std::ptrdiff_t>(t0),
                                 tgt.begin() + static_cast<std::ptrdiff_t>(t0 + tn));
    out.push_back(std::move(pair));
    ++chunk;
  }
  return out;
}

std::vector<std::vector<std::size_t>> domain_batches(const DatasetFile& ds, Domain domain,
                                                     std::size_t batch_size, std::size_t epoch,
                                                     std::uint64_t seed) {
  if (batch_size < 2) {
    throw Error::config("batch size " + std::to_string(batch_size) +
                        " is too small (instance negatives need at least one peer)");
  }
  std::vector<std::size_t> pos = shuffled_positions(ds.count(domain, Split::Train), epoch, seed,
                                                    domain == Domain::Source ? 1 : 2);
  std::vector<std::vector<std::size_t>> out;
  for (std::size_t start = 0; start < pos.size(); start += batch_size) {
    std::size_t n = std::min(batch_size, pos.size() - start);
    if (n < 2) break;
    out.emplace_back(pos.begin() + static_cast<std::ptrdiff_t>(start),
                     pos.begin() + static_cast<std::ptrdiff_t>(start + n));
  }
  return out;
}

}  // namespace pctl
