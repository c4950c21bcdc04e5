#include <doctest.h>

#include <cstdio>
#include <fstream>
#include <set>

#include "data.hpp"

using namespace pctl;

namespace {

GeneratorConfig small_config(std::uint64_t seed = 3) {
  GeneratorConfig g;
  g.latent_clusters = 4;
  g.latent_dim = 6;
  g.shift_scale = 1.0;
  g.noise_scale = 0.2;
  g.margin = 0.1;
  g.d_inst = 5;
  g.d_vis = 5;
  g.n_det = 2;
  g.source_train = 60;
  g.source_validation = 20;
  g.source_test = 20;
  g.target_train = 40;
  g.target_validation = 16;
  g.target_test = 16;
  g.seed = seed;
  return g;
}

}  // namespace

TEST_SUITE_BEGIN("data");

TEST_CASE("generation is bitwise deterministic in the seed") {
  DatasetFile a = generate_synthetic(small_config());
  DatasetFile b = generate_synthetic(small_config());
  CHECK(dataset_to_string(a) == dataset_to_string(b));

  GeneratorConfig other = small_config(4);
  DatasetFile c = generate_synthetic(other);
  CHECK(dataset_to_string(a) != dataset_to_string(c));
}

TEST_CASE("header counts match the generated records") {
  DatasetFile ds = generate_synthetic(small_config());
  std::size_t total = 0;
  for (Domain d : {Domain::Source, Domain::Target}) {
    for (Split s : {Split::Train, Split::Validation, Split::Test}) {
      std::vector<const SampleRecord*> split = ds.split(d, s);
      CHECK(split.size() == ds.count(d, s));
      for (const SampleRecord* r : split) CHECK(r->domain == d);
      total += split.size();
    }
  }
  CHECK(total == ds.records.size());

  // Unique ids.
  std::set<std::uint64_t> ids;
  for (const SampleRecord& r : ds.records) ids.insert(r.id);
  CHECK(ids.size() == ds.records.size());
}

TEST_CASE("labels are balanced within two points of half") {
  DatasetFile ds = generate_synthetic(small_config());
  for (Domain d : {Domain::Source, Domain::Target}) {
    for (Split s : {Split::Train, Split::Validation, Split::Test}) {
      std::vector<const SampleRecord*> split = ds.split(d, s);
      double pos = 0;
      for (const SampleRecord* r : split) pos += r->label;
      double frac = pos / static_cast<double>(split.size());
      CHECK(frac >= 0.48);
      CHECK(frac <= 0.52);
    }
  }
}

TEST_CASE("the generation-time probe sees the configured gap") {
  DatasetFile ds = generate_synthetic(small_config());
  CHECK(ds.probe_source_accuracy < ds.probe_target_accuracy);
}

TEST_CASE("save/load round-trips bitwise") {
  DatasetFile ds = generate_synthetic(small_config());
  std::string path = "test_dataset_roundtrip.jsonl";
  save_dataset(ds, path);
  DatasetFile back = load_dataset(path);
  CHECK(dataset_to_string(back) == dataset_to_string(ds));
  std::remove(path.c_str());
}

TEST_CASE("malformed inputs are rejected with line numbers") {
  DatasetFile ds = generate_synthetic(small_config());
  std::string text = dataset_to_string(ds);

  SUBCASE("truncated file names the last good line") {
    // Keep the header and the first 10 records only.
    std::size_t pos = 0;
    for (int lines = 0; lines < 11; ++lines) pos = text.find('\n', pos) + 1;
    CHECK_THROWS_WITH_AS(dataset_from_string(text.substr(0, pos)),
                         doctest::Contains("last good line is 11"), Error);
  }

  SUBCASE("garbage record line carries its line number") {
    std::size_t pos = text.find('\n') + 1;
    std::string broken = text.substr(0, pos) + "{not json}\n";
    CHECK_THROWS_WITH_AS(dataset_from_string(broken), doctest::Contains("line 2"), Error);
  }

  SUBCASE("schema version mismatch") {
    std::string broken = text;
    std::size_t at = broken.find("\"schema_version\":1");
    REQUIRE(at != std::string::npos);
    broken.replace(at, 18, "\"schema_version\":9");
    CHECK_THROWS_WITH_AS(dataset_from_string(broken), doctest::Contains("version"), Error);
  }

  SUBCASE("empty file") { CHECK_THROWS_AS(dataset_from_string(""), Error); }

  SUBCASE("missing file") { CHECK_THROWS_AS(load_dataset("no_such_file.jsonl"), Error); }
}

TEST_CASE("an all-zero-count header loads as an empty dataset") {
  std::string header =
      R"({"schema_version":1,"d_inst":5,"d_vis":5,"n_det":2,)"
      R"("counts":{"source":{"train":0,"validation":0,"test":0},)"
      R"("target":{"train":0,"validation":0,"test":0}},)"
      R"("generator":{"latent_clusters":4,"latent_dim":6,"shift_scale":1.0,)"
      R"("noise_scale":0.2,"margin":0.1,"d_inst":5,"d_vis":5,"n_det":2,)"
      R"("source_train":0,"source_validation":0,"source_test":0,)"
      R"("target_train":0,"target_validation":0,"target_test":0,"seed":3}})"
      "\n";
  DatasetFile ds = dataset_from_string(header);
  CHECK(ds.records.empty());
}

TEST_CASE("shift scale zero keeps the domains on the same distribution") {
  GeneratorConfig g = small_config();
  g.shift_scale = 0.0;
  DatasetFile ds = generate_synthetic(g);  // no gap check when shift is zero
  CHECK(ds.records.size() == 172);
}

TEST_CASE("infeasible balance is reported as an error") {
  GeneratorConfig g = small_config();
  g.margin = 1e9;  // nothing clears the margin band
  CHECK_THROWS_WITH_AS(generate_synthetic(g), doctest::Contains("rejection rounds"), Error);
}

TEST_CASE("paired batches walk both domains in lockstep") {
  GeneratorConfig g = small_config();
  g.source_train = 100;
  g.target_train = 6400 / 50;  // 128
  DatasetFile ds = generate_synthetic(g);

  SUBCASE("equal sizes yield full pairs") {
    GeneratorConfig g2 = small_config();
    g2.source_train = 128;
    g2.target_train = 128;
    DatasetFile ds2 = generate_synthetic(g2);
    std::vector<BatchPair> pairs = paired_batches(ds2, 64, 1, 9);
    CHECK(pairs.size() == 2);
    for (const BatchPair& p : pairs) {
      CHECK(p.source_positions.size() == 64);
      CHECK(p.target_positions.size() == 64);
    }
  }

  SUBCASE("mismatched tails stop the epoch (100 source vs plenty of target)") {
    // Source chunks into 64 + 36, target into 64 + 64: the second pair has
    // unequal chunks, so exactly one pair survives.
    std::vector<BatchPair> pairs = paired_batches(ds, 64, 1, 9);
    CHECK(pairs.size() == 1);
  }

  SUBCASE("equal short tails of at least 2 are kept") {
    GeneratorConfig g2 = small_config();
    g2.source_train = 100;
    g2.target_train = 100;
    DatasetFile ds2 = generate_synthetic(g2);
    std::vector<BatchPair> pairs = paired_batches(ds2, 64, 1, 9);
    CHECK(pairs.size() == 2);
    CHECK(pairs[1].source_positions.size() == 36);
    CHECK(pairs[1].target_positions.size() == 36);
  }

  SUBCASE("same (seed, epoch) gives identical batch order") {
    std::vector<BatchPair> a = paired_batches(ds, 32, 5, 9);
    std::vector<BatchPair> b = paired_batches(ds, 32, 5, 9);
    REQUIRE(a.size() == b.size());
    for (std::size_t i = 0; i < a.size(); ++i) {
      CHECK(a[i].source_positions == b[i].source_positions);
      CHECK(a[i].target_positions == b[i].target_positions);
    }
    std::vector<BatchPair> c = paired_batches(ds, 32, 6, 9);
    CHECK(a[0].target_positions != c[0].target_positions);
  }

  SUBCASE("every sample appears at most once per epoch") {
    std::vector<BatchPair> pairs = paired_batches(ds, 16, 2, 9);
    std::set<std::size_t> seen_source, seen_target;
    for (const BatchPair& p : pairs) {
      for (std::size_t s : p.source_positions) CHECK(seen_source.insert(s).second);
      for (std::size_t t : p.target_positions) CHECK(seen_target.insert(t).second);
    }
  }

  SUBCASE("batch size below 2 is a config error") {
    CHECK_THROWS_AS(paired_batches(ds, 1, 1, 9), Error);
    CHECK_THROWS_AS(domain_batches(ds, Domain::Target, 0, 1, 9), Error);
  }
}

TEST_CASE("single-domain batches cover the split minus sub-2 tails") {
  GeneratorConfig g = small_config();
  g.target_train = 33;
  DatasetFile ds = generate_synthetic(g);
  std::vector<std::vector<std::size_t>> batches = domain_batches(ds, Domain::Target, 16, 1, 9);
  // 33 = 16 + 16 + 1; the final singleton is dropped.
  REQUIRE(batches.size() == 2);
  CHECK(batches[0].size() == 16);
  CHECK(batches[1].size() == 16);
}

TEST_SUITE_END();
