#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "model.hpp"

namespace pctl {

enum class Split { Train, Validation, Test };

const char* split_name(Split s);
Split parse_split(const std::string& s);

struct GeneratorConfig {
  std::size_t latent_clusters = 8;
  std::size_t latent_dim = 12;
  double shift_scale = 1.0;   // magnitude of the fixed latent offset between domains
  double noise_scale = 0.25;  // per-coordinate feature noise
  double margin = 0.1;        // latent label rule margin (samples inside are redrawn)
  std::size_t d_inst = 16;
  std::size_t d_vis = 16;
  std::size_t n_det = 4;
  // Samples per domain per split. Target is scarcer than source by default,
  // mirroring the usual sim-to-real regime.
  std::size_t source_train = 1536, source_validation = 256, source_test = 512;
  std::size_t target_train = 512, target_validation = 256, target_test = 512;
  std::uint64_t seed = 1;

  void validate() const;
  std::size_t count(Domain d, Split s) const;
};

// In-memory dataset. Records are stored in the canonical order
// source/train, source/validation, source/test, target/train,
// target/validation, target/test; the header counts define the split
// boundaries (the serialized records carry no split key).
struct DatasetFile {
  std::uint32_t schema_version = 1;
  std::size_t d_inst = 0, d_vis = 0, n_det = 0;
  GeneratorConfig generator;  // config echo
  std::vector<SampleRecord> records;
  // Source-probe / target-probe accuracies measured at generation time.
  double probe_source_accuracy = 0.0;
  double probe_target_accuracy = 0.0;

  std::size_t count(Domain d, Split s) const { return generator.count(d, s); }
  std::size_t split_offset(Domain d, Split s) const;
  std::vector<const SampleRecord*> split(Domain d, Split s) const;

  bool operator==(const DatasetFile& other) const;
};

// Draws a two-domain dataset with a shared latent cluster structure, a
// linear label rule with a margin band, and a fixed random latent offset on
// the target domain scaled by shift_scale. Labels are balanced to exactly
// half positives per domain per split; a sample that cannot satisfy the
// margin and the balance within 1000 draws is a hard error.
//
// When shift_scale > 0, a closed-form ridge probe trained on source features
// must score strictly worse on target data than the same probe trained on
// target features; a violation means the configured gap is vacuous and is
// reported as an error.
DatasetFile generate_synthetic(const GeneratorConfig& cfg);

std::string dataset_to_string(const DatasetFile& ds);
DatasetFile dataset_from_string(const std::string& text);
void save_dataset(const DatasetFile& ds, const std::string& path);
DatasetFile load_dataset(const std::string& path);

// One optimization step consumes one batch from each domain. Positions index
// into the train split of the respective domain.
struct BatchPair {
  std::size_t index = 0;
  std::vector<std::size_t> source_positions;
  std::vector<std::size_t> target_positions;
};

// Each domain's train split is shuffled by (seed, epoch) and chunked into
// batches of batch_size; the i-th chunks are paired while both are present
// and the same size, and a final equal-size short pair is kept only with at
// least 2 samples (instance negatives need a peer). Pairing stops when the
// smaller domain runs out.
std::vector<BatchPair> paired_batches(const DatasetFile& ds, std::size_t batch_size,
                                      std::size_t epoch, std::uint64_t seed);

// Single-domain variant used by the CE-only baselines; same shuffle, same
// short-batch rule.
std::vector<std::vector<std::size_t>> domain_batches(const DatasetFile& ds, Domain domain,
                                                     std::size_t batch_size, std::size_t epoch,
                                                     std::uint64_t seed);

}  // namespace pctl
