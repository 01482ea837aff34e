#pragma once

#include <cstddef>
#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include "cfsm/matrix.hpp"
#include "cfsm/rng.hpp"

namespace cfsm::data {

enum class Domain : std::uint8_t { Source = 0, Target = 1 };

std::string to_string(Domain d);

struct Dataset {
  Matrix samples;            // N×input
  std::vector<int> labels;   // length N
  std::vector<int> label_space;  // sorted class ids
  Domain domain = Domain::Source;
  /// Ground-truth binary factor pattern per row (synthetic data only).
  std::optional<Matrix> factors;

  std::size_t size() const noexcept { return labels.size(); }
  /// Throws DataError if a label is outside label_space or a value is not finite.
  void validate() const;
  /// Label remapped to its position in label_space (the classifier index).
  int class_index(int label) const;
  Dataset subset(const std::vector<std::size_t>& rows) const;
};

/// Reads an IDX image/label pair (magic 2051/2049, big-endian headers).
/// Pixels are scaled to [0,1].
Dataset load_idx(const std::string& images_path, const std::string& labels_path);

/// Writes an IDX pair; pixel values are clamped to [0,255] bytes.
void write_idx(const std::string& images_path, const std::string& labels_path,
               const std::vector<std::uint8_t>& pixels, std::size_t rows, std::size_t cols,
               const std::vector<std::uint8_t>& labels);

/// CSV with a header row, one sample per line, integer label in the last
/// column. Feature values are multiplied by `scale`.
Dataset load_csv(const std::string& path, double scale = 1.0);

struct SplitResult {
  Dataset source;
  Dataset target;
};

/// Filters `d` into a source part and a target part by class. In DLSTL mode
/// the class sets must not intersect.
SplitResult split_label_space(const Dataset& d, const std::vector<int>& source_classes,
                              const std::vector<int>& target_classes, bool disjoint_required = true);

/// Exactly k indices per class, drawn uniformly without replacement.
/// Returned sorted ascending.
std::vector<std::size_t> kshot_sample(const Dataset& target, std::size_t k, std::uint64_t seed);

/// Stratified split: the first `per_class` rows of every class (in a seeded
/// random order) go to `first`, the rest to `second`.
SplitResult stratified_split(const Dataset& d, std::size_t per_class, std::uint64_t seed);

/// Endless index stream over a pool that reshuffles after every pass.
class Stream {
 public:
  Stream() = default;
  Stream(std::vector<std::size_t> pool, Rng rng);

  std::size_t next();
  bool empty() const noexcept { return pool_.empty(); }
  std::size_t pool_size() const noexcept { return pool_.size(); }
  std::size_t passes() const noexcept { return passes_; }

 private:
  void reshuffle();
  std::vector<std::size_t> pool_;
  std::vector<std::size_t> order_;
  std::size_t pos_ = 0;
  std::size_t passes_ = 0;
  Rng rng_;
};

struct Batch {
  Matrix x;
  std::vector<int> labels;         // classifier index, −1 when unlabelled
  std::vector<Domain> domain;
  std::vector<std::uint8_t> labelled;
  std::vector<std::size_t> origin; // row index in its source dataset

  std::size_t size() const noexcept { return domain.size(); }
  std::vector<std::size_t> rows_of(Domain d) const;
  std::vector<std::size_t> labelled_rows_of(Domain d) const;
  std::size_t count(Domain d) const;
};

/// Labelled source rows plus unlabelled-or-k-shot target rows.
struct StreamSet {
  const Dataset* source = nullptr;
  const Dataset* target = nullptr;
  Stream source_stream;
  Stream target_unlabelled;  // rows drawn without their labels
  Stream target_labelled;    // k-shot rows, drawn with labels
};

/// B/2 source rows then B/2 target rows. When `labelled_target_rows` > 0 that
/// many of the target rows come from the labelled k-shot stream.
Batch make_minibatch(StreamSet& streams, std::size_t batch_size, std::size_t labelled_target_rows = 0);

/// B labelled rows from a single domain (source-only and target-only variants).
Batch make_single_domain_batch(const Dataset& d, Stream& stream, std::size_t batch_size, bool labelled);

/// Synthetic two-domain data with binary latent factors.
struct SynthSpec {
  std::size_t factors = 6;
  std::size_t source_classes = 4;
  std::size_t target_classes = 4;
  std::size_t samples_per_class = 50;
  std::size_t input_dim = 20;
  double noise = 0.3;
  /// 0 gives identity distortions; otherwise each domain applies
  /// x ↦ (I + s·R)x + s·c with R, c standard normal (R scaled by 1/√input_dim).
  double distortion = 0.5;
  /// Per-sample nuisance latent (shared directions, not tied to class).
  std::size_t nuisance_dims = 0;
  double nuisance_scale = 0.0;
  /// Optional explicit class → factor pattern maps (0/1 entries).
  std::vector<std::vector<int>> source_patterns;
  std::vector<std::vector<int>> target_patterns;
  /// UDA: the target domain reuses the source classes (ids and patterns).
  bool shared_label_space = false;
};

SplitResult synth_two_domain(const SynthSpec& spec, std::uint64_t seed);

}  // namespace cfsm::data
