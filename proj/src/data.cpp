#include "cfsm/data.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <iterator>
#include <map>
#include <set>
#include <sstream>

#include "cfsm/error.hpp"
#include "cfsm/log.hpp"

namespace cfsm::data {

namespace {

constexpr std::uint32_t kIdxImagesMagic = 2051;
constexpr std::uint32_t kIdxLabelsMagic = 2049;

std::vector<std::uint8_t> read_file(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw DataError("cannot open " + path);
  return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

std::uint32_t be32(const std::vector<std::uint8_t>& b, std::size_t off) {
  return (std::uint32_t{b[off]} << 24) | (std::uint32_t{b[off + 1]} << 16) |
         (std::uint32_t{b[off + 2]} << 8) | std::uint32_t{b[off + 3]};
}

void put_be32(std::ofstream& out, std::uint32_t v) {
  const char bytes[4] = {static_cast<char>(v >> 24), static_cast<char>(v >> 16),
                         static_cast<char>(v >> 8), static_cast<char>(v)};
  out.write(bytes, 4);
}

std::vector<int> sorted_unique(std::vector<int> v) {
  std::sort(v.begin(), v.end());
  v.erase(std::unique(v.begin(), v.end()), v.end());
  return v;
}

// Shuffled row lists per class, keyed by label, in ascending label order.
std::map<int, std::vector<std::size_t>> rows_by_class(const Dataset& d) {
  std::map<int, std::vector<std::size_t>> by;
  for (int c : d.label_space) by[c];
  for (std::size_t i = 0; i < d.size(); ++i) by[d.labels[i]].push_back(i);
  return by;
}

Matrix random_normal(std::size_t r, std::size_t c, Rng& rng, double scale = 1.0) {
  std::normal_distribution<double> n(0.0, 1.0);
  Matrix m(r, c);
  for (double& v : m.values()) v = n(rng) * scale;
  return m;
}

}  // namespace

std::string to_string(Domain d) { return d == Domain::Source ? "source" : "target"; }

void Dataset::validate() const {
  if (samples.rows() != labels.size()) {
    throw DataError("dataset has " + std::to_string(samples.rows()) + " samples but " +
                    std::to_string(labels.size()) + " labels");
  }
  for (int l : labels)
    if (!std::binary_search(label_space.begin(), label_space.end(), l))
      throw DataError("label " + std::to_string(l) + " is not in the dataset's label space");
  if (!samples.all_finite()) throw DataError("dataset contains non-finite sample values");
}

int Dataset::class_index(int label) const {
  auto it = std::lower_bound(label_space.begin(), label_space.end(), label);
  if (it == label_space.end() || *it != label)
    throw DataError("label " + std::to_string(label) + " is not in the label space");
  return static_cast<int>(it - label_space.begin());
}

Dataset Dataset::subset(const std::vector<std::size_t>& rows) const {
  Dataset out;
  out.samples = samples.select_rows(rows);
  out.labels.reserve(rows.size());
  for (std::size_t r : rows) out.labels.push_back(labels.at(r));
  out.label_space = label_space;
  out.domain = domain;
  if (factors) out.factors = factors->select_rows(rows);
  return out;
}

Dataset load_idx(const std::string& images_path, const std::string& labels_path) {
  const auto img = read_file(images_path);
  const auto lab = read_file(labels_path);
  if (img.size() < 16) throw FormatError("IDX image file " + images_path + " is empty or too short");
  if (lab.size() < 8) throw FormatError("IDX label file " + labels_path + " is empty or too short");
  if (be32(img, 0) != kIdxImagesMagic)
    throw FormatError("bad IDX image magic " + std::to_string(be32(img, 0)) + " (expected 2051)");
  if (be32(lab, 0) != kIdxLabelsMagic)
    throw FormatError("bad IDX label magic " + std::to_string(be32(lab, 0)) + " (expected 2049)");

  const std::size_t n = be32(img, 4), rows = be32(img, 8), cols = be32(img, 12);
  const std::size_t n_labels = be32(lab, 4);
  if (n != n_labels) {
    throw DataError("IDX count mismatch: " + std::to_string(n) + " images vs " +
                    std::to_string(n_labels) + " labels");
  }
  const std::size_t img_bytes = n * rows * cols;
  if (img.size() - 16 != img_bytes) {
    throw DataError("IDX image payload: expected " + std::to_string(img_bytes) + " bytes, got " +
                    std::to_string(img.size() - 16));
  }
  if (lab.size() - 8 != n) {
    throw DataError("IDX label payload: expected " + std::to_string(n) + " bytes, got " +
                    std::to_string(lab.size() - 8));
  }

  Dataset d;
  d.samples = Matrix(n, rows * cols);
  auto v = d.samples.values();
  for (std::size_t i = 0; i < img_bytes; ++i) v[i] = img[16 + i] / 255.0;
  d.labels.resize(n);
  for (std::size_t i = 0; i < n; ++i) d.labels[i] = lab[8 + i];
  d.label_space = sorted_unique(d.labels);
  return d;
}

void write_idx(const std::string& images_path, const std::string& labels_path,
               const std::vector<std::uint8_t>& pixels, std::size_t rows, std::size_t cols,
               const std::vector<std::uint8_t>& labels) {
  if (pixels.size() != labels.size() * rows * cols)
    throw DataError("write_idx: pixel count does not match labels × rows × cols");
  std::ofstream img(images_path, std::ios::binary);
  std::ofstream lab(labels_path, std::ios::binary);
  if (!img || !lab) throw DataError("write_idx: cannot open output files");
  put_be32(img, kIdxImagesMagic);
  put_be32(img, static_cast<std::uint32_t>(labels.size()));
  put_be32(img, static_cast<std::uint32_t>(rows));
  put_be32(img, static_cast<std::uint32_t>(cols));
  img.write(reinterpret_cast<const char*>(pixels.data()), static_cast<std::streamsize>(pixels.size()));
  put_be32(lab, kIdxLabelsMagic);
  put_be32(lab, static_cast<std::uint32_t>(labels.size()));
  lab.write(reinterpret_cast<const char*>(labels.data()), static_cast<std::streamsize>(labels.size()));
}

Dataset load_csv(const std::string& path, double scale) {
  std::ifstream in(path);
  if (!in) throw DataError("cannot open " + path);
  std::string line;
  if (!std::getline(in, line)) throw FormatError("CSV file " + path + " is empty");
  std::vector<double> values;
  std::vector<int> labels;
  std::size_t width = 0;
  std::size_t line_no = 1;
  while (std::getline(in, line)) {
    ++line_no;
    if (line.empty() || line == "\r") continue;
    std::vector<double> fields;
    std::stringstream ss(line);
    std::string cell;
    while (std::getline(ss, cell, ',')) {
      try {
        std::size_t used = 0;
        fields.push_back(std::stod(cell, &used));
      } catch (const std::exception&) {
        throw FormatError("CSV " + path + " line " + std::to_string(line_no) + ": bad number '" +
                          cell + "'");
      }
    }
    if (fields.size() < 2) throw FormatError("CSV line " + std::to_string(line_no) + " has < 2 columns");
    if (width == 0) width = fields.size();
    if (fields.size() != width)
      throw FormatError("CSV line " + std::to_string(line_no) + " has a different column count");
    const double lab = fields.back();
    if (lab != std::floor(lab)) throw DataError("CSV line " + std::to_string(line_no) + ": non-integer label");
    labels.push_back(static_cast<int>(lab));
    for (std::size_t c = 0; c + 1 < fields.size(); ++c) values.push_back(fields[c] * scale);
  }
  Dataset d;
  d.samples = Matrix(labels.size(), width == 0 ? 0 : width - 1, std::move(values));
  d.labels = std::move(labels);
  d.label_space = sorted_unique(d.labels);
  d.validate();
  return d;
}

SplitResult split_label_space(const Dataset& d, const std::vector<int>& source_classes,
                              const std::vector<int>& target_classes, bool disjoint_required) {
  const auto src = sorted_unique(source_classes);
  const auto tgt = sorted_unique(target_classes);
  if (disjoint_required) {
    std::vector<int> both;
    std::set_intersection(src.begin(), src.end(), tgt.begin(), tgt.end(), std::back_inserter(both));
    if (!both.empty()) {
      throw ConfigError("source and target label spaces overlap (class " + std::to_string(both[0]) +
                        "); disjoint label spaces are required");
    }
  }
  if (src.empty()) log::warn("split_label_space: empty source class set");
  if (tgt.empty()) log::warn("split_label_space: empty target class set");

  auto take = [&](const std::vector<int>& classes, Domain dom) {
    std::vector<std::size_t> rows;
    for (std::size_t i = 0; i < d.size(); ++i)
      if (std::binary_search(classes.begin(), classes.end(), d.labels[i])) rows.push_back(i);
    Dataset out = d.subset(rows);
    out.label_space = classes;
    out.domain = dom;
    return out;
  };
  return {take(src, Domain::Source), take(tgt, Domain::Target)};
}

std::vector<std::size_t> kshot_sample(const Dataset& target, std::size_t k, std::uint64_t seed) {
  std::vector<std::size_t> out;
  if (k == 0) return out;
  Rng rng = make_stream(seed, "kshot");
  for (auto& [cls, rows] : rows_by_class(target)) {
    if (rows.size() < k) {
      throw DataError("class " + std::to_string(cls) + " has " + std::to_string(rows.size()) +
                      " samples, fewer than k=" + std::to_string(k));
    }
    std::shuffle(rows.begin(), rows.end(), rng);
    out.insert(out.end(), rows.begin(), rows.begin() + static_cast<std::ptrdiff_t>(k));
  }
  std::sort(out.begin(), out.end());
  return out;
}

SplitResult stratified_split(const Dataset& d, std::size_t per_class, std::uint64_t seed) {
  Rng rng = make_stream(seed, "split");
  std::vector<std::size_t> first, second;
  for (auto& [cls, rows] : rows_by_class(d)) {
    std::shuffle(rows.begin(), rows.end(), rng);
    const std::size_t n = std::min(per_class, rows.size());
    first.insert(first.end(), rows.begin(), rows.begin() + static_cast<std::ptrdiff_t>(n));
    second.insert(second.end(), rows.begin() + static_cast<std::ptrdiff_t>(n), rows.end());
  }
  std::sort(first.begin(), first.end());
  std::sort(second.begin(), second.end());
  return {d.subset(first), d.subset(second)};
}

Stream::Stream(std::vector<std::size_t> pool, Rng rng) : pool_(std::move(pool)), rng_(rng) {
  reshuffle();
}

void Stream::reshuffle() {
  order_ = pool_;
  std::shuffle(order_.begin(), order_.end(), rng_);
  pos_ = 0;
}

std::size_t Stream::next() {
  if (pool_.empty()) throw ContractError("draw from an empty stream");
  if (pos_ == order_.size()) {
    ++passes_;
    reshuffle();
  }
  return order_[pos_++];
}

std::vector<std::size_t> Batch::rows_of(Domain d) const {
  std::vector<std::size_t> out;
  for (std::size_t i = 0; i < domain.size(); ++i)
    if (domain[i] == d) out.push_back(i);
  return out;
}

std::vector<std::size_t> Batch::labelled_rows_of(Domain d) const {
  std::vector<std::size_t> out;
  for (std::size_t i = 0; i < domain.size(); ++i)
    if (domain[i] == d && labelled[i]) out.push_back(i);
  return out;
}

std::size_t Batch::count(Domain d) const {
  return static_cast<std::size_t>(std::count(domain.begin(), domain.end(), d));
}

namespace {

void append_row(Batch& b, const Dataset& d, std::size_t row, std::size_t out_row, bool labelled) {
  auto dst = b.x.row(out_row);
  auto src = d.samples.row(row);
  std::copy(src.begin(), src.end(), dst.begin());
  b.labels.push_back(labelled ? d.class_index(d.labels[row]) : -1);
  b.domain.push_back(d.domain);
  b.labelled.push_back(labelled ? 1 : 0);
  b.origin.push_back(row);
}

}  // namespace

Batch make_minibatch(StreamSet& s, std::size_t batch_size, std::size_t labelled_target_rows) {
  if (batch_size % 2 != 0 || batch_size == 0)
    throw ConfigError("batch size must be even and positive, got " + std::to_string(batch_size));
  if (!s.source || !s.target || s.source_stream.empty())
    throw ContractError("make_minibatch needs non-empty source and target streams");
  const std::size_t half = batch_size / 2;
  if (labelled_target_rows > half) throw ConfigError("labelled target rows exceed B/2");
  if (labelled_target_rows > 0 && s.target_labelled.empty())
    throw ContractError("labelled target rows requested but the k-shot stream is empty");
  if (labelled_target_rows < half && s.target_unlabelled.empty())
    throw ContractError("make_minibatch: target stream is empty");

  Batch b;
  b.x = Matrix(batch_size, s.source->samples.cols());
  std::size_t r = 0;
  for (std::size_t i = 0; i < half; ++i) append_row(b, *s.source, s.source_stream.next(), r++, true);
  for (std::size_t i = 0; i < labelled_target_rows; ++i)
    append_row(b, *s.target, s.target_labelled.next(), r++, true);
  for (std::size_t i = labelled_target_rows; i < half; ++i)
    append_row(b, *s.target, s.target_unlabelled.next(), r++, false);
  return b;
}

Batch make_single_domain_batch(const Dataset& d, Stream& stream, std::size_t batch_size, bool labelled) {
  if (batch_size == 0) throw ConfigError("batch size must be positive");
  Batch b;
  b.x = Matrix(batch_size, d.samples.cols());
  for (std::size_t i = 0; i < batch_size; ++i) append_row(b, d, stream.next(), i, labelled);
  return b;
}

SplitResult synth_two_domain(const SynthSpec& spec, std::uint64_t seed) {
  const std::size_t L = spec.factors;
  const std::size_t classes = spec.shared_label_space ? spec.source_classes
                                                      : spec.source_classes + spec.target_classes;
  if (L == 0 || spec.input_dim == 0 || spec.samples_per_class == 0)
    throw ConfigError("synthetic spec: factors, input_dim and samples_per_class must be positive");
  if (spec.source_classes == 0 || spec.target_classes == 0)
    throw ConfigError("synthetic spec: both domains need at least one class");
  if (spec.shared_label_space && spec.target_classes != spec.source_classes)
    throw ConfigError("synthetic spec: a shared label space needs equal class counts");
  if (spec.shared_label_space && !spec.target_patterns.empty())
    throw ConfigError("synthetic spec: a shared label space takes no target patterns");
  if (L < 63 && classes > (std::size_t{1} << L))
    throw ConfigError("synthetic spec: more classes than distinct factor patterns");

  Rng rng = make_stream(seed, "synthetic");

  // Class → factor pattern. Explicit maps win; otherwise draw distinct codes.
  std::vector<std::vector<int>> patterns;
  if (!spec.source_patterns.empty() || !spec.target_patterns.empty()) {
    if (spec.source_patterns.size() != spec.source_classes ||
        (!spec.shared_label_space && spec.target_patterns.size() != spec.target_classes))
      throw ConfigError("synthetic spec: pattern map sizes must match class counts");
    patterns = spec.source_patterns;
    patterns.insert(patterns.end(), spec.target_patterns.begin(), spec.target_patterns.end());
    for (const auto& p : patterns) {
      if (p.size() != L) throw ConfigError("synthetic spec: pattern length must equal factors");
      for (int v : p)
        if (v != 0 && v != 1) throw ConfigError("synthetic spec: patterns must be 0/1");
    }
    std::set<std::vector<int>> seen(patterns.begin(), patterns.end());
    if (seen.size() != patterns.size())
      throw ConfigError("synthetic spec: class factor patterns are not disjoint");
  } else {
    std::set<std::vector<int>> seen;
    std::bernoulli_distribution coin(0.5);
    while (patterns.size() < classes) {
      std::vector<int> p(L);
      for (int& v : p) v = coin(rng) ? 1 : 0;
      if (seen.insert(p).second) patterns.push_back(p);
    }
  }

  const std::size_t D = spec.input_dim;
  const Matrix embed = random_normal(D, L, rng, 1.0 / std::sqrt(static_cast<double>(L)));
  const Matrix nuisance = random_normal(D, spec.nuisance_dims, rng,
                                        spec.nuisance_dims ? 1.0 / std::sqrt(double(spec.nuisance_dims)) : 0.0);

  struct Distortion {
    Matrix a;
    std::vector<double> c;
  };
  auto make_distortion = [&]() {
    Distortion d{Matrix::identity(D), std::vector<double>(D, 0.0)};
    if (spec.distortion == 0.0) return d;
    const Matrix r = random_normal(D, D, rng, spec.distortion / std::sqrt(static_cast<double>(D)));
    for (std::size_t i = 0; i < D * D; ++i) d.a.values()[i] += r.values()[i];
    std::normal_distribution<double> n(0.0, 1.0);
    for (double& v : d.c) v = spec.distortion * n(rng);
    return d;
  };
  const Distortion dist_src = make_distortion();
  const Distortion dist_tgt = make_distortion();

  std::normal_distribution<double> gauss(0.0, 1.0);
  auto generate = [&](std::size_t first_class, std::size_t count, Domain dom, const Distortion& dist) {
    Dataset d;
    d.domain = dom;
    const std::size_t n = count * spec.samples_per_class;
    d.samples = Matrix(n, D);
    d.factors = Matrix(n, L);
    std::vector<double> base(D), u(spec.nuisance_dims);
    std::size_t row = 0;
    for (std::size_t c = first_class; c < first_class + count; ++c) {
      d.label_space.push_back(static_cast<int>(c));
      for (std::size_t s = 0; s < spec.samples_per_class; ++s, ++row) {
        d.labels.push_back(static_cast<int>(c));
        for (std::size_t l = 0; l < L; ++l) (*d.factors)(row, l) = patterns[c][l];
        for (double& v : u) v = spec.nuisance_scale * gauss(rng);
        for (std::size_t i = 0; i < D; ++i) {
          double v = 0.0;
          for (std::size_t l = 0; l < L; ++l) v += embed(i, l) * (2.0 * patterns[c][l] - 1.0);
          for (std::size_t j = 0; j < u.size(); ++j) v += nuisance(i, j) * u[j];
          base[i] = v;
        }
        for (std::size_t i = 0; i < D; ++i) {
          double v = dist.c[i];
          for (std::size_t j = 0; j < D; ++j) v += dist.a(i, j) * base[j];
          d.samples(row, i) = v + (spec.noise > 0.0 ? spec.noise * gauss(rng) : 0.0);
        }
      }
    }
    return d;
  };
  SplitResult out{generate(0, spec.source_classes, Domain::Source, dist_src),
                  generate(spec.shared_label_space ? 0 : spec.source_classes, spec.target_classes,
                           Domain::Target, dist_tgt)};
  return out;
}

}  // namespace cfsm::data
