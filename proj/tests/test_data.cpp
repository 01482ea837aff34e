#include <algorithm>
#include <filesystem>
#include <fstream>
#include <map>
#include <set>

#include "doctest.h"

#include "cfsm/data.hpp"
#include "cfsm/log.hpp"

using namespace cfsm;
namespace fs = std::filesystem;

namespace {

fs::path tmp(const std::string& name) { return fs::temp_directory_path() / ("cfsm_test_" + name); }

void put_be32(std::ofstream& o, std::uint32_t v) {
  const unsigned char b[4] = {static_cast<unsigned char>(v >> 24), static_cast<unsigned char>(v >> 16),
                              static_cast<unsigned char>(v >> 8), static_cast<unsigned char>(v)};
  o.write(reinterpret_cast<const char*>(b), 4);
}

// 3 images of 2×2 written byte by byte.
void write_fixture(const fs::path& img, const fs::path& lab, std::size_t payload = 12) {
  const unsigned char px[12] = {0, 255, 51, 102, 10, 20, 30, 40, 255, 255, 0, 0};
  std::ofstream i(img, std::ios::binary);
  put_be32(i, 2051);
  put_be32(i, 3);
  put_be32(i, 2);
  put_be32(i, 2);
  i.write(reinterpret_cast<const char*>(px), static_cast<std::streamsize>(payload));
  std::ofstream l(lab, std::ios::binary);
  put_be32(l, 2049);
  put_be32(l, 3);
  const unsigned char y[3] = {7, 1, 7};
  l.write(reinterpret_cast<const char*>(y), 3);
}

data::Dataset toy(std::size_t per_class, const std::vector<int>& classes, data::Domain dom) {
  data::Dataset d;
  d.domain = dom;
  d.label_space = classes;
  d.samples = Matrix(per_class * classes.size(), 2);
  for (std::size_t i = 0; i < d.samples.rows(); ++i) {
    d.labels.push_back(classes[i % classes.size()]);
    d.samples(i, 0) = static_cast<double>(i);
  }
  return d;
}

}  // namespace

TEST_CASE("idx fixture") {
  auto img = tmp("img"), lab = tmp("lab");
  write_fixture(img, lab);
  auto d = data::load_idx(img.string(), lab.string());
  CHECK(d.samples.rows() == 3);
  CHECK(d.samples.cols() == 4);
  CHECK(d.samples(0, 1) == 1.0);
  CHECK(d.samples(0, 2) == 51.0 / 255.0);
  CHECK(d.samples(1, 3) == 40.0 / 255.0);
  CHECK(d.labels == std::vector<int>{7, 1, 7});
  CHECK(d.label_space == std::vector<int>{1, 7});

  // write_idx reproduces the same dataset
  auto img2 = tmp("img2"), lab2 = tmp("lab2");
  std::vector<std::uint8_t> px;
  for (double v : d.samples.values()) px.push_back(static_cast<std::uint8_t>(v * 255.0 + 0.5));
  data::write_idx(img2.string(), lab2.string(), px, 2, 2, {7, 1, 7});
  auto d2 = data::load_idx(img2.string(), lab2.string());
  CHECK(d2.samples == d.samples);
  for (auto p : {img, lab, img2, lab2}) fs::remove(p);
}

TEST_CASE("idx errors") {
  auto img = tmp("eimg"), lab = tmp("elab");
  std::ofstream(img, std::ios::binary).close();
  write_fixture(tmp("x"), lab);
  CHECK_THROWS_AS(data::load_idx(img.string(), lab.string()), FormatError);

  write_fixture(img, lab, 10);
  try {
    data::load_idx(img.string(), lab.string());
    FAIL("expected DataError");
  } catch (const DataError& e) {
    std::string w = e.what();
    CHECK(w.find("expected 12") != std::string::npos);
    CHECK(w.find("got 10") != std::string::npos);
  }

  {
    std::ofstream o(img, std::ios::binary);
    put_be32(o, 1234);
    put_be32(o, 3);
    put_be32(o, 2);
    put_be32(o, 2);
  }
  CHECK_THROWS_AS(data::load_idx(img.string(), lab.string()), FormatError);
  for (auto p : {img, lab, tmp("x")}) fs::remove(p);
}

TEST_CASE("csv loader") {
  auto p = tmp("csv");
  {
    std::ofstream o(p);
    o << "a,b,label\n1.5,2,3\n0,-1,0\n";
  }
  auto d = data::load_csv(p.string(), 2.0);
  CHECK(d.samples == Matrix{{3.0, 4.0}, {0.0, -2.0}});
  CHECK(d.labels == std::vector<int>{3, 0});
  {
    std::ofstream o(p);
    o << "a,label\n1,x\n";
  }
  CHECK_THROWS_AS(data::load_csv(p.string()), FormatError);
  {
    std::ofstream o(p);
    o << "a,label\n1,0.5\n";
  }
  CHECK_THROWS_AS(data::load_csv(p.string()), DataError);
  {
    std::ofstream o(p);
  }
  CHECK_THROWS_AS(data::load_csv(p.string()), FormatError);
  fs::remove(p);
}

TEST_CASE("label space split") {
  auto d = toy(4, {0, 1, 2, 3, 4, 5, 6, 7, 8, 9}, data::Domain::Source);
  auto s = data::split_label_space(d, {0, 1, 2, 3, 4}, {5, 6, 7, 8, 9});
  CHECK(s.source.size() == 20);
  CHECK(s.target.size() == 20);
  for (int l : s.source.labels) CHECK(l < 5);
  for (int l : s.target.labels) CHECK(l >= 5);
  CHECK(s.target.domain == data::Domain::Target);
  std::vector<int> both;
  std::set_intersection(s.source.label_space.begin(), s.source.label_space.end(), s.target.label_space.begin(),
                        s.target.label_space.end(), std::back_inserter(both));
  CHECK(both.empty());

  CHECK_THROWS_AS(data::split_label_space(d, {0, 1}, {1, 2}), ConfigError);
  CHECK_NOTHROW(data::split_label_space(d, {0, 1}, {0, 1}, false));

  log::set_quiet(true);
  const auto before = log::warning_count();
  auto e = data::split_label_space(d, {0, 1}, {});
  log::set_quiet(false);
  CHECK(e.target.size() == 0);
  CHECK(log::warning_count() == before + 1);
}

TEST_CASE("k-shot sampling") {
  auto d = toy(6, {5, 6, 7, 8, 9}, data::Domain::Target);
  auto k3 = data::kshot_sample(d, 3, 1);
  CHECK(k3.size() == 15);
  CHECK(std::is_sorted(k3.begin(), k3.end()));
  std::map<int, int> per;
  for (auto i : k3) ++per[d.labels[i]];
  for (auto [c, n] : per) CHECK(n == 3);
  CHECK(data::kshot_sample(d, 0, 1).empty());
  CHECK(data::kshot_sample(d, 3, 1) == k3);
  CHECK(data::kshot_sample(d, 3, 2) != k3);
  try {
    data::kshot_sample(d, 7, 1);
    FAIL("expected DataError");
  } catch (const DataError& e) {
    CHECK(std::string(e.what()).find("class 5") != std::string::npos);
  }
}

TEST_CASE("stratified split") {
  auto d = toy(5, {0, 1, 2}, data::Domain::Source);
  auto s = data::stratified_split(d, 2, 3);
  CHECK(s.source.size() == 6);
  CHECK(s.target.size() == 9);
  std::map<int, int> per;
  for (int l : s.source.labels) ++per[l];
  for (auto [c, n] : per) CHECK(n == 2);
}

TEST_CASE("minibatch composition") {
  auto src = toy(10, {0, 1}, data::Domain::Source);
  auto tgt = toy(10, {2, 3}, data::Domain::Target);
  data::StreamSet s;
  s.source = &src;
  s.target = &tgt;
  s.source_stream = data::Stream({0, 1, 2, 3, 4, 5, 6, 7, 8, 9}, make_stream(1, "a"));
  s.target_unlabelled = data::Stream({0, 1, 2, 3, 4, 5, 6, 7, 8, 9, 10, 11}, make_stream(1, "b"));
  s.target_labelled = data::Stream({12, 13}, make_stream(1, "c"));

  auto b = data::make_minibatch(s, 64);
  CHECK(b.count(data::Domain::Source) == 32);
  CHECK(b.count(data::Domain::Target) == 32);
  CHECK(b.labelled_rows_of(data::Domain::Target).empty());
  for (auto r : b.rows_of(data::Domain::Target)) CHECK(b.labels[r] == -1);

  auto two = data::make_minibatch(s, 2);
  CHECK(two.count(data::Domain::Source) == 1);
  CHECK(two.count(data::Domain::Target) == 1);

  auto semi = data::make_minibatch(s, 8, 2);
  auto lab = semi.labelled_rows_of(data::Domain::Target);
  CHECK(lab.size() == 2);
  for (auto r : lab) CHECK(semi.origin[r] >= 12);

  CHECK_THROWS_AS(data::make_minibatch(s, 7), ConfigError);
  CHECK_THROWS_AS(data::make_minibatch(s, 0), ConfigError);

  data::Stream only({0, 1, 2}, make_stream(1, "d"));
  auto sb = data::make_single_domain_batch(src, only, 6, true);
  CHECK(sb.count(data::Domain::Source) == 6);
  CHECK(sb.count(data::Domain::Target) == 0);
}

TEST_CASE("stream reshuffles every pass") {
  data::Stream s({0, 1, 2, 3, 4, 5, 6, 7}, make_stream(3, "s"));
  std::vector<std::size_t> first, second;
  for (int i = 0; i < 8; ++i) first.push_back(s.next());
  for (int i = 0; i < 8; ++i) second.push_back(s.next());
  auto a = first, b = second;
  std::sort(a.begin(), a.end());
  std::sort(b.begin(), b.end());
  CHECK(a == std::vector<std::size_t>{0, 1, 2, 3, 4, 5, 6, 7});
  CHECK(a == b);
  CHECK(first != second);
}

TEST_CASE("synthetic generator") {
  data::SynthSpec spec;
  spec.noise = 0.0;
  spec.distortion = 0.0;
  auto s = data::synth_two_domain(spec, 4);
  for (std::size_t i = 0; i < s.source.size(); ++i)
    for (std::size_t j = 0; j < s.source.size(); ++j)
      if (s.source.labels[i] == s.source.labels[j]) CHECK(s.source.samples.row(i)[0] == s.source.samples.row(j)[0]);

  spec = {};
  auto a = data::synth_two_domain(spec, 9), b = data::synth_two_domain(spec, 9);
  CHECK(a.source.samples == b.source.samples);
  CHECK(a.target.samples == b.target.samples);
  CHECK(a.target.labels == b.target.labels);

  // disjoint label spaces and distinct factor patterns per class
  std::set<int> sl(a.source.labels.begin(), a.source.labels.end());
  for (int l : a.target.labels) CHECK(sl.count(l) == 0);
  std::map<int, std::vector<double>> pattern;
  for (const auto* d : {&a.source, &a.target})
    for (std::size_t i = 0; i < d->size(); ++i) {
      auto r = d->factors->row(i);
      std::vector<double> v(r.begin(), r.end());
      auto [it, fresh] = pattern.emplace(d->labels[i], v);
      if (!fresh) CHECK(it->second == v);
    }
  std::set<std::vector<double>> distinct;
  for (auto& [c, v] : pattern) distinct.insert(v);
  CHECK(distinct.size() == pattern.size());

  data::SynthSpec bad;
  bad.source_patterns = {{1, 0, 0, 0, 0, 0}, {0, 1, 0, 0, 0, 0}, {0, 0, 1, 0, 0, 0}, {0, 0, 0, 1, 0, 0}};
  bad.target_patterns = {{1, 0, 0, 0, 0, 0}, {1, 1, 0, 0, 0, 0}, {1, 0, 1, 0, 0, 0}, {1, 0, 0, 1, 0, 0}};
  CHECK_THROWS_AS(data::synth_two_domain(bad, 1), ConfigError);
}

TEST_CASE("synthetic factors determine the class") {
  // nearest-pattern probe on the ground-truth factors recovers every label
  data::SynthSpec spec;
  spec.factors = 6;
  spec.samples_per_class = 50;
  auto s = data::synth_two_domain(spec, 5);
  for (const auto* d : {&s.source, &s.target}) {
    std::map<std::vector<double>, int> lookup;
    for (std::size_t i = 0; i < d->size(); ++i) {
      auto r = d->factors->row(i);
      lookup.emplace(std::vector<double>(r.begin(), r.end()), d->labels[i]);
    }
    std::size_t correct = 0;
    for (std::size_t i = 0; i < d->size(); ++i) {
      auto r = d->factors->row(i);
      correct += lookup.at(std::vector<double>(r.begin(), r.end())) == d->labels[i];
    }
    CHECK(correct == d->size());
  }
}

TEST_CASE("dataset validation") {
  auto d = toy(2, {0, 1}, data::Domain::Source);
  CHECK_NOTHROW(d.validate());
  d.labels[0] = 5;
  CHECK_THROWS_AS(d.validate(), DataError);
  CHECK(toy(2, {3, 8}, data::Domain::Source).class_index(8) == 1);
}
