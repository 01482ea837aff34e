#include "cfsm/model.hpp"

#include <cmath>
#include <fstream>
#include <sstream>

#include "json.hpp"

#include "cfsm/kernels.hpp"

namespace cfsm::model {

using nlohmann::json;

namespace {

constexpr int kCheckpointVersion = 1;

Layer make_layer(std::size_t in, std::size_t out) { return {Matrix(out, in), Matrix(1, out)}; }

void init_layer(Layer& l, Rng& rng) {
  const double fan_in = static_cast<double>(l.w.cols());
  const double fan_out = static_cast<double>(l.w.rows());
  const double bound = std::sqrt(6.0 / (fan_in + fan_out));
  std::uniform_real_distribution<double> u(-bound, bound);
  for (double& v : l.w.values()) v = u(rng);
}

LayerVars bind_layer(ad::Tape& t, const Layer& l, const std::string& name) {
  return {t.leaf(l.w, name + ".w"), t.leaf(l.b, name + ".b")};
}

Layer layer_grads(const LayerVars& v) { return {v.w.grad(), v.b.grad()}; }

bool layers_equal(const Layer& a, const Layer& b) { return a.w == b.w && a.b == b.b; }

}  // namespace

void ArchSpec::validate() const {
  if (input_dim < 1) throw ConfigError("arch: input_dim must be >= 1");
  for (std::size_t h : hidden)
    if (h < 1) throw ConfigError("arch: hidden widths must be >= 1");
  if (feature_dim < 1) throw ConfigError("arch: feature_dim must be >= 1");
  if (cfs_dim < 1) throw ConfigError("arch: cfs_dim must be >= 1");
  if (source_classes < 2) throw ConfigError("arch: source_classes must be >= 2");
  if (target_classes == 1) throw ConfigError("arch: target_classes must be 0 or >= 2");
}

std::size_t ArchSpec::parameter_count() const {
  std::size_t n = 0;
  std::size_t in = input_dim;
  for (std::size_t h : hidden) {
    n += h * in + h;
    in = h;
  }
  n += feature_dim * in + feature_dim;
  n += cfs_dim * feature_dim + cfs_dim;
  n += source_classes * cfs_dim + source_classes;
  if (target_classes > 0) n += target_classes * cfs_dim + target_classes;
  if (decoder) n += feature_dim * cfs_dim + feature_dim;
  return n;
}

void ModelParams::for_each(const std::function<void(const std::string&, Matrix&)>& fn) {
  for (std::size_t i = 0; i < extractor.size(); ++i) {
    fn("extractor." + std::to_string(i) + ".w", extractor[i].w);
    fn("extractor." + std::to_string(i) + ".b", extractor[i].b);
  }
  fn("cfs.w", cfs.w);
  fn("cfs.b", cfs.b);
  fn("source.w", source.w);
  fn("source.b", source.b);
  if (target) {
    fn("target.w", target->w);
    fn("target.b", target->b);
  }
  if (decoder) {
    fn("decoder.w", decoder->w);
    fn("decoder.b", decoder->b);
  }
}

void ModelParams::visit(const std::function<void(const std::string&, const Matrix&)>& fn) const {
  const_cast<ModelParams*>(this)->for_each(
      [&](const std::string& name, Matrix& m) { fn(name, static_cast<const Matrix&>(m)); });
}

std::size_t ModelParams::parameter_count() const {
  std::size_t n = 0;
  visit([&](const std::string&, const Matrix& m) { n += m.size(); });
  return n;
}

bool ModelParams::all_finite() const {
  bool ok = true;
  visit([&](const std::string&, const Matrix& m) { ok = ok && m.all_finite(); });
  return ok;
}

bool operator==(const ModelParams& a, const ModelParams& b) {
  if (!(a.arch == b.arch) || a.extractor.size() != b.extractor.size()) return false;
  for (std::size_t i = 0; i < a.extractor.size(); ++i)
    if (!layers_equal(a.extractor[i], b.extractor[i])) return false;
  if (!layers_equal(a.cfs, b.cfs) || !layers_equal(a.source, b.source)) return false;
  if (a.target.has_value() != b.target.has_value()) return false;
  if (a.target && !layers_equal(*a.target, *b.target)) return false;
  if (a.decoder.has_value() != b.decoder.has_value()) return false;
  if (a.decoder && !layers_equal(*a.decoder, *b.decoder)) return false;
  return true;
}

ModelParams zeros(const ArchSpec& arch) {
  arch.validate();
  ModelParams p;
  p.arch = arch;
  std::size_t in = arch.input_dim;
  for (std::size_t h : arch.hidden) {
    p.extractor.push_back(make_layer(in, h));
    in = h;
  }
  p.extractor.push_back(make_layer(in, arch.feature_dim));
  p.cfs = make_layer(arch.feature_dim, arch.cfs_dim);
  p.source = make_layer(arch.cfs_dim, arch.source_classes);
  if (arch.target_classes > 0) p.target = make_layer(arch.cfs_dim, arch.target_classes);
  if (arch.decoder) p.decoder = make_layer(arch.cfs_dim, arch.feature_dim);
  return p;
}

ModelParams initialise(const ArchSpec& arch, Rng& rng) {
  ModelParams p = zeros(arch);
  for (Layer& l : p.extractor) init_layer(l, rng);
  init_layer(p.cfs, rng);
  init_layer(p.source, rng);
  if (p.target) init_layer(*p.target, rng);
  if (p.decoder) init_layer(*p.decoder, rng);
  return p;
}

BoundParams bind(ad::Tape& tape, const ModelParams& p) {
  BoundParams b;
  for (std::size_t i = 0; i < p.extractor.size(); ++i)
    b.extractor.push_back(bind_layer(tape, p.extractor[i], "extractor." + std::to_string(i)));
  b.cfs = bind_layer(tape, p.cfs, "cfs");
  b.source = bind_layer(tape, p.source, "source");
  if (p.target) b.target = bind_layer(tape, *p.target, "target");
  if (p.decoder) b.decoder = bind_layer(tape, *p.decoder, "decoder");
  return b;
}

ModelParams collect_grads(const BoundParams& bound, const ModelParams& shape) {
  ModelParams g;
  g.arch = shape.arch;
  for (const LayerVars& l : bound.extractor) g.extractor.push_back(layer_grads(l));
  g.cfs = layer_grads(bound.cfs);
  g.source = layer_grads(bound.source);
  if (bound.target) g.target = layer_grads(*bound.target);
  if (bound.decoder) g.decoder = layer_grads(*bound.decoder);
  return g;
}

ad::Var affine(ad::Var x, const LayerVars& layer) {
  require_shape(x.cols() == layer.w.cols(), "affine", x.value(), layer.w.value());
  return ad::add_rowvec(ad::matmul_nt(x, layer.w), layer.b);
}

ad::Var feature_extract(ad::Var x, const BoundParams& p) {
  ad::Var h = x;
  for (const LayerVars& l : p.extractor) h = ad::relu(affine(h, l));
  return h;
}

CfsOutput cfs_forward(ad::Var f, const LayerVars& cfs) {
  ad::Var z = affine(f, cfs);
  return {z, ad::sigmoid(z)};
}

ad::Var classify(ad::Var z, const LayerVars& head) { return affine(z, head); }

ad::Var ae_reconstruct(ad::Var fc, const std::optional<LayerVars>& decoder) {
  if (!decoder) throw ConfigError("AE reconstruction requested but the model has no decoder head");
  return affine(fc, *decoder);
}

ad::Var reconstruction_loss(ad::Var f_hat, ad::Var f) {
  ad::Var diff = ad::sub(f_hat, ad::stop_gradient(f));
  return ad::mean(ad::mul(diff, diff));
}

ForwardValues forward(const ModelParams& p, const Matrix& x) {
  if (x.cols() != p.arch.input_dim) {
    throw DimensionError("input has " + std::to_string(x.cols()) + " columns, model expects " +
                         std::to_string(p.arch.input_dim));
  }
  ad::Tape t;
  auto cst = [&](const Layer& l) { return LayerVars{t.constant(l.w), t.constant(l.b)}; };
  BoundParams b;
  for (const Layer& l : p.extractor) b.extractor.push_back(cst(l));
  b.cfs = cst(p.cfs);
  b.source = cst(p.source);
  if (p.target) b.target = cst(*p.target);
  ad::Var f = feature_extract(t.constant(x), b);
  CfsOutput c = cfs_forward(f, b.cfs);
  ForwardValues out{f.value(), c.z.value(), c.fc.value(), classify(c.z, b.source).value(), {}};
  if (b.target) out.target_logits = classify(c.z, *b.target).value();
  return out;
}

std::string checkpoint_json(const ModelParams& p) {
  json j;
  j["format"] = "cfsm-checkpoint";
  j["version"] = kCheckpointVersion;
  j["arch"] = {{"input_dim", p.arch.input_dim},
               {"hidden", p.arch.hidden},
               {"feature_dim", p.arch.feature_dim},
               {"cfs_dim", p.arch.cfs_dim},
               {"source_classes", p.arch.source_classes},
               {"target_classes", p.arch.target_classes},
               {"decoder", p.arch.decoder}};
  json params = json::array();
  p.visit([&](const std::string& name, const Matrix& m) {
    params.push_back({{"name", name},
                      {"rows", m.rows()},
                      {"cols", m.cols()},
                      {"data", std::vector<double>(m.values().begin(), m.values().end())}});
  });
  j["params"] = std::move(params);
  return j.dump();
}

ModelParams checkpoint_from_json(const std::string& text) {
  json j;
  try {
    j = json::parse(text);
  } catch (const json::exception& e) {
    throw FormatError(std::string("checkpoint is not valid JSON: ") + e.what());
  }
  if (!j.is_object() || !j.contains("format") || j["format"] != "cfsm-checkpoint")
    throw FormatError("not a cfsm checkpoint");
  if (!j.contains("version") || j["version"] != kCheckpointVersion)
    throw FormatError("unsupported checkpoint version " + (j.contains("version") ? j["version"].dump() : "(none)"));
  try {
    const json& a = j.at("arch");
    ArchSpec arch;
    arch.input_dim = a.at("input_dim").get<std::size_t>();
    arch.hidden = a.at("hidden").get<std::vector<std::size_t>>();
    arch.feature_dim = a.at("feature_dim").get<std::size_t>();
    arch.cfs_dim = a.at("cfs_dim").get<std::size_t>();
    arch.source_classes = a.at("source_classes").get<std::size_t>();
    arch.target_classes = a.at("target_classes").get<std::size_t>();
    arch.decoder = a.at("decoder").get<bool>();
    ModelParams p = zeros(arch);
    const json& params = j.at("params");
    std::size_t i = 0;
    p.for_each([&](const std::string& name, Matrix& m) {
      if (i >= params.size()) throw FormatError("checkpoint is missing parameter " + name);
      const json& e = params[i++];
      if (e.at("name").get<std::string>() != name)
        throw FormatError("checkpoint parameter order mismatch at " + name);
      auto data = e.at("data").get<std::vector<double>>();
      if (e.at("rows").get<std::size_t>() != m.rows() || e.at("cols").get<std::size_t>() != m.cols() ||
          data.size() != m.size())
        throw FormatError("checkpoint parameter " + name + " has the wrong shape");
      m = Matrix(m.rows(), m.cols(), std::move(data));
    });
    if (i != params.size()) throw FormatError("checkpoint has extra parameters");
    return p;
  } catch (const json::exception& e) {
    throw FormatError(std::string("malformed checkpoint: ") + e.what());
  }
}

void save_checkpoint(const ModelParams& p, const std::string& path) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw DataError("cannot write checkpoint " + path);
  out << checkpoint_json(p);
}

ModelParams load_checkpoint(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw DataError("cannot read checkpoint " + path);
  std::stringstream ss;
  ss << in.rdbuf();
  return checkpoint_from_json(ss.str());
}

}  // namespace cfsm::model
