#include "reed/checkpoint.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <sstream>

#include "reed/error.hpp"

namespace reed::io {

namespace {

using nn::Layer;
using nn::LayerStack;
using nn::Matrix;

std::string join(const std::string& path, const std::string& key) { return path.empty() ? key : path + "." + key; }
std::string index(const std::string& path, std::size_t i) { return path + "[" + std::to_string(i) + "]"; }

void expect_object(const Json& j, const std::string& path) {
  if (!j.is_object()) throw FormatError(path.empty() ? "<root>" : path, "expected an object");
}

const Json& require(const Json& j, const std::string& key, const std::string& path) {
  expect_object(j, path);
  auto it = j.find(key);
  if (it == j.end()) throw FormatError(join(path, key), "missing");
  return *it;
}

void check_version(const Json& j) {
  const Json& v = require(j, "format_version", "");
  if (!v.is_number_integer() || v.get<std::int64_t>() != kFormatVersion)
    throw FormatError("format_version", "unsupported version " + v.dump() + " (expected " +
                                            std::to_string(kFormatVersion) + ")");
}

// ---- scalar codecs -------------------------------------------------------

Json encode(double v) {
  if (!std::isfinite(v)) throw NumericError("cannot serialize a non-finite value");
  return v;
}
Json encode(int v) { return v; }
Json encode(bool v) { return v; }
Json encode(std::size_t v) { return v; }
Json encode(const std::vector<std::size_t>& v) { return v; }
Json encode(const std::vector<int>& v) { return v; }
Json encode(data::NoiseKind k) { return data::to_string(k); }
Json encode(data::AugmentationSpec s);
Json encode(cred::EmOptions s);

void decode(const Json& j, const std::string& path, double& out) {
  if (!j.is_number()) throw FormatError(path, "expected a number");
  const double v = j.get<double>();
  if (!std::isfinite(v)) throw FormatError(path, "non-finite number");
  out = v;
}
void decode(const Json& j, const std::string& path, int& out) {
  if (!j.is_number_integer()) throw FormatError(path, "expected an integer");
  const auto v = j.get<std::int64_t>();
  if (v < std::numeric_limits<int>::min() || v > std::numeric_limits<int>::max())
    throw FormatError(path, "integer out of range");
  out = static_cast<int>(v);
}
void decode(const Json& j, const std::string& path, bool& out) {
  if (!j.is_boolean()) throw FormatError(path, "expected true or false");
  out = j.get<bool>();
}
void decode(const Json& j, const std::string& path, std::size_t& out) {
  if (!j.is_number_unsigned()) throw FormatError(path, "expected a non-negative integer");
  out = j.get<std::size_t>();
}
void decode(const Json& j, const std::string& path, std::vector<std::size_t>& out) {
  if (!j.is_array()) throw FormatError(path, "expected an array");
  std::vector<std::size_t> v(j.size());
  for (std::size_t i = 0; i < j.size(); ++i) decode(j[i], index(path, i), v[i]);
  out = std::move(v);
}
void decode(const Json& j, const std::string& path, std::vector<int>& out) {
  if (!j.is_array()) throw FormatError(path, "expected an array");
  std::vector<int> v(j.size());
  for (std::size_t i = 0; i < j.size(); ++i) decode(j[i], index(path, i), v[i]);
  out = std::move(v);
}
void decode(const Json& j, const std::string& path, data::NoiseKind& out) {
  if (!j.is_string()) throw FormatError(path, "expected a string");
  try {
    out = data::parse_noise_kind(j.get<std::string>());
  } catch (const ConfigError& e) {
    throw FormatError(path, e.what());
  }
}
void decode(const Json& j, const std::string& path, data::AugmentationSpec& out);
void decode(const Json& j, const std::string& path, cred::EmOptions& out);

// ---- struct field tables -------------------------------------------------

template <class F>
void fields(data::BlobSpec& s, F&& f) {
  f("classes", s.classes);
  f("per_class", s.per_class);
  f("dim", s.dim);
  f("separation", s.separation);
  f("sigma", s.sigma);
}

template <class F>
void fields(data::NoiseSpec& s, F&& f) {
  f("kind", s.kind);
  f("ratio", s.ratio);
  f("pair_map", s.pair_map);
  f("exclude_true_class", s.exclude_true_class);
}

template <class F>
void fields(data::AugmentationSpec& s, F&& f) {
  f("jitter_sigma", s.jitter_sigma);
  f("scale_lo", s.scale_lo);
  f("scale_hi", s.scale_hi);
  f("drop_prob", s.drop_prob);
}

template <class F>
void fields(cred::EmOptions& s, F&& f) {
  f("tol", s.tol);
  f("max_iter", s.max_iter);
  f("variance_floor", s.variance_floor);
  f("restarts", s.restarts);
}

template <class F>
void fields(ssrl::ContrastiveConfig& s, F&& f) {
  f("temperature", s.temperature);
  f("batch_size", s.batch_size);
  f("epochs", s.epochs);
  f("augmentation", s.augmentation);
  f("learning_rate", s.learning_rate);
  f("eta_min", s.eta_min);
  f("hidden", s.hidden);
  f("projection_dim", s.projection_dim);
}

template <class F>
void fields(cred::Stage2Config& s, F&& f) {
  f("epochs", s.classifier.epochs);
  f("learning_rate", s.classifier.learning_rate);
  f("momentum", s.classifier.momentum);
  f("batch_size", s.classifier.batch_size);
  f("em", s.em);
  f("tau_clean", s.tau_clean);
  f("tau_right", s.tau_right);
}

template <class F>
void fields(semi::MixMatchConfig& s, F&& f) {
  f("temperature", s.temperature);
  f("alpha", s.alpha);
  f("lambda_u", s.lambda_u);
  f("lambda_u_rampup_epochs", s.lambda_u_rampup_epochs);
  f("k_augment", s.k_augment);
  f("batch_size", s.batch_size);
  f("epochs", s.epochs);
  f("learning_rate", s.learning_rate);
  f("eta_min", s.eta_min);
  f("lambda_lu", s.lambda_lu);
  f("lambda_uu", s.lambda_uu);
  f("tau_c", s.tau_c);
  f("uu_ordered_pairs", s.uu_ordered_pairs);
  f("use_cbs", s.use_cbs);
  f("use_gsr", s.use_gsr);
  f("ema_decay", s.ema_decay);
  f("guess_with_ema", s.guess_with_ema);
  f("augmentation", s.augmentation);
}

template <class F>
void fields(SupervisedConfig& s, F&& f) {
  f("epochs", s.epochs);
  f("learning_rate", s.learning_rate);
  f("batch_size", s.batch_size);
}

template <class T>
Json encode_struct(T s) {
  Json j = Json::object();
  fields(s, [&](const char* key, const auto& v) { j[key] = encode(v); });
  return j;
}

template <class T>
void decode_struct(const Json& j, const std::string& path, T& out) {
  expect_object(j, path);
  T s = out;
  std::vector<std::string> known;
  fields(s, [&](const char* key, auto&) { known.emplace_back(key); });
  for (const auto& item : j.items())
    if (std::find(known.begin(), known.end(), item.key()) == known.end())
      throw FormatError(join(path, item.key()), "unknown key");
  fields(s, [&](const char* key, auto& v) {
    if (auto it = j.find(key); it != j.end()) decode(*it, join(path, key), v);
  });
  out = std::move(s);
}

Json encode(data::AugmentationSpec s) { return encode_struct(s); }
Json encode(cred::EmOptions s) { return encode_struct(s); }
void decode(const Json& j, const std::string& path, data::AugmentationSpec& out) { decode_struct(j, path, out); }
void decode(const Json& j, const std::string& path, cred::EmOptions& out) { decode_struct(j, path, out); }

// ---- model tensors -------------------------------------------------------

Json encode_values(std::span<const double> v) {
  Json a = Json::array();
  for (double x : v) a.push_back(encode(x));
  return a;
}

Json shapes_of(const LayerStack& s) {
  Json a = Json::array();
  for (const Layer& l : s) a.push_back(Json::array({l.in(), l.out()}));
  return a;
}

Json encode_stack(const LayerStack& s) {
  Json a = Json::array();
  for (const Layer& l : s) a.push_back(Json{{"weight", encode_values(l.weight.values())}, {"bias", encode_values(l.bias.values())}});
  return a;
}

using Shapes = std::vector<std::pair<std::size_t, std::size_t>>;

Shapes decode_shapes(const Json& j, const std::string& path) {
  if (!j.is_array()) throw FormatError(path, "expected an array of [in, out] pairs");
  Shapes out;
  for (std::size_t i = 0; i < j.size(); ++i) {
    const std::string p = index(path, i);
    if (!j[i].is_array() || j[i].size() != 2) throw FormatError(p, "expected [in, out]");
    std::size_t in = 0;
    std::size_t width = 0;
    decode(j[i][0], p, in);
    decode(j[i][1], p, width);
    if (in == 0 || width == 0) throw FormatError(p, "zero width");
    out.emplace_back(in, width);
  }
  return out;
}

Matrix decode_matrix(const Json& j, const std::string& path, std::size_t rows, std::size_t cols) {
  if (!j.is_array()) throw FormatError(path, "expected an array");
  if (j.size() != rows * cols)
    throw FormatError(path, "expected " + std::to_string(rows * cols) + " values for shape " + std::to_string(rows) +
                                "x" + std::to_string(cols) + ", found " + std::to_string(j.size()));
  std::vector<double> v(j.size());
  for (std::size_t i = 0; i < v.size(); ++i) decode(j[i], index(path, i), v[i]);
  return Matrix(rows, cols, std::move(v));
}

LayerStack decode_stack(const Json& j, const std::string& path, const Shapes& shapes) {
  if (!j.is_array()) throw FormatError(path, "expected an array of layers");
  if (j.size() != shapes.size())
    throw FormatError(path, "shape metadata lists " + std::to_string(shapes.size()) + " layers, found " +
                                std::to_string(j.size()));
  LayerStack out;
  for (std::size_t i = 0; i < j.size(); ++i) {
    const std::string p = index(path, i);
    const auto [in, width] = shapes[i];
    Layer l;
    l.weight = decode_matrix(require(j[i], "weight", p), join(p, "weight"), in, width);
    l.bias = decode_matrix(require(j[i], "bias", p), join(p, "bias"), 1, width);
    out.push_back(std::move(l));
  }
  return out;
}

}  // namespace

Json to_json(const ModelCheckpoint& m) {
  m.params.validate();
  Json j;
  j["format_version"] = kFormatVersion;
  j["shapes"] = {{"encoder", shapes_of(m.params.encoder)}, {"classifier", shapes_of(m.params.classifier)}};
  j["encoder"] = encode_stack(m.params.encoder);
  j["classifier"] = encode_stack(m.params.classifier);
  if (m.ema) {
    if (!(m.ema->shadow.encoder.size() == m.params.encoder.size() &&
          m.ema->shadow.classifier.size() == m.params.classifier.size() &&
          shapes_of(m.ema->shadow.encoder) == j["shapes"]["encoder"] &&
          shapes_of(m.ema->shadow.classifier) == j["shapes"]["classifier"]))
      throw ConfigError("checkpoint: EMA shadow shape differs from the model");
    j["ema"] = {{"decay", encode(m.ema->decay)},
                {"encoder", encode_stack(m.ema->shadow.encoder)},
                {"classifier", encode_stack(m.ema->shadow.classifier)}};
  } else {
    j["ema"] = nullptr;
  }
  return j;
}

ModelCheckpoint model_from_json(const Json& j) {
  check_version(j);
  const Json& shapes = require(j, "shapes", "");
  const Shapes enc_shapes = decode_shapes(require(shapes, "encoder", "shapes"), "shapes.encoder");
  const Shapes cls_shapes = decode_shapes(require(shapes, "classifier", "shapes"), "shapes.classifier");
  ModelCheckpoint m;
  m.params.encoder = decode_stack(require(j, "encoder", ""), "encoder", enc_shapes);
  m.params.classifier = decode_stack(require(j, "classifier", ""), "classifier", cls_shapes);
  try {
    m.params.validate();
  } catch (const ConfigError& e) {
    throw FormatError("shapes", e.what());
  }
  const Json& ema = require(j, "ema", "");
  if (!ema.is_null()) {
    nn::EmaState s;
    decode(require(ema, "decay", "ema"), "ema.decay", s.decay);
    if (!(s.decay >= 0.0 && s.decay < 1.0)) throw FormatError("ema.decay", "must be in [0, 1)");
    s.shadow.encoder = decode_stack(require(ema, "encoder", "ema"), "ema.encoder", enc_shapes);
    s.shadow.classifier = decode_stack(require(ema, "classifier", "ema"), "ema.classifier", cls_shapes);
    m.ema = std::move(s);
  }
  return m;
}

Json to_json(const cred::Gmm1D& g) {
  g.validate();
  return Json{{"format_version", kFormatVersion},
              {"means", {encode(g.means[0]), encode(g.means[1])}},
              {"variances", {encode(g.variances[0]), encode(g.variances[1])}},
              {"weights", {encode(g.weights[0]), encode(g.weights[1])}}};
}

cred::Gmm1D gmm_from_json(const Json& j) {
  check_version(j);
  cred::Gmm1D g;
  auto pair = [&](const char* key, std::array<double, 2>& out) {
    const Json& a = require(j, key, "");
    if (!a.is_array() || a.size() != 2) throw FormatError(key, "expected two values");
    decode(a[0], index(key, 0), out[0]);
    decode(a[1], index(key, 1), out[1]);
  };
  pair("means", g.means);
  pair("variances", g.variances);
  pair("weights", g.weights);
  try {
    g.validate();
  } catch (const ConfigError& e) {
    throw FormatError("means", e.what());
  }
  return g;
}

Json to_json(const GmmPair& g) {
  return Json{{"format_version", kFormatVersion},
              {"loss_gmm", g.loss ? to_json(*g.loss) : Json(nullptr)},
              {"confidence_gmm", g.confidence ? to_json(*g.confidence) : Json(nullptr)}};
}

GmmPair gmm_pair_from_json(const Json& j) {
  check_version(j);
  GmmPair g;
  auto one = [&](const char* key) -> std::optional<cred::Gmm1D> {
    const Json& v = require(j, key, "");
    if (v.is_null()) return std::nullopt;
    try {
      return gmm_from_json(v);
    } catch (const FormatError& e) {
      throw FormatError(join(key, e.field()), e.what());
    }
  };
  g.loss = one("loss_gmm");
  g.confidence = one("confidence_gmm");
  return g;
}

Json to_json(const cred::TransferredLabels& t) {
  t.validate();
  Json labeled = Json::array();
  for (const auto& e : t.labeled) labeled.push_back(Json::array({e.index, e.label, cred::to_string(e.origin)}));
  return Json{{"format_version", kFormatVersion},
              {"num_classes", t.num_classes},
              {"num_samples", t.num_samples},
              {"tau_clean", encode(t.tau_clean)},
              {"tau_right", encode(t.tau_right)},
              {"labeled", labeled},
              {"unlabeled", t.unlabeled}};
}

cred::TransferredLabels transfer_from_json(const Json& j) {
  check_version(j);
  cred::TransferredLabels t;
  decode(require(j, "num_classes", ""), "num_classes", t.num_classes);
  decode(require(j, "num_samples", ""), "num_samples", t.num_samples);
  decode(require(j, "tau_clean", ""), "tau_clean", t.tau_clean);
  decode(require(j, "tau_right", ""), "tau_right", t.tau_right);
  const Json& labeled = require(j, "labeled", "");
  if (!labeled.is_array()) throw FormatError("labeled", "expected an array");
  for (std::size_t i = 0; i < labeled.size(); ++i) {
    const std::string p = index("labeled", i);
    const Json& e = labeled[i];
    if (!e.is_array() || e.size() != 3 || !e[2].is_string()) throw FormatError(p, "expected [index, label, origin]");
    cred::TransferredLabels::Entry entry;
    decode(e[0], p, entry.index);
    decode(e[1], p, entry.label);
    try {
      entry.origin = cred::parse_origin(e[2].get<std::string>());
    } catch (const ConfigError& err) {
      throw FormatError(p, err.what());
    }
    t.labeled.push_back(entry);
  }
  decode(require(j, "unlabeled", ""), "unlabeled", t.unlabeled);
  try {
    t.validate();
  } catch (const ConfigError& e) {
    throw FormatError("labeled", e.what());
  }
  return t;
}

Json to_json(const ExperimentConfig& c) {
  c.validate();
  return Json{{"format_version", kFormatVersion},
              {"seed", c.seed},
              {"data", encode_struct(c.data)},
              {"test_fraction", encode(c.test_fraction)},
              {"noise", encode_struct(c.noise)},
              {"ssrl", encode_struct(c.ssrl)},
              {"stage2", encode_struct(c.stage2)},
              {"stage3", encode_struct(c.stage3)},
              {"supervised", encode_struct(c.supervised)},
              {"regime", to_string(c.regime)}};
}

ExperimentConfig config_from_json(const Json& j) {
  expect_object(j, "");
  static const char* const kKeys[] = {"format_version", "seed",       "data",   "test_fraction", "noise",
                                      "ssrl",           "stage2",     "stage3", "supervised",    "regime"};
  for (const auto& item : j.items())
    if (std::find(std::begin(kKeys), std::end(kKeys), item.key()) == std::end(kKeys))
      throw FormatError(item.key(), "unknown key");
  if (j.contains("format_version")) check_version(j);

  ExperimentConfig c;
  const Json& seed = require(j, "seed", "");
  if (!seed.is_number_unsigned()) throw FormatError("seed", "expected a non-negative integer");
  c.seed = seed.get<std::uint64_t>();
  if (auto it = j.find("data"); it != j.end()) decode_struct(*it, "data", c.data);
  if (auto it = j.find("test_fraction"); it != j.end()) decode(*it, "test_fraction", c.test_fraction);
  if (auto it = j.find("noise"); it != j.end()) decode_struct(*it, "noise", c.noise);
  if (auto it = j.find("ssrl"); it != j.end()) decode_struct(*it, "ssrl", c.ssrl);
  if (auto it = j.find("stage2"); it != j.end()) decode_struct(*it, "stage2", c.stage2);
  if (auto it = j.find("stage3"); it != j.end()) decode_struct(*it, "stage3", c.stage3);
  if (auto it = j.find("supervised"); it != j.end()) decode_struct(*it, "supervised", c.supervised);
  if (auto it = j.find("regime"); it != j.end()) {
    if (!it->is_string()) throw FormatError("regime", "expected a string");
    try {
      c.regime = parse_regime(it->get<std::string>());
    } catch (const ConfigError& e) {
      throw FormatError("regime", e.what());
    }
  }
  c.validate();
  return c;
}

std::string dump(const Json& j) { return j.dump(2) + "\n"; }

void save_json(const Json& j, const std::string& path) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw ConfigError("cannot open '" + path + "' for writing");
  out << dump(j);
  if (!out) throw ConfigError("failed writing '" + path + "'");
}

Json load_json(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw ConfigError("cannot open '" + path + "'");
  std::stringstream buf;
  buf << in.rdbuf();
  try {
    return Json::parse(buf.str());
  } catch (const Json::parse_error& e) {
    throw FormatError("<document>", path + ": " + e.what());
  }
}

void save_model(const ModelCheckpoint& m, const std::string& path) { save_json(to_json(m), path); }
ModelCheckpoint load_model(const std::string& path) { return model_from_json(load_json(path)); }
void save_transfer(const cred::TransferredLabels& t, const std::string& path) { save_json(to_json(t), path); }
cred::TransferredLabels load_transfer(const std::string& path) { return transfer_from_json(load_json(path)); }
void save_config(const ExperimentConfig& c, const std::string& path) { save_json(to_json(c), path); }
ExperimentConfig load_config(const std::string& path) { return config_from_json(load_json(path)); }

}  // namespace reed::io
