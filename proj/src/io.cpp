#include "postapprox/io.hpp"

#include "postapprox/error.hpp"
#include "postapprox/gp.hpp"
#include "postapprox/kde.hpp"
#include "postapprox/mixture.hpp"
#include "postapprox/vine.hpp"

#include <charconv>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <limits>
#include <sstream>

namespace postapprox {

using nlohmann::json;

std::string format_double(double v) {
  if (std::isnan(v)) return "nan";
  if (std::isinf(v)) return v > 0 ? "inf" : "-inf";
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.17g", v);
  return buf;
}

double parse_double(const std::string& s) {
  std::size_t b = s.find_first_not_of(" \t\r");
  std::size_t e = s.find_last_not_of(" \t\r");
  if (b == std::string::npos) throw Error(ErrorCode::Format, "empty numeric field");
  const char* first = s.data() + b;
  const char* last = s.data() + e + 1;
  if (*first == '+') ++first;
  double v = 0.0;
  const auto [ptr, ec] = std::from_chars(first, last, v);
  if (ec != std::errc() || ptr != last) throw Error(ErrorCode::Format, "not a number: '" + s + "'");
  return v;
}

namespace {

std::vector<std::string> split_line(const std::string& line) {
  std::vector<std::string> out;
  std::string field;
  std::istringstream ss(line);
  while (std::getline(ss, field, ',')) {
    const auto b = field.find_first_not_of(" \t\r\"");
    const auto e = field.find_last_not_of(" \t\r\"");
    out.push_back(b == std::string::npos ? std::string() : field.substr(b, e - b + 1));
  }
  if (!line.empty() && line.back() == ',') out.emplace_back();
  return out;
}

// write to a sibling temporary and rename, so failures leave no partial file
template <class Body>
void atomic_write(const std::string& path, Body body) {
  namespace fs = std::filesystem;
  const fs::path target(path);
  const fs::path tmp = target.string() + ".tmp";
  {
    std::ofstream f(tmp);
    if (!f) throw Error(ErrorCode::Io, "cannot write " + path);
    body(f);
    f.flush();
    if (!f) {
      std::error_code ec;
      fs::remove(tmp, ec);
      throw Error(ErrorCode::Io, "write failed for " + path);
    }
  }
  std::error_code ec;
  fs::rename(tmp, target, ec);
  if (ec) {
    fs::remove(tmp, ec);
    throw Error(ErrorCode::Io, "cannot move output into place: " + path);
  }
}

json vec_json(const Vector& v) {
  json a = json::array();
  for (Eigen::Index i = 0; i < v.size(); ++i) a.push_back(format_double(v(i)));
  return a;
}

json vec_json(const std::vector<double>& v) {
  json a = json::array();
  for (double x : v) a.push_back(format_double(x));
  return a;
}

json mat_json(const Matrix& m) {
  json data = json::array();
  for (Eigen::Index i = 0; i < m.rows(); ++i)
    for (Eigen::Index j = 0; j < m.cols(); ++j) data.push_back(format_double(m(i, j)));
  return {{"rows", m.rows()}, {"cols", m.cols()}, {"data", data}};
}

double num(const json& j) {
  if (j.is_string()) return parse_double(j.get<std::string>());
  if (j.is_number()) return j.get<double>();
  throw Error(ErrorCode::Format, "expected a numeric string");
}

Vector json_vec(const json& j) {
  if (!j.is_array()) throw Error(ErrorCode::Format, "expected an array");
  Vector v(static_cast<Eigen::Index>(j.size()));
  for (std::size_t i = 0; i < j.size(); ++i) v(static_cast<Eigen::Index>(i)) = num(j[i]);
  return v;
}

std::vector<double> json_std(const json& j) {
  const Vector v = json_vec(j);
  return {v.data(), v.data() + v.size()};
}

Matrix json_mat(const json& j) {
  const auto r = j.at("rows").get<Eigen::Index>();
  const auto c = j.at("cols").get<Eigen::Index>();
  const json& d = j.at("data");
  if (static_cast<Eigen::Index>(d.size()) != r * c) throw Error(ErrorCode::Format, "matrix size mismatch");
  Matrix m(r, c);
  for (Eigen::Index i = 0; i < r; ++i)
    for (Eigen::Index k = 0; k < c; ++k) m(i, k) = num(d[static_cast<std::size_t>(i * c + k)]);
  return m;
}

json mats_json(const std::vector<Matrix>& ms) {
  json a = json::array();
  for (const auto& m : ms) a.push_back(mat_json(m));
  return a;
}

json vecs_json(const std::vector<Vector>& vs) {
  json a = json::array();
  for (const auto& v : vs) a.push_back(vec_json(v));
  return a;
}

std::vector<Matrix> json_mats(const json& j) {
  std::vector<Matrix> out;
  for (const auto& m : j) out.push_back(json_mat(m));
  return out;
}

std::vector<Vector> json_vecs(const json& j) {
  std::vector<Vector> out;
  for (const auto& v : j) out.push_back(json_vec(v));
  return out;
}

json bounds_json(const Bounds& b) { return {{"lower", vec_json(b.lower)}, {"upper", vec_json(b.upper)}}; }
Bounds json_bounds(const json& j) { return Bounds(json_vec(j.at("lower")), json_vec(j.at("upper"))); }

const char* transform_kind_name(TransformKind k) {
  switch (k) {
    case TransformKind::Identity: return "identity";
    case TransformKind::LogShift: return "log-shift";
    case TransformKind::NegLogShift: return "neg-log-shift";
    case TransformKind::ScaledLogit: return "scaled-logit";
  }
  return "identity";
}

TransformKind transform_kind_from(const std::string& s) {
  if (s == "identity") return TransformKind::Identity;
  if (s == "log-shift") return TransformKind::LogShift;
  if (s == "neg-log-shift") return TransformKind::NegLogShift;
  if (s == "scaled-logit") return TransformKind::ScaledLogit;
  throw Error(ErrorCode::Format, "unknown transform kind '" + s + "'");
}

const char* family_1d_name(Mixture1dFamily f) {
  return f == Mixture1dFamily::Normal ? "normal" : f == Mixture1dFamily::Gamma ? "gamma" : "beta";
}

Mixture1dFamily family_1d_from(const std::string& s) {
  if (s == "normal") return Mixture1dFamily::Normal;
  if (s == "gamma") return Mixture1dFamily::Gamma;
  if (s == "beta") return Mixture1dFamily::Beta;
  throw Error(ErrorCode::Format, "unknown mixture family '" + s + "'");
}

json tail_json(const std::optional<GpdTail>& t) {
  if (!t) return nullptr;
  return {{"threshold", format_double(t->threshold)}, {"xi", format_double(t->xi)}, {"sigma", format_double(t->sigma)},
          {"q", format_double(t->q)}};
}

std::optional<GpdTail> json_tail(const json& j) {
  if (j.is_null()) return std::nullopt;
  return GpdTail{num(j.at("threshold")), num(j.at("xi")), num(j.at("sigma")), num(j.at("q"))};
}

json marginal_json(const MarginalModel& m) {
  const MarginalParts& p = m.parts();
  json j = {{"kind", to_string(p.kind)},
            {"sorted", vec_json(p.sorted)},
            {"bandwidth", format_double(p.bandwidth)},
            {"lower", format_double(p.lower)},
            {"upper", format_double(p.upper)},
            {"mirror_lower", p.mirror_lower},
            {"mirror_upper", p.mirror_upper},
            {"lower_tail", tail_json(p.lower_tail)},
            {"upper_tail", tail_json(p.upper_tail)},
            {"mixture", nullptr}};
  if (p.mixture) {
    const Mixture1d& mx = *p.mixture;
    j["mixture"] = {{"family", family_1d_name(mx.family())}, {"weights", vec_json(mx.weights())},
                    {"p1", vec_json(mx.p1())},                {"p2", vec_json(mx.p2())},
                    {"origin", format_double(mx.origin())},   {"scale", format_double(mx.scale())},
                    {"sign", format_double(mx.sign())},       {"loglik", format_double(mx.loglik())},
                    {"bic", format_double(mx.bic())}};
  }
  return j;
}

MarginalModel json_marginal(const json& j) {
  MarginalParts p;
  p.kind = marginal_kind_from_string(j.at("kind").get<std::string>());
  p.sorted = json_std(j.at("sorted"));
  p.bandwidth = num(j.at("bandwidth"));
  p.lower = num(j.at("lower"));
  p.upper = num(j.at("upper"));
  p.mirror_lower = j.at("mirror_lower").get<bool>();
  p.mirror_upper = j.at("mirror_upper").get<bool>();
  p.lower_tail = json_tail(j.at("lower_tail"));
  p.upper_tail = json_tail(j.at("upper_tail"));
  const json& mx = j.at("mixture");
  if (!mx.is_null()) {
    p.mixture.emplace(family_1d_from(mx.at("family").get<std::string>()), json_vec(mx.at("weights")), json_vec(mx.at("p1")),
                      json_vec(mx.at("p2")), num(mx.at("origin")), num(mx.at("scale")), num(mx.at("sign")),
                      num(mx.at("loglik")), num(mx.at("bic")));
  }
  return MarginalModel(std::move(p));
}

json edge_json(const VineEdge& e) {
  return {{"a", e.a},
          {"b", e.b},
          {"cond", e.cond},
          {"family", to_string(e.copula.family)},
          {"rotation", e.copula.rotation},
          {"theta", format_double(e.copula.theta)},
          {"loglik", format_double(e.copula.loglik)},
          {"aic", format_double(e.copula.aic)},
          {"slots", {e.in_a, e.in_b, e.out_a, e.out_b}}};
}

VineEdge json_edge(const json& j) {
  VineEdge e;
  e.a = j.at("a").get<int>();
  e.b = j.at("b").get<int>();
  e.cond = j.at("cond").get<std::vector<int>>();
  e.copula.family = copula_family_from_string(j.at("family").get<std::string>());
  e.copula.rotation = j.at("rotation").get<int>();
  e.copula.theta = num(j.at("theta"));
  e.copula.loglik = num(j.at("loglik"));
  e.copula.aic = num(j.at("aic"));
  e.copula.validate();
  const auto slots = j.at("slots").get<std::vector<int>>();
  if (slots.size() != 4) throw Error(ErrorCode::Format, "vine edge needs four slots");
  e.in_a = slots[0];
  e.in_b = slots[1];
  e.out_a = slots[2];
  e.out_b = slots[3];
  return e;
}

json payload_json(const DensityModel& model) {
  if (const auto* m = dynamic_cast<const KdeModel*>(&model))
    return {{"train", mat_json(m->train())}, {"bandwidth", mat_json(m->bandwidth())}};
  if (const auto* m = dynamic_cast<const GmModel*>(&model)) {
    return {{"weights", vec_json(m->weights())}, {"means", vecs_json(m->means())}, {"covs", mats_json(m->covs())},
            {"loglik", format_double(m->loglik())}, {"bic", format_double(m->bic())}};
  }
  if (const auto* m = dynamic_cast<const TgmModel*>(&model)) {
    return {{"weights", vec_json(m->weights())}, {"means", vecs_json(m->means())},
            {"covs", mats_json(m->covs())},     {"bounds", bounds_json(m->bounds())},
            {"masses", vec_json(m->masses())},  {"loglik", format_double(m->loglik())},
            {"bic", format_double(m->bic())}};
  }
  if (const auto* m = dynamic_cast<const VineModel*>(&model)) {
    json margs = json::array();
    for (const auto& mg : m->marginals()) margs.push_back(marginal_json(mg));
    json levels = json::array();
    for (const auto& lvl : m->structure().levels) {
      json edges = json::array();
      for (const auto& e : lvl) edges.push_back(edge_json(e));
      levels.push_back(edges);
    }
    return {{"marginals", margs}, {"levels", levels}};
  }
  if (const auto* m = dynamic_cast<const GpModel*>(&model)) {
    return {{"train", mat_json(m->train())}, {"alpha", vec_json(m->alpha())}, {"kernel", to_string(m->kernel())},
            {"length_scale", format_double(m->length_scale())}, {"jitter", format_double(m->jitter())}};
  }
  throw Error(ErrorCode::InvalidInput, "model kind '" + model.method() + "' cannot be serialized");
}

DensityPtr payload_model(const std::string& method, const json& p) {
  if (method == "kde") return std::make_shared<KdeModel>(json_mat(p.at("train")), json_mat(p.at("bandwidth")));
  if (method == "gmm") {
    return std::make_shared<GmModel>(json_vec(p.at("weights")), json_vecs(p.at("means")), json_mats(p.at("covs")),
                                     num(p.at("loglik")), num(p.at("bic")));
  }
  if (method == "tgmm") {
    return std::make_shared<TgmModel>(json_vec(p.at("weights")), json_vecs(p.at("means")), json_mats(p.at("covs")),
                                      json_bounds(p.at("bounds")), json_vec(p.at("masses")), num(p.at("loglik")),
                                      num(p.at("bic")));
  }
  if (method.rfind("vine-", 0) == 0) {
    std::vector<MarginalModel> margs;
    for (const auto& mg : p.at("marginals")) margs.push_back(json_marginal(mg));
    VineStructure s;
    s.dim = static_cast<int>(margs.size());
    for (const auto& lvl : p.at("levels")) {
      std::vector<VineEdge> edges;
      for (const auto& e : lvl) edges.push_back(json_edge(e));
      s.levels.push_back(std::move(edges));
    }
    auto vine = std::make_shared<VineModel>(std::move(margs), std::move(s));
    if (vine->method() != method) throw Error(ErrorCode::Format, "vine marginals do not match method " + method);
    return vine;
  }
  if (method == "gp-se" || method == "gp-matern32") {
    const GpKernel kind = gp_kernel_from_string(p.at("kernel").get<std::string>());
    return std::make_shared<GpModel>(json_mat(p.at("train")), json_vec(p.at("alpha")), kind, num(p.at("length_scale")),
                                     num(p.at("jitter")));
  }
  throw Error(ErrorCode::Format, "unknown model method '" + method + "'");
}

}  // namespace

int Table::column(const std::string& name) const {
  for (std::size_t i = 0; i < names.size(); ++i)
    if (names[i] == name) return static_cast<int>(i);
  return -1;
}

Table read_csv(const std::string& path) {
  std::ifstream f(path);
  if (!f) throw Error(ErrorCode::Io, "cannot open " + path);
  std::string line;
  Table t;
  while (std::getline(f, line)) {
    if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
    t.names = split_line(line);
    break;
  }
  if (t.names.empty()) throw Error(ErrorCode::Format, path + ": missing header");
  std::vector<std::vector<double>> rows;
  std::size_t lineno = 1;
  while (std::getline(f, line)) {
    ++lineno;
    if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
    const auto fields = split_line(line);
    if (fields.size() != t.names.size())
      throw Error(ErrorCode::Format, path + ":" + std::to_string(lineno) + ": expected " + std::to_string(t.names.size()) + " fields");
    std::vector<double> row;
    row.reserve(fields.size());
    try {
      for (const auto& s : fields) row.push_back(parse_double(s));
    } catch (const Error& e) {
      throw Error(ErrorCode::Format, path + ":" + std::to_string(lineno) + ": " + e.what());
    }
    rows.push_back(std::move(row));
  }
  t.values.resize(static_cast<Eigen::Index>(rows.size()), static_cast<Eigen::Index>(t.names.size()));
  for (std::size_t i = 0; i < rows.size(); ++i)
    for (std::size_t j = 0; j < rows[i].size(); ++j) t.values(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(j)) = rows[i][j];
  return t;
}

std::string format_csv(const Table& table) {
  if (static_cast<Eigen::Index>(table.names.size()) != table.values.cols())
    throw Error(ErrorCode::InvalidInput, "column names and values differ");
  std::ostringstream f;
  for (std::size_t j = 0; j < table.names.size(); ++j) f << (j ? "," : "") << table.names[j];
  f << '\n';
  for (Eigen::Index i = 0; i < table.values.rows(); ++i) {
    for (Eigen::Index j = 0; j < table.values.cols(); ++j) f << (j ? "," : "") << format_double(table.values(i, j));
    f << '\n';
  }
  return f.str();
}

void write_csv(const std::string& path, const Table& table) { write_text_file(path, format_csv(table)); }

SampleSet read_samples_csv(const std::string& path) {
  const Table t = read_csv(path);
  std::vector<Eigen::Index> pos;
  std::vector<std::string> names;
  int lp = -1, w = -1;
  for (std::size_t j = 0; j < t.names.size(); ++j) {
    if (t.names[j] == "log_post") {
      lp = static_cast<int>(j);
    } else if (t.names[j] == "weight") {
      w = static_cast<int>(j);
    } else {
      pos.push_back(static_cast<Eigen::Index>(j));
      names.push_back(t.names[j]);
    }
  }
  if (pos.empty()) throw Error(ErrorCode::Format, path + ": no position columns");
  Matrix x = t.values(Eigen::all, pos);
  std::optional<Vector> lpv, wv;
  if (lp >= 0) lpv = t.values.col(lp);
  if (w >= 0) wv = t.values.col(w);
  return SampleSet::validate(std::move(x), std::move(lpv), std::move(wv), std::move(names));
}

void write_samples_csv(const std::string& path, const SampleSet& samples) {
  Table t;
  t.names = samples.dim_names();
  if (t.names.size() != samples.dim()) {
    t.names.clear();
    for (std::size_t j = 0; j < samples.dim(); ++j) t.names.push_back("x" + std::to_string(j + 1));
  }
  Eigen::Index cols = static_cast<Eigen::Index>(samples.dim());
  if (samples.log_post()) t.names.push_back("log_post");
  if (samples.weights()) t.names.push_back("weight");
  t.values.resize(samples.positions().rows(), static_cast<Eigen::Index>(t.names.size()));
  t.values.leftCols(cols) = samples.positions();
  if (samples.log_post()) t.values.col(cols++) = *samples.log_post();
  if (samples.weights()) t.values.col(cols) = *samples.weights();
  write_csv(path, t);
}

json serialize_model(const DensityModel& model, const Bounds& bounds) {
  if (bounds.dim() != model.dim()) throw Error(ErrorCode::InvalidInput, "bounds and model differ in dimension");
  json env = {{"schema_version", kModelSchemaVersion}, {"method", model.method()}, {"bounds", bounds_json(bounds)},
              {"transform", nullptr}};
  const DensityModel* inner = &model;
  if (const auto* t = dynamic_cast<const TransformedDensity*>(&model)) {
    json dims = json::array();
    for (const auto& d : t->transform().dims())
      dims.push_back({{"kind", transform_kind_name(d.kind)}, {"a", format_double(d.a)}, {"b", format_double(d.b)}});
    env["transform"] = dims;
    inner = t->inner().get();
  }
  env["payload"] = payload_json(*inner);
  return env;
}

LoadedModel deserialize_model(const json& j) {
  try {
    const int version = j.at("schema_version").get<int>();
    if (version != kModelSchemaVersion) throw Error(ErrorCode::Format, "unsupported schema_version " + std::to_string(version));
    const std::string method = j.at("method").get<std::string>();
    DensityPtr model = payload_model(method, j.at("payload"));
    const json& tj = j.at("transform");
    if (!tj.is_null()) {
      std::vector<TransformDim> dims;
      for (const auto& d : tj) dims.push_back({transform_kind_from(d.at("kind").get<std::string>()), num(d.at("a")), num(d.at("b"))});
      model = std::make_shared<TransformedDensity>(Transform(std::move(dims)), model);
    }
    Bounds bounds = json_bounds(j.at("bounds"));
    if (bounds.dim() != model->dim()) throw Error(ErrorCode::Format, "bounds and model differ in dimension");
    return {model, std::move(bounds)};
  } catch (const json::exception& e) {
    throw Error(ErrorCode::Format, std::string("malformed model file: ") + e.what());
  }
}

void save_model(const std::string& path, const DensityModel& model, const Bounds& bounds) {
  const json j = serialize_model(model, bounds);
  atomic_write(path, [&](std::ostream& f) { f << j.dump(1) << '\n'; });
}

LoadedModel load_model(const std::string& path) {
  std::ifstream f(path);
  if (!f) throw Error(ErrorCode::Io, "cannot open " + path);
  json j;
  try {
    j = json::parse(f);
  } catch (const json::exception& e) {
    throw Error(ErrorCode::Format, path + ": " + e.what());
  }
  return deserialize_model(j);
}

void write_text_file(const std::string& path, const std::string& content) {
  atomic_write(path, [&](std::ostream& f) { f << content; });
}

}  // namespace postapprox
