#include "kinauth/persist.hpp"

#include <fstream>
#include <sstream>

#include "kinauth/errors.hpp"
#include "kinauth/io_util.hpp"

namespace kinauth {

namespace {

constexpr const char* kModelTag = "kinauth-model-v1";
constexpr const char* kGmmTag = "kinauth-gmm-v1";

using Header = std::map<std::string, std::string>;

void write_header(std::ostream& out, const char* tag, const Header& header) {
  out << tag << '\n';
  for (const auto& [k, v] : header) out << k << " = " << v << '\n';
  out << "blob\n";
}

Header read_header(std::istream& in, const char* tag, const std::string& what) {
  std::string line;
  if (!std::getline(in, line) || line != tag)
    throw DataError(what + ": missing or wrong version tag (expected " + std::string(tag) + ")");
  Header header;
  while (std::getline(in, line)) {
    if (line == "blob") return header;
    const auto eq = line.find(" = ");
    if (eq == std::string::npos) throw ParseError(what + ": malformed header line '" + line + "'");
    header[line.substr(0, eq)] = line.substr(eq + 3);
  }
  throw DataError(what + ": header not terminated by blob marker");
}

const std::string& need(const Header& h, const std::string& key, const std::string& what) {
  auto it = h.find(key);
  if (it == h.end()) throw DataError(what + ": missing header key '" + key + "'");
  return it->second;
}

long need_long(const Header& h, const std::string& key, const std::string& what) {
  try {
    return std::stol(need(h, key, what));
  } catch (const std::exception&) {
    throw ParseError(what + ": bad integer for key '" + key + "'");
  }
}

double need_double(const Header& h, const std::string& key, const std::string& what) {
  double v = 0.0;
  if (!parse_double(need(h, key, what), v))
    throw ParseError(what + ": bad number for key '" + key + "'");
  return v;
}

std::vector<long> parse_long_list(const std::string& s, const std::string& what) {
  std::vector<long> out;
  if (s.empty()) return out;
  std::stringstream ss(s);
  std::string item;
  while (std::getline(ss, item, ',')) {
    try {
      out.push_back(std::stol(item));
    } catch (const std::exception&) {
      throw ParseError(what + ": bad integer list entry '" + item + "'");
    }
  }
  return out;
}

std::string join_longs(const std::vector<long>& values) {
  std::string out;
  for (size_t i = 0; i < values.size(); ++i) {
    if (i) out += ',';
    out += std::to_string(values[i]);
  }
  return out;
}

void put_matrix(std::ostream& out, const Eigen::MatrixXd& m) {
  for (long r = 0; r < m.rows(); ++r)
    for (long c = 0; c < m.cols(); ++c) put_f32(out, static_cast<float>(m(r, c)));
}

void get_matrix(std::istream& in, Eigen::MatrixXd& m) {
  for (long r = 0; r < m.rows(); ++r)
    for (long c = 0; c < m.cols(); ++c) m(r, c) = get_f32(in);
}

}  // namespace

void save_model(const std::filesystem::path& path, const ModelGraph& model) {
  Header header;
  header["family"] = to_string(model.family);
  header["input_dim"] = std::to_string(model.input_dim);
  header["n_classes"] = std::to_string(model.n_classes());
  header["hidden"] = std::to_string(model.hidden);
  header["init_seed"] = std::to_string(model.init_seed);
  std::string conv;
  for (size_t l = 0; l < model.conv_spec.layers.size(); ++l) {
    const auto& layer = model.conv_spec.layers[l];
    if (l) conv += ',';
    conv += std::to_string(layer.filters) + ':' + std::to_string(layer.width) + ':' +
            std::to_string(layer.pool);
  }
  header["conv_layers"] = conv;
  header["fc_sizes"] =
      join_longs({model.conv_spec.fc_sizes.begin(), model.conv_spec.fc_sizes.end()});
  header["clock_base"] = std::to_string(model.clock.base);
  header["clock_units"] =
      join_longs({model.clock.units_per_band.begin(), model.clock.units_per_band.end()});
  header["params"] = std::to_string(count_params(model));

  ModelGraph copy = model;
  write_file_atomic(path, [&](std::ostream& out) {
    write_header(out, kModelTag, header);
    for (auto& ref : param_refs(copy))
      for (long i = 0; i < ref.size(); ++i) put_f32(out, static_cast<float>(ref.at(i)));
  });
}

ModelGraph load_model(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw DataError("cannot open model file " + path.string());
  const std::string what = "model file " + path.string();
  Header header = read_header(in, kModelTag, what);

  const CellFamily family = cell_family_from_string(need(header, "family", what));
  ConvSpec conv;
  for (const std::string& part : [&] {
         std::vector<std::string> parts;
         std::stringstream ss(need(header, "conv_layers", what));
         std::string item;
         while (std::getline(ss, item, ',')) parts.push_back(item);
         return parts;
       }()) {
    auto fields = parse_long_list([&] {
      std::string s = part;
      for (char& ch : s)
        if (ch == ':') ch = ',';
      return s;
    }(), what);
    if (fields.size() != 3) throw ParseError(what + ": bad conv layer spec '" + part + "'");
    conv.layers.push_back({static_cast<int>(fields[0]), static_cast<int>(fields[1]),
                           static_cast<int>(fields[2])});
  }
  for (long v : parse_long_list(need(header, "fc_sizes", what), what))
    conv.fc_sizes.push_back(static_cast<int>(v));

  ClockworkConfig clock;
  clock.base = static_cast<int>(need_long(header, "clock_base", what));
  for (long v : parse_long_list(need(header, "clock_units", what), what))
    clock.units_per_band.push_back(static_cast<int>(v));

  const int input_dim = static_cast<int>(need_long(header, "input_dim", what));
  const int n_classes = static_cast<int>(need_long(header, "n_classes", what));
  const int hidden = static_cast<int>(need_long(header, "hidden", what));
  const auto seed = static_cast<std::uint64_t>(need_long(header, "init_seed", what));

  ClockworkConfig effective = clock;
  if (clock.units_per_band.empty()) effective.units_per_band = {1};  // placeholder for non-clockwork
  ModelGraph model = make_model(
      family, input_dim, n_classes, conv,
      (family == CellFamily::cwrnn || family == CellFamily::dcwrnn) ? clock : effective, hidden,
      seed);
  if (family != CellFamily::cwrnn && family != CellFamily::dcwrnn) model.clock = clock;

  const long expected = need_long(header, "params", what);
  if (expected != count_params(model))
    throw DataError(what + ": parameter count mismatch (header " + std::to_string(expected) +
                    ", shape " + std::to_string(count_params(model)) + ")");
  for (auto& ref : param_refs(model))
    for (long i = 0; i < ref.size(); ++i) ref.at(i) = get_f32(in);
  return model;
}

namespace {

void save_gmm_container(const std::filesystem::path& path, Header header,
                        const std::function<void(std::ostream&)>& blob) {
  write_file_atomic(path, [&](std::ostream& out) {
    write_header(out, kGmmTag, header);
    blob(out);
  });
}

std::pair<Header, std::ifstream> open_gmm_container(const std::filesystem::path& path,
                                                    const std::string& kind) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw DataError("cannot open " + path.string());
  const std::string what = kind + " file " + path.string();
  Header header = read_header(in, kGmmTag, what);
  if (need(header, "kind", what) != kind)
    throw DataError(what + ": wrong kind '" + header["kind"] + "'");
  return {std::move(header), std::move(in)};
}

}  // namespace

void save_gmm(const std::filesystem::path& path, const GmmParams& gmm) {
  Header header;
  header["kind"] = "ubm";
  header["components"] = std::to_string(gmm.components());
  header["dim"] = std::to_string(gmm.dim());
  save_gmm_container(path, header, [&](std::ostream& out) {
    put_matrix(out, gmm.weights);
    put_matrix(out, gmm.means);
    put_matrix(out, gmm.vars);
  });
}

GmmParams load_gmm(const std::filesystem::path& path) {
  auto [header, in] = open_gmm_container(path, "ubm");
  const std::string what = "ubm file " + path.string();
  const long M = need_long(header, "components", what);
  const long N = need_long(header, "dim", what);
  GmmParams g;
  g.weights.resize(M);
  g.means.resize(M, N);
  g.vars.resize(M, N);
  Eigen::MatrixXd w(M, 1);
  get_matrix(in, w);
  g.weights = w.col(0);
  get_matrix(in, g.means);
  get_matrix(in, g.vars);
  return g;
}

void save_pca(const std::filesystem::path& path, const PcaModel& pca) {
  Header header;
  header["kind"] = "pca";
  header["dim"] = std::to_string(pca.dim());
  header["input_dim"] = std::to_string(pca.mean.size());
  save_gmm_container(path, header, [&](std::ostream& out) {
    put_matrix(out, pca.mean);
    put_matrix(out, pca.basis);
  });
}

PcaModel load_pca(const std::filesystem::path& path) {
  auto [header, in] = open_gmm_container(path, "pca");
  const std::string what = "pca file " + path.string();
  const long d = need_long(header, "dim", what);
  const long N = need_long(header, "input_dim", what);
  PcaModel pca;
  Eigen::MatrixXd mean(N, 1);
  get_matrix(in, mean);
  pca.mean = mean.col(0);
  pca.basis.resize(d, N);
  get_matrix(in, pca.basis);
  return pca;
}

void save_clients(const std::filesystem::path& path, const std::vector<ClientModel>& clients) {
  if (clients.empty()) throw DataError("refusing to save an empty client set");
  Header header;
  header["kind"] = "clients";
  header["count"] = std::to_string(clients.size());
  header["components"] = std::to_string(clients.front().means.rows());
  header["dim"] = std::to_string(clients.front().means.cols());
  std::string ids, zflags;
  for (size_t i = 0; i < clients.size(); ++i) {
    if (i) {
      ids += ',';
      zflags += ',';
    }
    ids += clients[i].client_id;
    zflags += clients[i].z ? '1' : '0';
  }
  header["ids"] = ids;
  header["has_z"] = zflags;
  save_gmm_container(path, header, [&](std::ostream& out) {
    for (const auto& c : clients) {
      put_f32(out, static_cast<float>(c.relevance));
      put_matrix(out, c.means);
      if (c.z) {
        put_f32(out, static_cast<float>(c.z->mean));
        put_f32(out, static_cast<float>(c.z->stdev));
        put_f32(out, c.z->floored ? 1.0f : 0.0f);
      }
    }
  });
}

std::vector<ClientModel> load_clients(const std::filesystem::path& path) {
  auto [header, in] = open_gmm_container(path, "clients");
  const std::string what = "clients file " + path.string();
  const long count = need_long(header, "count", what);
  const long M = need_long(header, "components", what);
  const long N = need_long(header, "dim", what);
  std::vector<std::string> ids;
  {
    std::stringstream ss(need(header, "ids", what));
    std::string item;
    while (std::getline(ss, item, ',')) ids.push_back(item);
  }
  const std::string zflags = need(header, "has_z", what);
  if (static_cast<long>(ids.size()) != count)
    throw DataError(what + ": id list does not match count");

  std::vector<ClientModel> clients(count);
  for (long i = 0; i < count; ++i) {
    clients[i].client_id = ids[i];
    clients[i].relevance = get_f32(in);
    clients[i].means.resize(M, N);
    get_matrix(in, clients[i].means);
    if (zflags[2 * i] == '1') {
      ZtStats z;
      z.mean = get_f32(in);
      z.stdev = get_f32(in);
      z.floored = get_f32(in) != 0.0f;
      clients[i].z = z;
    }
  }
  return clients;
}

void save_ztnorm(const std::filesystem::path& path, const ZtNormParams& params) {
  Header header;
  header["kind"] = "ztnorm";
  header["t_models"] = std::to_string(params.t_models.size());
  if (!params.t_models.empty()) {
    header["components"] = std::to_string(params.t_models.front().model.means.rows());
    header["dim"] = std::to_string(params.t_models.front().model.means.cols());
  } else {
    header["components"] = "0";
    header["dim"] = "0";
  }
  std::ostringstream win;
  win.precision(17);
  win << params.window_s;
  header["window_s"] = win.str();
  std::ostringstream hz;
  hz.precision(17);
  hz << params.feature_hz;
  header["feature_hz"] = hz.str();
  std::ostringstream rel;
  rel.precision(17);
  rel << params.relevance;
  header["relevance"] = rel.str();
  header["map_iters"] = std::to_string(params.map_iters);
  save_gmm_container(path, header, [&](std::ostream& out) {
    for (const auto& tm : params.t_models) {
      put_matrix(out, tm.model.means);
      put_f32(out, static_cast<float>(tm.z.mean));
      put_f32(out, static_cast<float>(tm.z.stdev));
      put_f32(out, tm.z.floored ? 1.0f : 0.0f);
    }
  });
}

ZtNormParams load_ztnorm(const std::filesystem::path& path) {
  auto [header, in] = open_gmm_container(path, "ztnorm");
  const std::string what = "ztnorm file " + path.string();
  const long count = need_long(header, "t_models", what);
  const long M = need_long(header, "components", what);
  const long N = need_long(header, "dim", what);
  ZtNormParams params;
  params.window_s = need_double(header, "window_s", what);
  params.feature_hz = need_double(header, "feature_hz", what);
  params.relevance = need_double(header, "relevance", what);
  params.map_iters = static_cast<int>(need_long(header, "map_iters", what));
  params.t_models.resize(count);
  for (long i = 0; i < count; ++i) {
    TModel& tm = params.t_models[i];
    tm.model.client_id = "t" + std::to_string(i);
    tm.model.relevance = params.relevance;
    tm.model.means.resize(M, N);
    get_matrix(in, tm.model.means);
    tm.z.mean = get_f32(in);
    tm.z.stdev = get_f32(in);
    tm.z.floored = get_f32(in) != 0.0f;
  }
  return params;
}

}  // namespace kinauth
