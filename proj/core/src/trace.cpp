#include "squat/trace.hpp"

#include "squat/error.hpp"
#include "squat/random.hpp"
#include "byte_io.hpp"

#include <json.hpp>

#include <cmath>
#include <fstream>
#include <string>

namespace squat {

using Eigen::Index;
using Eigen::MatrixXd;
using nlohmann::json;

namespace {

std::string blob_name(char kind, Index layer) {
  return std::string(1, kind) + "_layer" + std::to_string(layer) + ".bin";
}

std::size_t elements(const TraceManifest& m, Index heads) {
  return static_cast<std::size_t>(m.tokens * heads * m.head_dim);
}

MatrixXd slice(const std::vector<float>& data, const TraceManifest& m, Index heads, Index head,
               Index begin, Index count) {
  if (head < 0 || head >= heads) {
    throw InvalidArgument("head index " + std::to_string(head) + " out of range");
  }
  if (count < 0) {
    count = m.tokens - begin;
  }
  if (begin < 0 || begin + count > m.tokens) {
    throw InvalidArgument("token range out of bounds");
  }
  MatrixXd out(count, m.head_dim);
  for (Index t = 0; t < count; ++t) {
    const auto base = static_cast<std::size_t>(((begin + t) * heads + head) * m.head_dim);
    for (Index j = 0; j < m.head_dim; ++j) {
      out(t, j) = static_cast<double>(data[base + static_cast<std::size_t>(j)]);
    }
  }
  return out;
}

std::vector<std::uint8_t> encode_f32(const std::vector<float>& v) {
  std::vector<std::uint8_t> out;
  out.reserve(v.size() * 4);
  for (float x : v) {
    detail::put_f32(out, x);
  }
  return out;
}

std::vector<float> decode_f32(const std::filesystem::path& path, std::size_t count) {
  const auto bytes = detail::read_file(path);
  const std::size_t expected = count * 4;
  if (bytes.size() != expected) {
    throw FormatError("size mismatch in " + path.filename().string() + ": manifest implies " +
                      std::to_string(expected) + " bytes but the blob holds " +
                      std::to_string(bytes.size()) + " bytes (first missing or extra byte at offset " +
                      std::to_string(std::min(bytes.size(), expected)) + ")");
  }
  std::vector<float> out(count);
  for (std::size_t i = 0; i < count; ++i) {
    out[i] = detail::get_f32(bytes, 4 * i);
  }
  return out;
}

} // namespace

void TraceManifest::validate() const {
  if (layers < 1 || kv_heads < 1 || query_heads < 1) {
    throw InvalidArgument("trace needs at least one layer, KV head and query head");
  }
  if (head_dim < 1) {
    throw InvalidArgument("trace head_dim must be positive");
  }
  if (query_heads % kv_heads != 0) {
    throw InvalidArgument("query_heads=" + std::to_string(query_heads) +
                          " must be a multiple of kv_heads=" + std::to_string(kv_heads));
  }
  if (tokens < 0 || prompt_len < 0 || prompt_len > tokens) {
    throw InvalidArgument("trace prompt_len must be in [0, tokens]");
  }
  if (dtype != "f32" || layout != "row-major" || endianness != "little") {
    throw InvalidArgument("only little-endian row-major f32 traces are supported");
  }
}

void Trace::validate_shapes() const {
  manifest.validate();
  if (static_cast<Index>(layers.size()) != manifest.layers) {
    throw InvalidArgument("trace holds " + std::to_string(layers.size()) +
                          " layers, manifest says " + std::to_string(manifest.layers));
  }
  for (std::size_t i = 0; i < layers.size(); ++i) {
    const auto& l = layers[i];
    if (l.q.size() != elements(manifest, manifest.query_heads) ||
        l.k.size() != elements(manifest, manifest.kv_heads) ||
        l.v.size() != elements(manifest, manifest.kv_heads)) {
      throw InvalidArgument("layer " + std::to_string(i) +
                            " tensor sizes do not match the manifest shape");
    }
  }
}

MatrixXd Trace::queries(Index layer, Index query_head, Index begin, Index count) const {
  return slice(layers.at(static_cast<std::size_t>(layer)).q, manifest, manifest.query_heads,
               query_head, begin, count);
}

MatrixXd Trace::keys(Index layer, Index kv_head, Index begin, Index count) const {
  return slice(layers.at(static_cast<std::size_t>(layer)).k, manifest, manifest.kv_heads, kv_head,
               begin, count);
}

MatrixXd Trace::values(Index layer, Index kv_head, Index begin, Index count) const {
  return slice(layers.at(static_cast<std::size_t>(layer)).v, manifest, manifest.kv_heads, kv_head,
               begin, count);
}

void write_trace(const Trace& trace, const std::filesystem::path& dir) {
  trace.validate_shapes();
  std::filesystem::create_directories(dir);
  const auto& m = trace.manifest;
  const json manifest{{"layers", m.layers},         {"kv_heads", m.kv_heads},
                      {"query_heads", m.query_heads}, {"head_dim", m.head_dim},
                      {"tokens", m.tokens},         {"prompt_len", m.prompt_len},
                      {"dtype", m.dtype},           {"layout", m.layout},
                      {"endianness", m.endianness}};
  {
    std::ofstream f(dir / "manifest.json", std::ios::trunc);
    if (!f) {
      throw FormatError("cannot write " + (dir / "manifest.json").string());
    }
    f << manifest.dump(2) << '\n';
  }
  for (Index i = 0; i < m.layers; ++i) {
    const auto& l = trace.layers[static_cast<std::size_t>(i)];
    detail::write_file(dir / blob_name('q', i), encode_f32(l.q));
    detail::write_file(dir / blob_name('k', i), encode_f32(l.k));
    detail::write_file(dir / blob_name('v', i), encode_f32(l.v));
  }
}

Trace read_trace(const std::filesystem::path& dir) {
  json j;
  {
    std::ifstream f(dir / "manifest.json");
    if (!f) {
      throw FormatError("cannot open " + (dir / "manifest.json").string());
    }
    try {
      f >> j;
    } catch (const json::exception& e) {
      throw FormatError("malformed trace manifest: " + std::string(e.what()));
    }
  }
  Trace trace;
  auto& m = trace.manifest;
  try {
    m.layers = j.at("layers").get<Index>();
    m.kv_heads = j.at("kv_heads").get<Index>();
    m.query_heads = j.at("query_heads").get<Index>();
    m.head_dim = j.at("head_dim").get<Index>();
    m.tokens = j.at("tokens").get<Index>();
    m.prompt_len = j.at("prompt_len").get<Index>();
    m.dtype = j.value("dtype", "f32");
    m.layout = j.value("layout", "row-major");
    m.endianness = j.value("endianness", "little");
  } catch (const json::exception& e) {
    throw FormatError("malformed trace manifest: " + std::string(e.what()));
  }
  try {
    m.validate();
  } catch (const InvalidArgument& e) {
    throw FormatError(std::string("invalid trace manifest: ") + e.what());
  }
  for (Index i = 0; i < m.layers; ++i) {
    LayerTensors l;
    l.q = decode_f32(dir / blob_name('q', i), elements(m, m.query_heads));
    l.k = decode_f32(dir / blob_name('k', i), elements(m, m.kv_heads));
    l.v = decode_f32(dir / blob_name('v', i), elements(m, m.kv_heads));
    trace.layers.push_back(std::move(l));
  }
  return trace;
}

void SyntheticSpec::validate() const {
  if (tokens < 0 || dim < 1) {
    throw InvalidArgument("synthetic trace needs tokens >= 0 and dim >= 1");
  }
  if (true_rank < 0 || true_rank > dim) {
    throw InvalidArgument("true_rank must be in [0, dim]");
  }
  if (!(noise_level >= 0.0 && noise_level < 1.0)) {
    throw InvalidArgument("noise_level must be in [0, 1)");
  }
  if (prompt_len > tokens) {
    throw InvalidArgument("prompt_len exceeds tokens");
  }
}

Trace gen_synthetic(const SyntheticSpec& spec) {
  spec.validate();
  Trace trace;
  auto& m = trace.manifest;
  m.layers = spec.layers;
  m.kv_heads = spec.kv_heads;
  m.query_heads = spec.query_heads;
  m.head_dim = spec.dim;
  m.tokens = spec.tokens;
  m.prompt_len = spec.prompt_len < 0 ? spec.tokens / 2 : spec.prompt_len;
  m.validate();

  Rng rng(spec.seed);
  const Index n = spec.tokens;
  const Index d = spec.dim;
  const Index r = spec.true_rank;

  auto gaussian = [&](Index rows, Index cols, double scale) {
    MatrixXd out(rows, cols);
    for (Index i = 0; i < rows; ++i) {
      for (Index j = 0; j < cols; ++j) {
        out(i, j) = scale * rng.normal();
      }
    }
    return out;
  };

  auto unit_rms = [](std::vector<float>& data, const std::vector<double>& raw) {
    double sum = 0.0;
    for (double x : raw) {
      sum += x * x;
    }
    const double rms = raw.empty() ? 0.0 : std::sqrt(sum / static_cast<double>(raw.size()));
    data.resize(raw.size());
    for (std::size_t i = 0; i < raw.size(); ++i) {
      data[i] = static_cast<float>(rms > 0.0 ? raw[i] / rms : 0.0);
    }
  };

  for (Index layer = 0; layer < m.layers; ++layer) {
    LayerTensors lt;
    lt.q.resize(static_cast<std::size_t>(n * m.query_heads * d));
    for (Index h = 0; h < m.query_heads; ++h) {
      MatrixXd q = MatrixXd::Zero(n, d);
      if (r > 0) {
        const MatrixXd factor = gaussian(n, r, 1.0);
        const MatrixXd basis = gaussian(r, d, 1.0 / std::sqrt(static_cast<double>(r)));
        q = factor * basis;
      }
      if (spec.noise_level > 0.0) {
        q += gaussian(n, d, spec.noise_level);
      }
      if (spec.normalize_queries) {
        for (Index t = 0; t < n; ++t) {
          const double norm = q.row(t).norm();
          if (norm > 0.0) {
            q.row(t) /= norm;
          }
        }
      }
      for (Index t = 0; t < n; ++t) {
        for (Index j = 0; j < d; ++j) {
          lt.q[static_cast<std::size_t>((t * m.query_heads + h) * d + j)] =
              static_cast<float>(q(t, j));
        }
      }
    }
    const auto kv_count = static_cast<std::size_t>(n * m.kv_heads * d);
    std::vector<double> raw(kv_count);
    for (auto& x : raw) {
      x = rng.normal();
    }
    unit_rms(lt.k, raw);
    for (auto& x : raw) {
      x = rng.normal();
    }
    unit_rms(lt.v, raw);
    trace.layers.push_back(std::move(lt));
  }
  return trace;
}

void save_subspace(const QuerySubspace& sub, const std::filesystem::path& dir,
                   const std::string& stem) {
  std::filesystem::create_directories(dir);
  std::vector<double> sigma(sub.singular_values.data(),
                            sub.singular_values.data() + sub.singular_values.size());
  const json j{{"format", "squat-subspace"},
               {"version", 1},
               {"dim", sub.dim},
               {"requested_rank", sub.requested_rank},
               {"rank", sub.rank},
               {"singular_values", sigma},
               {"blob", stem + ".bin"},
               {"dtype", "f32"},
               {"endianness", "little"}};
  {
    std::ofstream f(dir / (stem + ".json"), std::ios::trunc);
    if (!f) {
      throw FormatError("cannot write subspace manifest in " + dir.string());
    }
    f << j.dump(2) << '\n';
  }
  std::vector<std::uint8_t> bytes;
  for (Index i = 0; i < sub.rank; ++i) {
    for (Index c = 0; c < sub.dim; ++c) {
      detail::put_f32(bytes, static_cast<float>(sub.orthonormal_basis(i, c)));
    }
  }
  detail::write_file(dir / (stem + ".bin"), bytes);
}

QuerySubspace load_subspace(const std::filesystem::path& dir, const std::string& stem) {
  json j;
  {
    std::ifstream f(dir / (stem + ".json"));
    if (!f) {
      throw FormatError("cannot open " + (dir / (stem + ".json")).string());
    }
    try {
      f >> j;
    } catch (const json::exception& e) {
      throw FormatError("malformed subspace manifest: " + std::string(e.what()));
    }
  }
  QuerySubspace sub;
  std::vector<double> sigma;
  try {
    sub.dim = j.at("dim").get<Index>();
    sub.requested_rank = j.at("requested_rank").get<Index>();
    sub.rank = j.at("rank").get<Index>();
    sigma = j.at("singular_values").get<std::vector<double>>();
  } catch (const json::exception& e) {
    throw FormatError("malformed subspace manifest: " + std::string(e.what()));
  }
  if (sub.rank < 0 || sub.rank > sub.requested_rank ||
      static_cast<Index>(sigma.size()) != sub.requested_rank) {
    throw FormatError("inconsistent subspace manifest " + stem);
  }
  const auto vals = decode_f32(dir / (stem + ".bin"),
                               static_cast<std::size_t>(sub.rank * sub.dim));
  sub.orthonormal_basis.resize(sub.rank, sub.dim);
  for (Index i = 0; i < sub.rank; ++i) {
    for (Index c = 0; c < sub.dim; ++c) {
      sub.orthonormal_basis(i, c) = vals[static_cast<std::size_t>(i * sub.dim + c)];
    }
  }
  sub.singular_values = Eigen::Map<const Eigen::VectorXd>(sigma.data(), sub.requested_rank);
  sub.basis = MatrixXd::Zero(sub.requested_rank, sub.dim);
  sub.basis.topRows(sub.rank) =
      sub.singular_values.head(sub.rank).asDiagonal() * sub.orthonormal_basis;
  return sub;
}

} // namespace squat
