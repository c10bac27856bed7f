#include "squat/cache.hpp"

#include "squat/error.hpp"
#include "byte_io.hpp"

#include <json.hpp>

#include <array>
#include <fstream>

namespace squat {

using Eigen::Index;
using nlohmann::json;

namespace {

constexpr const char* kManifest = "cache.json";
constexpr int kFormatVersion = 1;

constexpr std::array<const char*, 7> kBlobs = {
    "key_codes.bin",    "key_params.bin",    "value_codes.bin", "value_params.bin",
    "key_residual.bin", "value_residual.bin", "positions.bin",
};

struct Blobs {
  std::vector<std::uint8_t> key_codes, key_params, value_codes, value_params;
  std::vector<std::uint8_t> key_residual, value_residual, positions;

  std::array<const std::vector<std::uint8_t>*, 7> all() const {
    return {&key_codes, &key_params, &value_codes, &value_params,
            &key_residual, &value_residual, &positions};
  }
};

void put_group(std::vector<std::uint8_t>& codes, std::vector<std::uint8_t>& params,
               const QuantizedGroup& g) {
  codes.insert(codes.end(), g.packed.begin(), g.packed.end());
  detail::put_f32(params, g.params.zero_point);
  detail::put_f32(params, g.params.scale);
}

Blobs encode(const KVCache& cache) {
  Blobs b;
  for (const auto& head : cache.heads) {
    for (const auto& group : head.key_groups) {
      for (const auto& ch : group.channels) {
        put_group(b.key_codes, b.key_params, ch);
      }
    }
    for (const auto& token : head.value_tokens) {
      for (const auto& g : token.groups) {
        put_group(b.value_codes, b.value_params, g);
      }
    }
    for (float v : head.key_residual) {
      detail::put_f32(b.key_residual, v);
    }
    for (float v : head.value_residual) {
      detail::put_f32(b.value_residual, v);
    }
    for (std::int32_t p : head.positions) {
      detail::put_u32(b.positions, static_cast<std::uint32_t>(p));
    }
  }
  return b;
}

json config_to_json(const CacheConfig& c) {
  return json{{"bits", c.bits},
              {"group_size", c.group_size},
              {"residual_len", c.residual_len},
              {"block", c.block},
              {"lambda", c.lambda},
              {"rank", c.rank},
              {"mode", to_string(c.mode)},
              {"rope_theta", c.rope_theta},
              {"per_sample_solver", c.per_sample_solver}};
}

CacheConfig config_from_json(const json& j) {
  CacheConfig c;
  c.bits = j.at("bits").get<int>();
  c.group_size = j.at("group_size").get<Index>();
  c.residual_len = j.at("residual_len").get<Index>();
  c.block = j.at("block").get<Index>();
  c.lambda = j.at("lambda").get<double>();
  c.rank = j.at("rank").get<Index>();
  c.mode = parse_rope_mode(j.at("mode").get<std::string>());
  c.rope_theta = j.at("rope_theta").get<double>();
  c.per_sample_solver = j.value("per_sample_solver", false);
  return c;
}

QuantizedGroup read_group(detail::Reader& codes, detail::Reader& params, std::size_t len,
                          int bits) {
  QuantizedGroup g;
  g.len = len;
  g.params.bits = bits;
  const auto packed = codes.take(packed_size(len, bits));
  g.packed.assign(packed.begin(), packed.end());
  g.params.zero_point = params.f32();
  g.params.scale = params.f32();
  return g;
}

} // namespace

std::span<const char* const> cache_blob_names() {
  return kBlobs;
}

std::uint64_t serialized_payload_bytes(const KVCache& cache) {
  std::uint64_t total = 0;
  const Blobs b = encode(cache);
  for (const auto* blob : b.all()) {
    total += blob->size();
  }
  return total;
}

void save_cache(const KVCache& cache, const std::filesystem::path& dir) {
  std::filesystem::create_directories(dir);
  const Blobs b = encode(cache);

  json heads = json::array();
  for (Index layer = 0; layer < cache.layers; ++layer) {
    for (Index h = 0; h < cache.kv_heads; ++h) {
      const auto& head = cache.at(layer, h);
      heads.push_back(json{{"layer", layer},
                           {"head", h},
                           {"tokens", head.token_count()},
                           {"key_groups", head.key_groups.size()},
                           {"key_group_tokens", cache.config.group_size},
                           {"key_residual_rows", head.residual_key_tokens()},
                           {"value_quantized_tokens", head.quantized_value_tokens()},
                           {"value_residual_rows", head.residual_value_tokens()}});
    }
  }
  json blobs = json::object();
  const auto all = b.all();
  for (std::size_t i = 0; i < kBlobs.size(); ++i) {
    blobs[kBlobs[i]] = all[i]->size();
  }

  const json manifest{{"format", "squat-kv-cache"},
                      {"version", kFormatVersion},
                      {"endianness", "little"},
                      {"config", config_to_json(cache.config)},
                      {"layers", cache.layers},
                      {"kv_heads", cache.kv_heads},
                      {"head_dim", cache.dim},
                      {"heads", heads},
                      {"blobs", blobs}};
  {
    std::ofstream f(dir / kManifest, std::ios::trunc);
    if (!f) {
      throw FormatError("cannot write " + (dir / kManifest).string());
    }
    f << manifest.dump(2) << '\n';
  }
  for (std::size_t i = 0; i < kBlobs.size(); ++i) {
    detail::write_file(dir / kBlobs[i], *all[i]);
  }
}

KVCache load_cache(const std::filesystem::path& dir) {
  json manifest;
  {
    std::ifstream f(dir / kManifest);
    if (!f) {
      throw FormatError("cannot open " + (dir / kManifest).string());
    }
    try {
      f >> manifest;
    } catch (const json::exception& e) {
      throw FormatError("malformed cache manifest: " + std::string(e.what()));
    }
  }

  KVCache cache;
  try {
    if (manifest.at("format") != "squat-kv-cache" || manifest.at("version") != kFormatVersion) {
      throw FormatError("unsupported cache format in " + (dir / kManifest).string());
    }
    cache.config = config_from_json(manifest.at("config"));
    cache.layers = manifest.at("layers").get<Index>();
    cache.kv_heads = manifest.at("kv_heads").get<Index>();
    cache.dim = manifest.at("head_dim").get<Index>();
  } catch (const json::exception& e) {
    throw FormatError("malformed cache manifest: " + std::string(e.what()));
  }
  cache.config.validate_for_dim(cache.dim);

  const auto blob = [&](int i) {
    return detail::Reader(kBlobs[static_cast<std::size_t>(i)],
                          detail::read_file(dir / kBlobs[static_cast<std::size_t>(i)]));
  };
  auto key_codes = blob(0), key_params = blob(1), value_codes = blob(2), value_params = blob(3);
  auto key_residual = blob(4), value_residual = blob(5), positions = blob(6);

  const int bits = cache.config.bits;
  const Index d = cache.dim;
  const Index G = cache.config.group_size;
  const auto& heads = manifest.at("heads");
  if (static_cast<Index>(heads.size()) != cache.layers * cache.kv_heads) {
    throw FormatError("cache manifest lists " + std::to_string(heads.size()) +
                      " heads, expected layers * kv_heads");
  }
  for (const auto& hj : heads) {
    HeadCache head;
    head.dim = d;
    const auto key_groups = hj.at("key_groups").get<Index>();
    const auto group_tokens = hj.at("key_group_tokens").get<Index>();
    for (Index gi = 0; gi < key_groups; ++gi) {
      KeyGroup group;
      group.tokens = group_tokens;
      for (Index c = 0; c < d; ++c) {
        group.channels.push_back(
            read_group(key_codes, key_params, static_cast<std::size_t>(group_tokens), bits));
      }
      head.key_groups.push_back(std::move(group));
    }
    const auto vq = hj.at("value_quantized_tokens").get<Index>();
    for (Index t = 0; t < vq; ++t) {
      ValueToken token;
      for (Index c = 0; c < d; c += G) {
        token.groups.push_back(read_group(value_codes, value_params,
                                          static_cast<std::size_t>(std::min(G, d - c)), bits));
      }
      head.value_tokens.push_back(std::move(token));
    }
    const auto kr = hj.at("key_residual_rows").get<Index>();
    for (Index i = 0; i < kr * d; ++i) {
      head.key_residual.push_back(key_residual.f32());
    }
    const auto vr = hj.at("value_residual_rows").get<Index>();
    for (Index i = 0; i < vr * d; ++i) {
      head.value_residual.push_back(value_residual.f32());
    }
    const auto n = hj.at("tokens").get<Index>();
    for (Index i = 0; i < n; ++i) {
      head.positions.push_back(positions.i32());
    }
    if (head.quantized_key_tokens() + kr != n || vq + vr != n) {
      throw FormatError("cache manifest token counts are inconsistent for layer " +
                        hj.at("layer").dump() + " head " + hj.at("head").dump());
    }
    cache.heads.push_back(std::move(head));
  }
  for (auto* r : {&key_codes, &key_params, &value_codes, &value_params, &key_residual,
                  &value_residual, &positions}) {
    r->expect_end();
  }
  return cache;
}

} // namespace squat
