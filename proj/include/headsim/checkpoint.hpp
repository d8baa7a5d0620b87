#pragma once

// Versioned binary checkpoint: magic, version, JSON config, counters,
// parameters and AdamW moments (little-endian float32).

#include <cstdint>
#include <filesystem>
#include <fstream>
#include <stdexcept>
#include <string>
#include <vector>

#include "headsim/model.hpp"
#include "headsim/optim.hpp"

namespace headsim {

inline constexpr char kCheckpointMagic[4] = {'H', 'S', 'C', 'K'};
inline constexpr std::uint32_t kCheckpointVersion = 1;

struct Checkpoint {
  std::string config_json;  // full experiment config
  EncoderConfig encoder;
  std::uint64_t step = 0;   // optimizer steps taken
  std::uint64_t epoch = 0;  // completed epochs
  std::vector<float> params;
  std::vector<float> adam_m;
  std::vector<float> adam_v;
};

namespace detail {

template <typename T>
void put(std::ofstream& f, const T& v) {
  f.write(reinterpret_cast<const char*>(&v), sizeof(T));
}

template <typename T>
T get(std::ifstream& f) {
  T v{};
  f.read(reinterpret_cast<char*>(&v), sizeof(T));
  if (!f) throw std::runtime_error("checkpoint: truncated file");
  return v;
}

inline void put_floats(std::ofstream& f, const std::vector<float>& v) {
  put<std::uint64_t>(f, v.size());
  f.write(reinterpret_cast<const char*>(v.data()), static_cast<std::streamsize>(v.size() * sizeof(float)));
}

inline std::vector<float> get_floats(std::ifstream& f) {
  const auto n = get<std::uint64_t>(f);
  std::vector<float> v(n);
  f.read(reinterpret_cast<char*>(v.data()), static_cast<std::streamsize>(n * sizeof(float)));
  if (!f) throw std::runtime_error("checkpoint: truncated tensor");
  return v;
}

}  // namespace detail

inline void save_checkpoint(const std::filesystem::path& path, const Checkpoint& c) {
  const auto tmp = path.string() + ".tmp";
  {
    std::ofstream f(tmp, std::ios::binary);
    if (!f) throw std::runtime_error("cannot write " + tmp);
    f.write(kCheckpointMagic, 4);
    detail::put<std::uint32_t>(f, kCheckpointVersion);
    detail::put<std::uint64_t>(f, c.config_json.size());
    f.write(c.config_json.data(), static_cast<std::streamsize>(c.config_json.size()));
    const EncoderConfig& e = c.encoder;
    for (std::int32_t v : {e.image_size, e.patch_size, e.embed_dim, e.depth, e.num_heads, static_cast<int>(e.variant)})
      detail::put<std::int32_t>(f, v);
    detail::put<double>(f, e.mlp_ratio);
    detail::put<std::uint64_t>(f, c.step);
    detail::put<std::uint64_t>(f, c.epoch);
    detail::put_floats(f, c.params);
    detail::put_floats(f, c.adam_m);
    detail::put_floats(f, c.adam_v);
  }
  std::filesystem::rename(tmp, path);
}

inline Checkpoint load_checkpoint(const std::filesystem::path& path) {
  std::ifstream f(path, std::ios::binary);
  if (!f) throw std::runtime_error("cannot read checkpoint " + path.string());
  char magic[4];
  f.read(magic, 4);
  if (!f || std::string(magic, 4) != std::string(kCheckpointMagic, 4))
    throw std::runtime_error(path.string() + ": not a checkpoint");
  const auto version = detail::get<std::uint32_t>(f);
  if (version != kCheckpointVersion)
    throw std::runtime_error(path.string() + ": unsupported checkpoint version " + std::to_string(version));
  Checkpoint c;
  const auto n = detail::get<std::uint64_t>(f);
  c.config_json.resize(n);
  f.read(c.config_json.data(), static_cast<std::streamsize>(n));
  EncoderConfig& e = c.encoder;
  e.image_size = detail::get<std::int32_t>(f);
  e.patch_size = detail::get<std::int32_t>(f);
  e.embed_dim = detail::get<std::int32_t>(f);
  e.depth = detail::get<std::int32_t>(f);
  e.num_heads = detail::get<std::int32_t>(f);
  const int variant = detail::get<std::int32_t>(f);
  if (variant < 0 || variant > 3) throw std::runtime_error(path.string() + ": bad variant tag");
  e.variant = static_cast<Variant>(variant);
  e.mlp_ratio = detail::get<double>(f);
  c.step = detail::get<std::uint64_t>(f);
  c.epoch = detail::get<std::uint64_t>(f);
  c.params = detail::get_floats(f);
  c.adam_m = detail::get_floats(f);
  c.adam_v = detail::get_floats(f);
  if (c.params.size() != ParamLayout(e).total())
    throw std::runtime_error(path.string() + ": parameter count does not match encoder config");
  return c;
}

inline Parameters<float> checkpoint_parameters(const Checkpoint& c) {
  Parameters<float> p(c.encoder);
  p.values.assign(c.params.begin(), c.params.end());
  return p;
}

}  // namespace headsim
