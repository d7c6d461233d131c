#pragma once

// Raw binary array files and the model manifest.
//
// .bin files carry no header: they are the little-endian bytes of a flat
// array, matrices stored row-major (neuron-major for dense weights). All
// shape information lives in manifest.json.

#include <algorithm>
#include <bit>
#include <cstddef>
#include <cstdint>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <functional>
#include <limits>
#include <map>
#include <memory>
#include <optional>
#include <set>
#include <span>
#include <sstream>
#include <string>
#include <vector>

#include <json.hpp>

#include "icsml/buffer.hpp"
#include "icsml/error.hpp"
#include "icsml/layers.hpp"
#include "icsml/math.hpp"
#include "icsml/quantization.hpp"
#include "icsml/sparse.hpp"

namespace icsml {

namespace fs = std::filesystem;

namespace detail {

template <typename T>
void swap_bytes_inplace(std::span<T> values) {
  if constexpr (sizeof(T) > 1) {
    for (auto& v : values) {
      auto* p = reinterpret_cast<unsigned char*>(&v);
      std::reverse(p, p + sizeof(T));
    }
  }
}

}  // namespace detail

// Copies exactly expected_bytes from the file into destination.
inline void binarr_load(const fs::path& path, std::size_t expected_bytes, std::span<std::byte> destination) {
  if (destination.size() < expected_bytes) {
    throw Error(ErrorCode::SizeMismatch, "destination smaller than " + std::to_string(expected_bytes) + " bytes");
  }
  std::error_code ec;
  if (!fs::is_regular_file(path, ec)) throw Error(ErrorCode::FileMissing, path.string());
  const auto actual = fs::file_size(path, ec);
  if (ec) throw Error(ErrorCode::IOFailure, path.string() + ": " + ec.message());
  if (actual != expected_bytes) {
    throw Error(ErrorCode::SizeMismatch, path.string() + ": " + std::to_string(actual) + " bytes, expected " +
                                             std::to_string(expected_bytes));
  }
  std::ifstream in(path, std::ios::binary);
  if (!in) throw Error(ErrorCode::IOFailure, "cannot open " + path.string());
  in.read(reinterpret_cast<char*>(destination.data()), static_cast<std::streamsize>(expected_bytes));
  if (in.gcount() != static_cast<std::streamsize>(expected_bytes)) {
    throw Error(ErrorCode::IOFailure, "short read from " + path.string());
  }
}

// Writes the first nbytes of source; the file ends up exactly nbytes long.
inline void arrbin_store(const fs::path& path, std::size_t nbytes, std::span<const std::byte> source) {
  if (source.size() < nbytes) throw Error(ErrorCode::SizeMismatch, "source smaller than requested write");
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw Error(ErrorCode::IOFailure, "cannot open " + path.string() + " for writing");
  out.write(reinterpret_cast<const char*>(source.data()), static_cast<std::streamsize>(nbytes));
  out.flush();
  if (!out) throw Error(ErrorCode::IOFailure, "write failed: " + path.string());
}

// Typed wrappers; convert to/from little-endian on big-endian hosts.
template <typename T>
void binarr_load(const fs::path& path, std::span<T> destination) {
  binarr_load(path, destination.size_bytes(), std::as_writable_bytes(destination));
  if constexpr (std::endian::native == std::endian::big) detail::swap_bytes_inplace(destination);
}

template <typename T>
std::vector<T> binarr_load_vector(const fs::path& path, std::size_t count) {
  std::vector<T> out(count);
  binarr_load(path, std::span<T>(out));
  return out;
}

template <typename T>
void arrbin_store(const fs::path& path, std::span<const T> source) {
  if constexpr (std::endian::native == std::endian::big) {
    std::vector<T> copy(source.begin(), source.end());
    detail::swap_bytes_inplace(std::span<T>(copy));
    arrbin_store(path, copy.size() * sizeof(T), std::as_bytes(std::span<const T>(copy)));
  } else {
    arrbin_store(path, source.size_bytes(), std::as_bytes(source));
  }
}

// ---------------------------------------------------------------------------
// Frame-major traces: cycle0 ch0..chN, cycle1 ... as LE float32, plus an
// optional one-byte-per-cycle label sidecar.

inline std::vector<float> read_trace(const fs::path& path, std::size_t channels) {
  std::error_code ec;
  if (!fs::is_regular_file(path, ec)) throw Error(ErrorCode::FileMissing, path.string());
  const auto bytes = fs::file_size(path);
  const std::size_t frame_bytes = channels * sizeof(float);
  if (channels == 0 || bytes % frame_bytes != 0) {
    throw Error(ErrorCode::SizeMismatch, path.string() + " is not a whole number of " + std::to_string(channels) +
                                             "-channel frames");
  }
  return binarr_load_vector<float>(path, bytes / sizeof(float));
}

inline void write_trace(const fs::path& path, std::span<const float> frames) { arrbin_store(path, frames); }

inline std::vector<std::uint8_t> read_labels(const fs::path& path) {
  std::error_code ec;
  if (!fs::is_regular_file(path, ec)) throw Error(ErrorCode::FileMissing, path.string());
  return binarr_load_vector<std::uint8_t>(path, fs::file_size(path));
}

inline void write_labels(const fs::path& path, std::span<const std::uint8_t> labels) { arrbin_store(path, labels); }

// ---------------------------------------------------------------------------
// Manifest

inline constexpr int kManifestSchemaVersion = 1;

struct QuantSpec {
  QuantScheme scheme = QuantScheme::Q8;
  std::string scales_file;  // neurons + 1 REALs: per-row scales, then input scale
};

struct LayerEntry {
  std::string name;
  LayerKind kind = LayerKind::Dense;
  std::uint32_t size = 0;  // resolved output width
  std::optional<Activation> activation;
  std::string weights_file;
  std::string biases_file;
  std::vector<std::string> inputs;  // resolved producer names
  std::optional<QuantSpec> quantization;
  SkipPolicy skip = SkipPolicy::NoSkip;
  std::string custom_type;
  std::optional<std::vector<std::uint32_t>> weights_shape;  // optional declarations, checked by validate
  std::optional<std::uint32_t> biases_count;
};

struct ModelManifest {
  int schema_version = kManifestSchemaVersion;
  std::string name;
  std::uint32_t input_size = 0;
  std::vector<LayerEntry> layers;
  fs::path base_dir;  // directory weight files are resolved against

  std::size_t index_of(const std::string& layer_name) const {
    for (std::size_t i = 0; i < layers.size(); ++i) {
      if (layers[i].name == layer_name) return i;
    }
    throw Error(ErrorCode::RefError, "unknown layer '" + layer_name + "'");
  }

  std::uint32_t input_width(const LayerEntry& layer) const {
    return layer.inputs.empty() ? input_size : layers[index_of(layer.inputs.front())].size;
  }
};

namespace detail {

using json = nlohmann::json;

class ManifestReader {
 public:
  explicit ManifestReader(const json& doc) : doc_(doc) {}

  ModelManifest read() {
    expect_object(doc_, "");
    allow_only(doc_, "", {"schema_version", "name", "input_size", "layers"});
    ModelManifest m;
    m.schema_version = get_int(doc_, "", "schema_version");
    if (m.schema_version != kManifestSchemaVersion) {
      fail_schema("schema_version", "unsupported version " + std::to_string(m.schema_version));
    }
    m.name = get_string(doc_, "", "name");
    const auto input_size = get_int(doc_, "", "input_size");
    if (input_size < 1) fail_schema("input_size", "must be >= 1");
    m.input_size = static_cast<std::uint32_t>(input_size);
    const auto& layers = require(doc_, "", "layers");
    if (!layers.is_array() || layers.empty()) fail_schema("layers", "must be a non-empty array");

    std::map<std::string, std::size_t> seen;
    for (std::size_t i = 0; i < layers.size(); ++i) {
      const std::string path = "layers[" + std::to_string(i) + "]";
      LayerEntry entry = read_layer(layers[i], path, i, m, seen);
      if (seen.count(entry.name)) fail_schema(path + ".name", "duplicate layer name '" + entry.name + "'");
      seen.emplace(entry.name, i);
      m.layers.push_back(std::move(entry));
    }
    return m;
  }

 private:
  [[noreturn]] static void fail_schema(const std::string& path, const std::string& what) {
    throw Error(ErrorCode::SchemaError, path + ": " + what);
  }
  [[noreturn]] static void fail_ref(const std::string& path, const std::string& what) {
    throw Error(ErrorCode::RefError, path + ": " + what);
  }

  static std::string join(const std::string& base, const std::string& key) {
    return base.empty() ? key : base + "." + key;
  }

  static void expect_object(const json& j, const std::string& path) {
    if (!j.is_object()) fail_schema(path.empty() ? "<root>" : path, "expected an object");
  }

  static void allow_only(const json& j, const std::string& path, std::initializer_list<const char*> keys) {
    for (const auto& [key, _] : j.items()) {
      if (std::none_of(keys.begin(), keys.end(), [&](const char* k) { return key == k; })) {
        fail_schema(join(path, key), "unexpected field");
      }
    }
  }

  static const json& require(const json& j, const std::string& path, const char* key) {
    const auto it = j.find(key);
    if (it == j.end()) fail_schema(join(path, key), "missing required field");
    return *it;
  }

  static std::int64_t get_int(const json& j, const std::string& path, const char* key) {
    const auto& v = require(j, path, key);
    if (!v.is_number_integer()) fail_schema(join(path, key), "expected an integer");
    return v.get<std::int64_t>();
  }

  static std::string get_string(const json& j, const std::string& path, const char* key) {
    const auto& v = require(j, path, key);
    if (!v.is_string()) fail_schema(join(path, key), "expected a string");
    return v.get<std::string>();
  }

  static std::optional<std::string> opt_string(const json& j, const std::string& path, const char* key) {
    const auto it = j.find(key);
    if (it == j.end() || it->is_null()) return std::nullopt;
    if (!it->is_string()) fail_schema(join(path, key), "expected a string");
    return it->get<std::string>();
  }

  static std::uint32_t get_size(const json& j, const std::string& path) {
    const auto v = get_int(j, path, "size");
    if (v < 1 || v > std::numeric_limits<std::uint32_t>::max()) fail_schema(join(path, "size"), "must be >= 1");
    return static_cast<std::uint32_t>(v);
  }

  static std::optional<Activation> read_activation(const json& j, const std::string& path) {
    const auto name = opt_string(j, path, "activation");
    const auto alpha_it = j.find("alpha");
    if (!name || *name == "none") {
      if (alpha_it != j.end()) fail_schema(join(path, "alpha"), "alpha without a parameterized activation");
      return std::nullopt;
    }
    const auto kind = parse_activation_kind(*name);
    if (!kind) fail_schema(join(path, "activation"), "unknown activation '" + *name + "'");
    auto act = Activation::of(*kind);
    if (alpha_it != j.end()) {
      if (!act.has_alpha()) fail_schema(join(path, "alpha"), "activation '" + *name + "' takes no alpha");
      if (!alpha_it->is_number()) fail_schema(join(path, "alpha"), "expected a number");
      try {
        act = Activation::of(*kind, alpha_it->get<float>());
      } catch (const Error& e) {
        fail_schema(join(path, "alpha"), e.what());
      }
    }
    return act;
  }

  LayerEntry read_layer(const json& j, const std::string& path, std::size_t index, const ModelManifest& m,
                        const std::map<std::string, std::size_t>& seen) {
    expect_object(j, path);
    LayerEntry e;
    e.name = get_string(j, path, "name");
    if (e.name.empty()) fail_schema(join(path, "name"), "must not be empty");
    const auto kind = get_string(j, path, "kind");
    if (kind == "input") e.kind = LayerKind::Input;
    else if (kind == "dense") e.kind = LayerKind::Dense;
    else if (kind == "activation") e.kind = LayerKind::Activation;
    else if (kind == "concatenation") e.kind = LayerKind::Concatenation;
    else if (kind == "custom") e.kind = LayerKind::Custom;
    else fail_schema(join(path, "kind"), "unknown layer kind '" + kind + "'");

    if ((index == 0) != (e.kind == LayerKind::Input)) {
      fail_schema(join(path, "kind"), index == 0 ? "first layer must be the input layer" : "only the first layer may be an input");
    }

    switch (e.kind) {
      case LayerKind::Input:
        allow_only(j, path, {"name", "kind", "size"});
        e.size = j.contains("size") ? get_size(j, path) : m.input_size;
        if (e.size != m.input_size) fail_schema(join(path, "size"), "input layer size must equal input_size");
        return e;
      case LayerKind::Dense:
        allow_only(j, path, {"name", "kind", "size", "activation", "alpha", "weights_file", "biases_file", "inputs",
                             "quantization", "skip", "weights_shape", "biases_count"});
        e.size = get_size(j, path);
        e.activation = read_activation(j, path);
        e.weights_file = get_string(j, path, "weights_file");
        e.biases_file = get_string(j, path, "biases_file");
        if (const auto it = j.find("quantization"); it != j.end() && !it->is_null()) {
          const std::string qpath = join(path, "quantization");
          expect_object(*it, qpath);
          allow_only(*it, qpath, {"scheme", "scales_file"});
          const auto scheme_name = get_string(*it, qpath, "scheme");
          const auto scheme = parse_scheme(scheme_name);
          if (!scheme || !is_integer(*scheme)) fail_schema(join(qpath, "scheme"), "expected q8, q16 or q32");
          e.quantization = QuantSpec{*scheme, get_string(*it, qpath, "scales_file")};
        }
        if (const auto skip = opt_string(j, path, "skip")) {
          const auto p = parse_skip_policy(*skip);
          if (!p) fail_schema(join(path, "skip"), "unknown skip policy '" + *skip + "'");
          e.skip = *p;
        }
        if (const auto it = j.find("weights_shape"); it != j.end()) {
          if (!it->is_array()) fail_schema(join(path, "weights_shape"), "expected an array of extents");
          std::vector<std::uint32_t> shape;
          for (const auto& d : *it) {
            if (!d.is_number_unsigned()) fail_schema(join(path, "weights_shape"), "extents must be unsigned integers");
            shape.push_back(d.get<std::uint32_t>());
          }
          e.weights_shape = shape;
        }
        if (const auto it = j.find("biases_count"); it != j.end()) {
          if (!it->is_number_unsigned()) fail_schema(join(path, "biases_count"), "expected an unsigned integer");
          e.biases_count = it->get<std::uint32_t>();
        }
        break;
      case LayerKind::Activation:
        allow_only(j, path, {"name", "kind", "activation", "alpha", "inputs"});
        e.activation = read_activation(j, path);
        if (!e.activation) fail_schema(join(path, "activation"), "activation layer needs an activation");
        break;
      case LayerKind::Concatenation:
        allow_only(j, path, {"name", "kind", "inputs"});
        break;
      case LayerKind::Custom:
        allow_only(j, path, {"name", "kind", "type", "size", "inputs"});
        e.custom_type = get_string(j, path, "type");
        e.size = get_size(j, path);
        break;
    }

    // Producer references: default to the previous layer.
    const auto it = j.find("inputs");
    if (it == j.end()) {
      e.inputs.push_back(m.layers.back().name);
    } else {
      const std::string ipath = join(path, "inputs");
      if (!it->is_array() || it->empty()) fail_schema(ipath, "expected a non-empty array of layer names");
      for (std::size_t k = 0; k < it->size(); ++k) {
        const auto& ref = (*it)[k];
        const std::string rpath = ipath + "[" + std::to_string(k) + "]";
        if (!ref.is_string()) fail_schema(rpath, "expected a layer name");
        const auto name = ref.get<std::string>();
        if (name == e.name) fail_ref(rpath, "layer '" + name + "' references itself");
        if (!seen.count(name)) fail_ref(rpath, "'" + name + "' is not an earlier layer");
        e.inputs.push_back(name);
      }
    }
    if ((e.kind == LayerKind::Dense || e.kind == LayerKind::Activation) && e.inputs.size() != 1) {
      fail_schema(join(path, "inputs"), "layer takes exactly one input");
    }

    if (e.kind == LayerKind::Activation) {
      e.size = m.layers[seen.at(e.inputs[0])].size;
    } else if (e.kind == LayerKind::Concatenation) {
      std::uint64_t total = 0;
      for (const auto& ref : e.inputs) total += m.layers[seen.at(ref)].size;
      e.size = static_cast<std::uint32_t>(total);
    }
    return e;
  }

  const json& doc_;
};

}  // namespace detail

// Parses and schema-checks a manifest document.
inline ModelManifest parse_manifest(const std::string& text, const fs::path& base_dir = {}) {
  detail::json doc;
  try {
    doc = detail::json::parse(text);
  } catch (const detail::json::parse_error& e) {
    throw Error(ErrorCode::SyntaxError, e.what());
  }
  ModelManifest m = detail::ManifestReader(doc).read();
  m.base_dir = base_dir;
  return m;
}

inline ModelManifest load_manifest(const fs::path& path) {
  std::ifstream in(path);
  if (!in) throw Error(ErrorCode::FileMissing, path.string());
  std::stringstream ss;
  ss << in.rdbuf();
  return parse_manifest(ss.str(), path.parent_path());
}

inline nlohmann::ordered_json manifest_to_json(const ModelManifest& m) {
  nlohmann::ordered_json doc;
  doc["schema_version"] = m.schema_version;
  doc["name"] = m.name;
  doc["input_size"] = m.input_size;
  auto& layers = doc["layers"] = nlohmann::ordered_json::array();
  for (std::size_t i = 0; i < m.layers.size(); ++i) {
    const auto& e = m.layers[i];
    nlohmann::ordered_json j;
    j["name"] = e.name;
    j["kind"] = std::string(layer_kind_name(e.kind));
    if (e.kind == LayerKind::Input || e.kind == LayerKind::Dense || e.kind == LayerKind::Custom) j["size"] = e.size;
    if (e.kind == LayerKind::Custom) j["type"] = e.custom_type;
    if (e.activation) {
      j["activation"] = std::string(activation_name(e.activation->kind));
      if (e.activation->has_alpha()) j["alpha"] = e.activation->alpha;
    }
    if (e.kind == LayerKind::Dense) {
      j["weights_file"] = e.weights_file;
      j["biases_file"] = e.biases_file;
      if (e.quantization) {
        j["quantization"] = {{"scheme", std::string(scheme_name(e.quantization->scheme))},
                             {"scales_file", e.quantization->scales_file}};
      }
      if (e.skip != SkipPolicy::NoSkip) j["skip"] = std::string(skip_policy_name(e.skip));
    }
    if (e.kind != LayerKind::Input) j["inputs"] = e.inputs;
    layers.push_back(std::move(j));
  }
  return doc;
}

// Semantic checks that need resolved shapes; ManifestInvalid on failure.
inline void validate_manifest(const ModelManifest& m) {
  for (const auto& e : m.layers) {
    if (e.kind != LayerKind::Dense) continue;
    const std::uint32_t inputs = m.input_width(e);
    if (e.biases_count && *e.biases_count != e.size) {
      throw Error(ErrorCode::ManifestInvalid, "layer '" + e.name + "' declares " + std::to_string(*e.biases_count) +
                                                  " biases for " + std::to_string(e.size) + " outputs");
    }
    if (e.weights_shape) {
      const std::vector<std::uint32_t> expected{e.size, inputs};
      if (*e.weights_shape != expected) {
        throw Error(ErrorCode::ManifestInvalid, "layer '" + e.name + "' weights_shape must be [" +
                                                    std::to_string(e.size) + ", " + std::to_string(inputs) + "]");
      }
    }
  }
}

// Float elements the model's arena must hold.
inline std::size_t required_arena_elements(const ModelManifest& m) {
  std::vector<NamedExtents> plan;
  plan.push_back({"input_slot", {m.input_size}});
  for (const auto& e : m.layers) {
    if (e.kind == LayerKind::Dense && !e.quantization) {
      plan.push_back({e.name + "_weights", {e.size, m.input_width(e)}});
      plan.push_back({e.name + "_biases", {e.size}});
    }
    plan.push_back({e.name + "_buff", {e.size}});
  }
  return plan_memory(plan).total_elements;
}

using CustomLayerFactory = std::function<std::shared_ptr<CustomLayer>(const LayerEntry&)>;
using CustomLayerRegistry = std::map<std::string, CustomLayerFactory, std::less<>>;

inline QuantizedDense load_quantized_layer(const ModelManifest& m, const LayerEntry& e) {
  const std::uint32_t inputs = m.input_width(e);
  const auto scheme = e.quantization->scheme;
  QuantCodes codes = make_codes(scheme, static_cast<std::size_t>(e.size) * inputs);
  std::visit([&](auto& c) { binarr_load(m.base_dir / e.weights_file, std::span(c)); }, codes);
  const auto biases = binarr_load_vector<float>(m.base_dir / e.biases_file, e.size);
  const auto scales = binarr_load_vector<float>(m.base_dir / e.quantization->scales_file, e.size + 1);
  try {
    return make_quantized_dense(scheme, inputs, std::move(codes), biases, scales, e.activation);
  } catch (const Error& err) {
    throw Error(ErrorCode::ManifestInvalid, "layer '" + e.name + "': " + err.what());
  }
}

// Allocates every view in `arena`, loads parameters, and seals the model.
inline SequentialModel build_model(const ModelManifest& m, Arena arena, const CustomLayerRegistry* registry = nullptr) {
  validate_manifest(m);
  const std::size_t needed = required_arena_elements(m);
  if (arena.capacity() - arena.high_water() < needed) {
    throw Error(ErrorCode::CapacityExceeded, "model '" + m.name + "' needs " + std::to_string(needed) +
                                                 " arena elements, arena has " + std::to_string(arena.remaining()));
  }
  SequentialModel model(std::move(arena));
  for (const auto& e : m.layers) {
    std::vector<std::size_t> from;
    for (const auto& ref : e.inputs) from.push_back(m.index_of(ref));
    switch (e.kind) {
      case LayerKind::Input: model.add_input(e.size, e.name); break;
      case LayerKind::Dense: {
        std::size_t idx = 0;
        if (e.quantization) {
          idx = model.add_quantized_dense(load_quantized_layer(m, e), from.at(0), e.name);
        } else {
          idx = model.add_dense(e.size, e.activation, from.at(0), e.name);
          binarr_load(m.base_dir / e.weights_file, model.weights(idx));
          binarr_load(m.base_dir / e.biases_file, model.biases(idx));
        }
        if (e.skip != SkipPolicy::NoSkip) model.set_skip_policy(idx, e.skip);
        break;
      }
      case LayerKind::Activation: model.add_activation(*e.activation, from.at(0), e.name); break;
      case LayerKind::Concatenation: model.add_concatenation(from, e.name); break;
      case LayerKind::Custom: {
        const auto it = registry ? registry->find(e.custom_type) : CustomLayerRegistry::const_iterator{};
        if (!registry || it == registry->end()) {
          throw Error(ErrorCode::ManifestInvalid, "no implementation registered for custom layer type '" +
                                                      e.custom_type + "'");
        }
        model.add_custom(it->second(e), e.size, from, e.name);
        break;
      }
    }
  }
  model.seal();
  return model;
}

inline SequentialModel build_model(const ModelManifest& m, const CustomLayerRegistry* registry = nullptr) {
  return build_model(m, Arena(required_arena_elements(m)), registry);
}

}  // namespace icsml
