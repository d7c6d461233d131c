#pragma once

// IEC 61131-3 Structured Text emitter.
//
// Turns a ModelManifest into the declarations, loader and cyclic program an
// ICSML deployment needs: per layer a size constant, REAL arrays for weights,
// biases, output buffer and dimensions, a dataMem bound to the buffer and a
// layer instance; then the Sequential model, one BINARR call per parameter
// file, and a program that calls Model.evaluate() every scan.
//
// Layer k is named L{k}; the input layer is named `input`.

#include <algorithm>
#include <cctype>
#include <charconv>
#include <filesystem>
#include <fstream>
#include <map>
#include <set>
#include <sstream>
#include <string>
#include <string_view>
#include <vector>

#include "icsml/error.hpp"
#include "icsml/math.hpp"
#include "icsml/model_io.hpp"
#include "icsml/quantization.hpp"

namespace icsml::st {

// Vendor-specific spellings. Everything else is plain IEC 61131-3.
struct Dialect {
  std::string library = "ICSML";
  std::string pointer_to = "POINTER TO";
  std::string address_of = "ADR";
  std::string size_of = "SIZEOF";
  std::string upper_bound = "UPPER_BOUND";
  std::string indent = "\t";
};

inline Dialect codesys_v3() { return {}; }

struct StProject {
  std::map<std::string, std::string> files;  // file name -> text
};

inline bool is_valid_identifier(std::string_view id) {
  if (id.empty() || std::isdigit(static_cast<unsigned char>(id.front()))) return false;
  if (id.back() == '_') return false;
  for (std::size_t i = 0; i < id.size(); ++i) {
    const char c = id[i];
    if (!(std::isalnum(static_cast<unsigned char>(c)) || c == '_')) return false;
    if (c == '_' && i + 1 < id.size() && id[i + 1] == '_') return false;
  }
  return true;
}

// Maps arbitrary text onto a legal identifier; empty when nothing survives.
inline std::string to_identifier(std::string_view text) {
  std::string out;
  for (char c : text) {
    const bool ok = std::isalnum(static_cast<unsigned char>(c)) != 0;
    if (ok) out.push_back(c);
    else if (!out.empty() && out.back() != '_') out.push_back('_');
  }
  while (!out.empty() && out.back() == '_') out.pop_back();
  if (!out.empty() && std::isdigit(static_cast<unsigned char>(out.front()))) out.insert(0, "M_");
  return out;
}

namespace detail {

inline std::string upper(std::string_view s) {
  std::string out(s);
  for (auto& c : out) c = static_cast<char>(std::toupper(static_cast<unsigned char>(c)));
  return out;
}

inline const std::set<std::string>& reserved_words() {
  static const std::set<std::string> words = {
      "ABS", "ACTION", "ADR", "AND", "ARRAY", "AT", "BOOL", "BY", "BYTE", "CASE", "CONFIGURATION", "CONSTANT",
      "DINT", "DO", "DWORD", "ELSE", "ELSIF", "END_ACTION", "END_CASE", "END_CONFIGURATION", "END_FOR",
      "END_FUNCTION", "END_FUNCTION_BLOCK", "END_IF", "END_PROGRAM", "END_REPEAT", "END_STRUCT", "END_TYPE",
      "END_VAR", "END_WHILE", "EXIT", "FALSE", "FOR", "FUNCTION", "FUNCTION_BLOCK", "IF", "INT", "LINT", "LREAL",
      "MOD", "NOT", "OF", "OR", "POINTER", "PROGRAM", "REAL", "REPEAT", "RETURN", "SINT", "SIZEOF", "STRING",
      "STRUCT", "SUPER", "THEN", "TO", "TRUE", "TYPE", "UDINT", "UINT", "UNTIL", "UPPER_BOUND", "USINT", "VAR",
      "VAR_GLOBAL", "VAR_INPUT", "VAR_IN_OUT", "VAR_OUTPUT", "WHILE", "WORD", "XOR", "ICSML"};
  return words;
}

inline std::string format_real(float v) {
  char buf[32];
  auto [end, ec] = std::to_chars(buf, buf + sizeof(buf), v);
  std::string s(buf, end);
  if (s.find_first_of(".e") == std::string::npos) s += ".0";
  return s;
}

inline std::string comment_text(std::string_view s) {
  std::string out(s);
  for (std::size_t p; (p = out.find("*)")) != std::string::npos;) out.replace(p, 2, "* )");
  for (std::size_t p; (p = out.find("(*")) != std::string::npos;) out.replace(p, 2, "( *");
  return out;
}

inline std::string activation_type(std::string_view kind_name) {
  // ICSML enum spellings.
  if (kind_name == "binary_step") return "BinaryStep";
  if (kind_name == "elu") return "ELU";
  if (kind_name == "relu") return "ReLU";
  if (kind_name == "leaky_relu") return "LeakyReLU";
  if (kind_name == "sigmoid") return "Sigmoid";
  if (kind_name == "softmax") return "Softmax";
  if (kind_name == "swish") return "Swish";
  if (kind_name == "tanh") return "Tanh";
  return std::string(kind_name);
}

inline std::string skip_type(SkipPolicy p) {
  switch (p) {
    case SkipPolicy::NoSkip: return "None";
    case SkipPolicy::SkipZeroWeight: return "ZeroWeight";
    case SkipPolicy::SkipZeroWeightOrInput: return "ZeroWeightOrInput";
  }
  return "None";
}

}  // namespace detail

// ST prefix of layer `index`: `input` for the input layer, L{index} otherwise.
inline std::string layer_prefix(std::size_t index) { return index == 0 ? "input" : "L" + std::to_string(index); }

inline std::string activation_args(const std::optional<Activation>& act, const Dialect& d) {
  if (!act) return {};
  std::string s = ", activation:=" + d.library + ".activationType." +
                  detail::activation_type(activation_name(act->kind));
  if (act->has_alpha()) s += ", alpha:=" + detail::format_real(act->alpha);
  return s;
}

// Declarations for one manifest layer. Deterministic.
inline std::string emit_layer_decl(const ModelManifest& m, std::size_t index, const Dialect& d = codesys_v3()) {
  const LayerEntry& e = m.layers.at(index);
  const std::string p = layer_prefix(index);
  const std::string& t = d.indent;
  const std::string lib = d.library + ".";
  std::ostringstream os;

  const auto producer = [&](std::size_t k) { return layer_prefix(m.index_of(e.inputs.at(k))); };

  std::string summary = std::string(layer_kind_name(e.kind)) + ", " + std::to_string(e.size) + " values";
  if (e.activation) summary += ", " + detail::activation_type(activation_name(e.activation->kind));
  if (e.quantization) summary += ", " + std::string(scheme_iec_type(e.quantization->scheme)) + " weights (experimental)";
  os << "(* " << p << " '" << detail::comment_text(e.name) << "': " << summary << " *)\n";

  os << "VAR_GLOBAL CONSTANT\n";
  os << t << p << "_size: UINT := " << e.size << ";\n";
  os << "END_VAR\n";
  os << "VAR_GLOBAL\n";

  const auto buffer_decls = [&] {
    os << t << p << "_buff: ARRAY[0.. " << p << "_size - 1] OF REAL;\n";
    os << t << p << "_dimensions: ARRAY[0..0] OF UINT := [" << p << "_size];\n";
    os << t << p << "_dataMem: " << lib << "dataMem := (address:=" << d.address_of << "(" << p
       << "_buff), length:=" << p << "_size , dimensions:=" << d.address_of << "(" << p
       << "_dimensions), dimensions_num:=1);\n";
  };

  switch (e.kind) {
    case LayerKind::Input:
      buffer_decls();
      os << t << p << "_layer: " << lib << "Input := (output:=" << p << "_dataMem);\n";
      break;
    case LayerKind::Dense: {
      const std::string in = producer(0);
      const std::string weight_type = e.quantization ? std::string(scheme_iec_type(e.quantization->scheme)) : "REAL";
      os << t << p << "_weights: ARRAY[0.. " << p << "_size * " << in << "_size - 1] OF " << weight_type << ";\n";
      os << t << p << "_biases: ARRAY[0.. " << p << "_size - 1] OF REAL;\n";
      if (e.quantization) os << t << p << "_scales: ARRAY[0.. " << p << "_size] OF REAL;\n";
      buffer_decls();
      os << t << p << "_layer: " << lib << (e.quantization ? "QuantizedDense" : "Dense") << " := (input:=" << in
         << "_layer.output , output:=" << p << "_dataMem , weights:=" << d.address_of << "(" << p
         << "_weights), biases:=" << d.address_of << "(" << p << "_biases)";
      if (e.quantization) {
        os << ", scales:=" << d.address_of << "(" << p << "_scales), scheme:=" << lib << "quantType."
           << scheme_iec_type(e.quantization->scheme);
      }
      if (e.skip != SkipPolicy::NoSkip) os << ", skip:=" << lib << "skipPolicy." << detail::skip_type(e.skip);
      os << activation_args(e.activation, d) << ");\n";
      break;
    }
    case LayerKind::Activation:
      buffer_decls();
      os << t << p << "_layer: " << lib << "Activation := (input:=" << producer(0) << "_layer.output , output:=" << p
         << "_dataMem" << activation_args(e.activation, d) << ");\n";
      break;
    case LayerKind::Concatenation: {
      buffer_decls();
      os << t << p << "_inputs: ARRAY[0.." << e.inputs.size() - 1 << "] OF " << lib << "dataMem := [";
      for (std::size_t k = 0; k < e.inputs.size(); ++k) os << (k ? ", " : "") << producer(k) << "_layer.output";
      os << "];\n";
      os << t << p << "_layer: " << lib << "Concatenation := (inputs:=" << d.address_of << "(" << p
         << "_inputs), inputs_num:=" << e.inputs.size() << ", output:=" << p << "_dataMem);\n";
      break;
    }
    case LayerKind::Custom:
      throw Error(ErrorCode::UnsupportedLayer, "layer '" + e.name + "' of custom type '" + e.custom_type +
                                                   "' has no Structured Text template");
  }
  os << "END_VAR\n";
  return os.str();
}

// BINARR calls loading the parameters of one layer (empty for non-dense).
inline std::string emit_layer_loads(const ModelManifest& m, std::size_t index, const Dialect& d = codesys_v3()) {
  const LayerEntry& e = m.layers.at(index);
  if (e.kind != LayerKind::Dense) return {};
  const std::string p = layer_prefix(index);
  const std::string in = layer_prefix(m.index_of(e.inputs.at(0)));
  const std::string weight_type = e.quantization ? std::string(scheme_iec_type(e.quantization->scheme)) : "REAL";
  const std::string call = d.indent + d.library + ".BINARR('";
  std::ostringstream os;
  os << call << e.weights_file << "', " << p << "_size * " << in << "_size * " << d.size_of << "(" << weight_type
     << "), " << d.address_of << "(" << p << "_weights));\n";
  os << call << e.biases_file << "', " << p << "_size * " << d.size_of << "(REAL), " << d.address_of << "(" << p
     << "_biases));\n";
  if (e.quantization) {
    os << call << e.quantization->scales_file << "', (" << p << "_size + 1) * " << d.size_of << "(REAL), "
       << d.address_of << "(" << p << "_scales));\n";
  }
  return os.str();
}

namespace detail {

// Every global or POU identifier the project declares.
inline std::vector<std::string> generated_identifiers(const ModelManifest& m) {
  std::vector<std::string> ids = {"layers_array", "Model"};
  for (std::size_t i = 0; i < m.layers.size(); ++i) {
    const std::string p = layer_prefix(i);
    for (const char* suffix : {"_size", "_buff", "_dimensions", "_dataMem", "_layer"}) ids.push_back(p + suffix);
    if (m.layers[i].kind == LayerKind::Dense) {
      ids.push_back(p + "_weights");
      ids.push_back(p + "_biases");
      if (m.layers[i].quantization) ids.push_back(p + "_scales");
    }
    if (m.layers[i].kind == LayerKind::Concatenation) ids.push_back(p + "_inputs");
  }
  return ids;
}

}  // namespace detail

inline StProject emit_st_project(const ModelManifest& m, const Dialect& d = codesys_v3()) {
  const std::string program = to_identifier(m.name);
  const std::string loader = program + "_LoadWeights";
  if (program.empty()) throw Error(ErrorCode::IdentifierClash, "model name '" + m.name + "' yields no identifier");
  {
    std::set<std::string> taken;
    for (const auto& id : detail::generated_identifiers(m)) taken.insert(detail::upper(id));
    for (const auto& pou : {program, loader}) {
      const auto key = detail::upper(pou);
      if (taken.count(key) || detail::reserved_words().count(key)) {
        throw Error(ErrorCode::IdentifierClash, "identifier '" + pou + "' derived from model name '" + m.name +
                                                    "' collides with a generated or reserved name");
      }
    }
  }

  const std::string& t = d.indent;
  StProject project;

  std::ostringstream gvl;
  gvl << "(* Model '" << detail::comment_text(m.name) << "': " << m.layers.size() << " layers, " << m.input_size
      << " inputs. Generated by icsml-stgen; do not edit. *)\n";
  for (std::size_t i = 0; i < m.layers.size(); ++i) gvl << "\n" << emit_layer_decl(m, i, d);
  gvl << "\n(* Sequential model *)\n";
  gvl << "VAR_GLOBAL\n";
  gvl << t << "layers_array: ARRAY[0.." << m.layers.size() - 1 << "] OF " << d.pointer_to << " " << d.library
      << ".Layer := [";
  for (std::size_t i = 0; i < m.layers.size(); ++i) {
    gvl << (i ? ", " : "") << d.address_of << "(" << layer_prefix(i) << "_layer)";
  }
  gvl << "];\n";
  gvl << t << "Model: " << d.library << ".Sequential := (layers:=" << d.address_of
      << "(layers_array), layers_num:=" << d.upper_bound << "(layers_array, 1)+1);\n";
  gvl << "END_VAR\n";
  project.files[program + "_GVL.st"] = gvl.str();

  std::ostringstream load;
  load << "FUNCTION " << loader << " : BOOL\n";
  for (std::size_t i = 0; i < m.layers.size(); ++i) load << emit_layer_loads(m, i, d);
  load << t << loader << " := TRUE;\n";
  load << "END_FUNCTION\n";
  project.files[loader + ".st"] = load.str();

  std::ostringstream prg;
  prg << "PROGRAM " << program << "\n";
  prg << "VAR\n";
  prg << t << "loaded: BOOL := FALSE;\n";
  prg << "END_VAR\n";
  prg << "IF NOT loaded THEN\n";
  prg << t << "loaded := " << loader << "();\n";
  prg << "END_IF\n";
  prg << "Model.evaluate();\n";
  prg << "END_PROGRAM\n";
  project.files[program + "_PRG.st"] = prg.str();

  return project;
}

inline void write_project(const StProject& project, const std::filesystem::path& dir) {
  std::filesystem::create_directories(dir);
  for (const auto& [name, text] : project.files) {
    std::ofstream out(dir / name, std::ios::binary | std::ios::trunc);
    if (!out) throw Error(ErrorCode::IOFailure, "cannot write " + (dir / name).string());
    out << text;
  }
}

}  // namespace icsml::st
