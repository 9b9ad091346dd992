#pragma once

// Checkpoint layout:
//   "GLF1"                      4 bytes, ASCII magic
//   header_length               u32, little-endian
//   header                      UTF-8 text, one key=value per line:
//                                 format_version, input_dim, hidden_dims,
//                                 activations, param_count, seed
//   params                      param_count IEEE-754 doubles, little-endian,
//                               canonical layer order

#include <bit>
#include <cstdint>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <map>
#include <sstream>
#include <string>
#include <vector>

#include "glf/error.hpp"
#include "glf/nn.hpp"

namespace glf {

inline constexpr char kCheckpointMagic[4] = {'G', 'L', 'F', '1'};
inline constexpr int kCheckpointVersion = 1;

namespace detail {

inline void put_u32_le(std::string& out, std::uint32_t v) {
  for (int i = 0; i < 4; ++i) out.push_back(static_cast<char>((v >> (8 * i)) & 0xff));
}

inline std::uint32_t get_u32_le(const unsigned char* p) {
  return std::uint32_t(p[0]) | (std::uint32_t(p[1]) << 8) | (std::uint32_t(p[2]) << 16) |
         (std::uint32_t(p[3]) << 24);
}

inline void put_f64_le(std::string& out, double d) {
  auto bits = std::bit_cast<std::uint64_t>(d);
  for (int i = 0; i < 8; ++i) out.push_back(static_cast<char>((bits >> (8 * i)) & 0xff));
}

inline double get_f64_le(const unsigned char* p) {
  std::uint64_t bits = 0;
  for (int i = 0; i < 8; ++i) bits |= std::uint64_t(p[i]) << (8 * i);
  return std::bit_cast<double>(bits);
}

inline std::string join_dims(const std::vector<std::size_t>& v) {
  std::string s;
  for (std::size_t i = 0; i < v.size(); ++i) s += (i ? "," : "") + std::to_string(v[i]);
  return s;
}

inline std::vector<std::size_t> split_dims(const std::string& s) {
  std::vector<std::size_t> out;
  std::stringstream ss(s);
  std::string tok;
  while (std::getline(ss, tok, ','))
    if (!tok.empty()) out.push_back(std::stoul(tok));
  return out;
}

inline std::string activation_names(const Architecture& a) {
  std::string s;
  for (std::size_t i = 0; i < a.hidden_dims.size(); ++i) s += "relu,";
  return s + "logistic";
}

}  // namespace detail

inline std::string encode_checkpoint(const DenseNet& net) {
  detail::check_net(net);
  std::ostringstream h;
  h << "format_version=" << kCheckpointVersion << "\n"
    << "input_dim=" << net.arch.input_dim << "\n"
    << "hidden_dims=" << detail::join_dims(net.arch.hidden_dims) << "\n"
    << "activations=" << detail::activation_names(net.arch) << "\n"
    << "param_count=" << net.params.size() << "\n"
    << "seed=" << net.seed << "\n";
  const std::string header = h.str();
  std::string out(kCheckpointMagic, 4);
  detail::put_u32_le(out, static_cast<std::uint32_t>(header.size()));
  out += header;
  for (double d : net.params) detail::put_f64_le(out, d);
  return out;
}

inline DenseNet decode_checkpoint(const std::string& bytes) {
  const auto* p = reinterpret_cast<const unsigned char*>(bytes.data());
  if (bytes.size() < 4 || std::memcmp(bytes.data(), kCheckpointMagic, 4) != 0)
    throw CheckpointError(CheckpointErrorKind::BadMagic, "checkpoint: bad magic");
  if (bytes.size() < 8) throw CheckpointError(CheckpointErrorKind::Truncated, "checkpoint: truncated header length");
  const std::uint32_t hlen = detail::get_u32_le(p + 4);
  if (bytes.size() < 8 + std::size_t(hlen))
    throw CheckpointError(CheckpointErrorKind::Truncated, "checkpoint: truncated header");

  std::map<std::string, std::string> kv;
  std::istringstream hs(bytes.substr(8, hlen));
  std::string line;
  while (std::getline(hs, line)) {
    if (line.empty()) continue;
    auto eq = line.find('=');
    if (eq == std::string::npos) throw CheckpointError(CheckpointErrorKind::BadHeader, "checkpoint: malformed header line");
    kv[line.substr(0, eq)] = line.substr(eq + 1);
  }
  auto field = [&](const char* key) -> const std::string& {
    auto it = kv.find(key);
    if (it == kv.end()) throw CheckpointError(CheckpointErrorKind::BadHeader, std::string("checkpoint: header lacks ") + key);
    return it->second;
  };

  DenseNet net;
  std::size_t count = 0;
  try {
    if (std::stoi(field("format_version")) != kCheckpointVersion)
      throw CheckpointError(CheckpointErrorKind::VersionMismatch,
                            "checkpoint: unsupported format_version " + field("format_version"));
    net.arch.input_dim = std::stoul(field("input_dim"));
    net.arch.hidden_dims = detail::split_dims(field("hidden_dims"));
    count = std::stoull(field("param_count"));
    net.seed = std::stoull(field("seed"));
  } catch (const std::logic_error&) {
    throw CheckpointError(CheckpointErrorKind::BadHeader, "checkpoint: unparseable header value");
  }

  const std::size_t payload = bytes.size() - 8 - hlen;
  if (payload < count * 8)
    throw CheckpointError(CheckpointErrorKind::Truncated,
                          "checkpoint: header declares " + std::to_string(count) + " params, payload holds " +
                              std::to_string(payload / 8));
  if (payload != count * 8 || count != net.arch.param_count())
    throw CheckpointError(CheckpointErrorKind::ParamCountMismatch,
                          "checkpoint: param_count " + std::to_string(count) + " disagrees with payload or architecture");

  net.params.resize(count);
  const unsigned char* q = p + 8 + hlen;
  for (std::size_t i = 0; i < count; ++i) net.params[i] = detail::get_f64_le(q + 8 * i);
  return net;
}

inline void save_checkpoint(const DenseNet& net, const std::filesystem::path& path) {
  const auto bytes = encode_checkpoint(net);
  std::ofstream f(path, std::ios::binary | std::ios::trunc);
  if (!f) throw CheckpointError(CheckpointErrorKind::Io, "checkpoint: cannot open " + path.string() + " for writing");
  f.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
  if (!f) throw CheckpointError(CheckpointErrorKind::Io, "checkpoint: write failed for " + path.string());
}

inline DenseNet load_checkpoint(const std::filesystem::path& path) {
  std::ifstream f(path, std::ios::binary);
  if (!f) throw CheckpointError(CheckpointErrorKind::Io, "checkpoint: cannot open " + path.string());
  std::string bytes((std::istreambuf_iterator<char>(f)), std::istreambuf_iterator<char>());
  return decode_checkpoint(bytes);
}

}  // namespace glf
