#pragma once

// Portable binary container for matrices and network weights, the
// `key = value` / `[section]` config format, and CSV helpers.
//
// Container layout (all integers unsigned 64-bit little-endian, all reals
// IEEE-754 binary64 little-endian):
//
//   matrix: "IPRGMAT1" rows cols  data[rows*cols] (row-major)
//   net:    "IPRGNET1" layer_count, then per layer
//             kind(0 dense, 1 conv) activation(0 id, 1 relu, 2 leaky, 3 tanh)
//             in_dim out_dim weight_count slope(f64)
//             weights[weight_count] (dense row-major, or conv taps)
//             bias[out_dim]

#include "ipreg/nets.hpp"

#include <cstring>
#include <fstream>
#include <iomanip>
#include <map>
#include <sstream>
#include <string>
#include <vector>

namespace ipreg::io {

namespace detail {

inline void put_u64(std::string& out, std::uint64_t v) {
  for (int b = 0; b < 8; ++b) out.push_back(static_cast<char>((v >> (8 * b)) & 0xff));
}
inline void put_f64(std::string& out, double d) {
  std::uint64_t bits;
  std::memcpy(&bits, &d, sizeof bits);
  put_u64(out, bits);
}

class Reader {
public:
  explicit Reader(const std::string& data) : data_(data) {}
  std::uint64_t u64() {
    need(8);
    std::uint64_t v = 0;
    for (int b = 0; b < 8; ++b)
      v |= static_cast<std::uint64_t>(static_cast<unsigned char>(data_[pos_ + b])) << (8 * b);
    pos_ += 8;
    return v;
  }
  double f64() {
    const std::uint64_t bits = u64();
    double d;
    std::memcpy(&d, &bits, sizeof d);
    return d;
  }
  std::string bytes(std::size_t n) {
    need(n);
    std::string s = data_.substr(pos_, n);
    pos_ += n;
    return s;
  }
  bool done() const { return pos_ == data_.size(); }

private:
  void need(std::size_t n) const {
    if (pos_ + n > data_.size()) throw ConfigError("container: truncated data");
  }
  const std::string& data_;
  std::size_t pos_ = 0;
};

inline Index checked_dim(std::uint64_t v) {
  if (v == 0 || v > (1ULL << 30)) throw ConfigError("container: implausible dimension");
  return static_cast<Index>(v);
}

} // namespace detail

inline constexpr const char* kMatrixMagic = "IPRGMAT1";
inline constexpr const char* kNetMagic = "IPRGNET1";

inline std::string encode_matrix(const Matrix& m) {
  std::string out(kMatrixMagic);
  detail::put_u64(out, static_cast<std::uint64_t>(m.rows()));
  detail::put_u64(out, static_cast<std::uint64_t>(m.cols()));
  for (Index i = 0; i < m.rows(); ++i)
    for (Index j = 0; j < m.cols(); ++j) detail::put_f64(out, m(i, j));
  return out;
}

inline Matrix decode_matrix(const std::string& data) {
  detail::Reader r(data);
  if (r.bytes(8) != kMatrixMagic) throw ConfigError("container: not a matrix file");
  const Index rows = detail::checked_dim(r.u64());
  const Index cols = detail::checked_dim(r.u64());
  Matrix m(rows, cols);
  for (Index i = 0; i < rows; ++i)
    for (Index j = 0; j < cols; ++j) m(i, j) = r.f64();
  if (!r.done()) throw ConfigError("container: trailing bytes");
  return m;
}

inline std::uint64_t activation_tag(ActivationKind k) {
  switch (k) {
  case ActivationKind::Identity: return 0;
  case ActivationKind::ReLU: return 1;
  case ActivationKind::LeakyReLU: return 2;
  case ActivationKind::Tanh: return 3;
  }
  return 0;
}

inline std::string encode_net(const FeedforwardNet& net) {
  std::string out(kNetMagic);
  detail::put_u64(out, net.layers().size());
  for (const auto& l : net.layers()) {
    detail::put_u64(out, l.kind == LayerKind::Dense ? 0 : 1);
    detail::put_u64(out, activation_tag(l.activation.kind));
    detail::put_u64(out, static_cast<std::uint64_t>(l.in_dim()));
    detail::put_u64(out, static_cast<std::uint64_t>(l.out_dim()));
    detail::put_u64(out, static_cast<std::uint64_t>(l.weight_count()));
    detail::put_f64(out, l.activation.slope);
    if (l.kind == LayerKind::Dense) {
      for (Index i = 0; i < l.weight.rows(); ++i)
        for (Index j = 0; j < l.weight.cols(); ++j) detail::put_f64(out, l.weight(i, j));
    } else {
      for (Index j = 0; j < l.kernel.size(); ++j) detail::put_f64(out, l.kernel[j]);
    }
    for (Index i = 0; i < l.bias.size(); ++i) detail::put_f64(out, l.bias[i]);
  }
  return out;
}

inline FeedforwardNet decode_net(const std::string& data) {
  detail::Reader r(data);
  if (r.bytes(8) != kNetMagic) throw ConfigError("container: not a network file");
  const std::uint64_t count = r.u64();
  if (count == 0 || count > 4096) throw ConfigError("container: implausible layer count");
  std::vector<Layer> layers;
  for (std::uint64_t k = 0; k < count; ++k) {
    const std::uint64_t kind = r.u64();
    const std::uint64_t tag = r.u64();
    const Index din = detail::checked_dim(r.u64());
    const Index dout = detail::checked_dim(r.u64());
    const Index wc = detail::checked_dim(r.u64());
    const double slope = r.f64();
    Activation act;
    switch (tag) {
    case 0: act = Activation::identity(); break;
    case 1: act = Activation::relu(); break;
    case 2: act = Activation::leaky_relu(slope); break;
    case 3: act = Activation::tanh(); break;
    default: throw ConfigError("container: unknown activation tag");
    }
    act.slope = slope;
    if (kind == 0) {
      if (wc != din * dout) throw ConfigError("container: weight count mismatch");
      Matrix w(dout, din);
      for (Index i = 0; i < dout; ++i)
        for (Index j = 0; j < din; ++j) w(i, j) = r.f64();
      Vector b(dout);
      for (Index i = 0; i < dout; ++i) b[i] = r.f64();
      layers.push_back(Layer::dense(std::move(w), std::move(b), act));
    } else if (kind == 1) {
      if (din != dout) throw ConfigError("container: convolution must be square");
      Vector taps(wc);
      for (Index j = 0; j < wc; ++j) taps[j] = r.f64();
      Vector b(dout);
      for (Index i = 0; i < dout; ++i) b[i] = r.f64();
      layers.push_back(Layer::convolution(std::move(taps), din, std::move(b), act));
    } else {
      throw ConfigError("container: unknown layer kind");
    }
  }
  if (!r.done()) throw ConfigError("container: trailing bytes");
  return FeedforwardNet(std::move(layers));
}

inline std::string read_file(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw ConfigError("cannot open " + path);
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

inline void write_file(const std::string& path, const std::string& data) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw ConfigError("cannot write " + path);
  out.write(data.data(), static_cast<std::streamsize>(data.size()));
}

inline void save_matrix(const std::string& path, const Matrix& m) { write_file(path, encode_matrix(m)); }
inline Matrix load_matrix(const std::string& path) { return decode_matrix(read_file(path)); }
inline void save_net(const std::string& path, const FeedforwardNet& n) { write_file(path, encode_net(n)); }
inline FeedforwardNet load_net(const std::string& path) { return decode_net(read_file(path)); }

// ---------------------------------------------------------------------------
// Config text: `[section]` headers, `key = value` lines, `#` comments.
// ---------------------------------------------------------------------------

/// Parsed config; keys are "section.key" (or "key" before any section).
class ConfigText {
public:
  static ConfigText parse(const std::string& text) {
    ConfigText c;
    std::istringstream in(text);
    std::string line, section;
    int lineno = 0;
    while (std::getline(in, line)) {
      ++lineno;
      if (auto h = line.find('#'); h != std::string::npos) line.erase(h);
      line = trim(line);
      if (line.empty()) continue;
      if (line.front() == '[') {
        if (line.back() != ']')
          throw ConfigError("config line " + std::to_string(lineno) + ": bad section header");
        section = trim(line.substr(1, line.size() - 2));
        if (section.empty())
          throw ConfigError("config line " + std::to_string(lineno) + ": empty section name");
        continue;
      }
      const auto eq = line.find('=');
      if (eq == std::string::npos)
        throw ConfigError("config line " + std::to_string(lineno) + ": expected key = value");
      const std::string key = trim(line.substr(0, eq));
      const std::string value = trim(line.substr(eq + 1));
      if (key.empty())
        throw ConfigError("config line " + std::to_string(lineno) + ": empty key");
      const std::string full = section.empty() ? key : section + "." + key;
      if (c.values_.count(full))
        throw ConfigError("config line " + std::to_string(lineno) + ": duplicate key " + full);
      c.values_[full] = value;
    }
    return c;
  }

  bool has(const std::string& key) const { return values_.count(key) > 0; }
  void set(const std::string& key, const std::string& value) { values_[key] = value; }
  const std::map<std::string, std::string>& values() const { return values_; }

  std::string get_string(const std::string& key, const std::string& def) const {
    auto it = values_.find(key);
    return it == values_.end() ? def : it->second;
  }
  double get_double(const std::string& key, double def) const {
    auto it = values_.find(key);
    return it == values_.end() ? def : to_double(key, it->second);
  }
  long long get_int(const std::string& key, long long def) const {
    auto it = values_.find(key);
    if (it == values_.end()) return def;
    std::size_t used = 0;
    long long v = 0;
    try {
      v = std::stoll(it->second, &used);
    } catch (const std::exception&) {
      throw ConfigError("config: " + key + " is not an integer");
    }
    if (used != it->second.size()) throw ConfigError("config: " + key + " is not an integer");
    return v;
  }
  bool get_bool(const std::string& key, bool def) const {
    auto it = values_.find(key);
    if (it == values_.end()) return def;
    if (it->second == "true" || it->second == "1" || it->second == "yes") return true;
    if (it->second == "false" || it->second == "0" || it->second == "no") return false;
    throw ConfigError("config: " + key + " is not a boolean");
  }
  std::vector<double> get_list(const std::string& key, std::vector<double> def) const {
    auto it = values_.find(key);
    if (it == values_.end()) return def;
    std::vector<double> out;
    std::istringstream in(it->second);
    std::string item;
    while (std::getline(in, item, ',')) out.push_back(to_double(key, trim(item)));
    if (out.empty()) throw ConfigError("config: " + key + " is an empty list");
    return out;
  }

  /// Throws on any key outside `allowed`.
  void reject_unknown(const std::vector<std::string>& allowed) const {
    for (const auto& [k, v] : values_) {
      bool ok = false;
      for (const auto& a : allowed) ok = ok || a == k;
      if (!ok) throw ConfigError("config: unknown key '" + k + "'");
    }
  }

  /// Canonical text (sorted keys), the input of the config hash.
  std::string canonical() const {
    std::string s;
    for (const auto& [k, v] : values_) s += k + "=" + v + "\n";
    return s;
  }

  static std::string trim(const std::string& s) {
    const auto b = s.find_first_not_of(" \t\r\n");
    if (b == std::string::npos) return "";
    const auto e = s.find_last_not_of(" \t\r\n");
    return s.substr(b, e - b + 1);
  }

private:
  static double to_double(const std::string& key, const std::string& s) {
    std::size_t used = 0;
    double v = 0;
    try {
      v = std::stod(s, &used);
    } catch (const std::exception&) {
      throw ConfigError("config: " + key + " is not a number");
    }
    if (used != s.size()) throw ConfigError("config: " + key + " is not a number");
    return v;
  }
  std::map<std::string, std::string> values_;
};

inline std::uint64_t fnv1a(const std::string& s) {
  std::uint64_t h = 0xcbf29ce484222325ULL;
  for (unsigned char c : s) {
    h ^= c;
    h *= 0x100000001b3ULL;
  }
  return h;
}

inline std::string hex64(std::uint64_t v) {
  std::ostringstream ss;
  ss << std::hex << std::setw(16) << std::setfill('0') << v;
  return ss.str();
}

// ---------------------------------------------------------------------------
// CSV
// ---------------------------------------------------------------------------

/// Shortest round-trip decimal for a double (17 significant digits).
inline std::string fmt_double(double v) {
  std::ostringstream ss;
  ss.imbue(std::locale::classic());
  ss << std::setprecision(17) << v;
  return ss.str();
}

class CsvWriter {
public:
  /// The first line is a comment carrying the version and config hash.
  CsvWriter(const std::string& config_hash, const std::vector<std::string>& columns) {
    out_ << "# ipreg " << kVersion << " config_hash=" << config_hash << "\n";
    for (std::size_t i = 0; i < columns.size(); ++i) out_ << (i ? "," : "") << columns[i];
    out_ << "\n";
  }
  template <class... Ts>
  void row(const Ts&... cells) {
    bool first = true;
    ((out_ << (first ? "" : ",") << cell(cells), first = false), ...);
    out_ << "\n";
  }
  std::string str() const { return out_.str(); }
  void save(const std::string& path) const { write_file(path, str()); }

private:
  static std::string cell(double v) { return fmt_double(v); }
  static std::string cell(int v) { return std::to_string(v); }
  static std::string cell(long v) { return std::to_string(v); }
  static std::string cell(long long v) { return std::to_string(v); }
  static std::string cell(unsigned long v) { return std::to_string(v); }
  static std::string cell(unsigned long long v) { return std::to_string(v); }
  static std::string cell(const std::string& v) { return v; }
  static std::string cell(const char* v) { return v; }
  std::ostringstream out_;
};

} // namespace ipreg::io
