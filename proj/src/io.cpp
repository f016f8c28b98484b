#include "gramode/io.hpp"

#include <bit>
#include <cmath>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <sstream>

#include "gramode/errors.hpp"

namespace gramode {
namespace {

class Writer {
 public:
  void bytes(const char* s, std::size_t n) { buf_.append(s, n); }
  void u8(std::uint8_t v) { buf_.push_back(static_cast<char>(v)); }
  void u16(std::uint16_t v) {
    for (int i = 0; i < 2; ++i) u8(static_cast<std::uint8_t>(v >> (8 * i)));
  }
  void u32(std::uint32_t v) {
    for (int i = 0; i < 4; ++i) u8(static_cast<std::uint8_t>(v >> (8 * i)));
  }
  void f32(float f) { u32(std::bit_cast<std::uint32_t>(f)); }
  void str(const std::string& s) {
    u32(checked_u32(s.size(), "string length"));
    bytes(s.data(), s.size());
  }
  static std::uint32_t checked_u32(std::size_t v, const char* what) {
    if (v > 0xFFFFFFFFu) throw FormatError(std::string(what) + " does not fit in u32");
    return static_cast<std::uint32_t>(v);
  }
  void save(const std::string& path) const {
    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    if (!out) throw InputError("cannot open '" + path + "' for writing");
    out.write(buf_.data(), static_cast<std::streamsize>(buf_.size()));
    if (!out) throw InputError("write to '" + path + "' failed");
  }

 private:
  std::string buf_;
};

class Reader {
 public:
  explicit Reader(const std::string& path) : path_(path) {
    std::error_code ec;
    size_ = std::filesystem::file_size(path, ec);
    if (ec) throw InputError("cannot read '" + path + "': " + ec.message());
    in_.open(path, std::ios::binary);
    if (!in_) throw InputError("cannot open '" + path + "'");
  }
  std::uint64_t remaining() const { return size_ - pos_; }
  std::uint64_t pos() const { return pos_; }
  void need(std::uint64_t n, const char* what) {
    if (n > remaining()) {
      throw FormatError(path_ + ": truncated " + what + " at byte offset " + std::to_string(pos_) + ": expected " +
                        std::to_string(n) + " bytes, found " + std::to_string(remaining()));
    }
  }
  void bytes(char* dst, std::size_t n, const char* what) {
    need(n, what);
    in_.read(dst, static_cast<std::streamsize>(n));
    if (!in_) throw FormatError(path_ + ": read failed at byte offset " + std::to_string(pos_));
    pos_ += n;
  }
  std::uint8_t u8(const char* what) {
    unsigned char b;
    bytes(reinterpret_cast<char*>(&b), 1, what);
    return b;
  }
  std::uint16_t u16(const char* what) {
    unsigned char b[2];
    bytes(reinterpret_cast<char*>(b), 2, what);
    return static_cast<std::uint16_t>(b[0] | (b[1] << 8));
  }
  std::uint32_t u32(const char* what) {
    unsigned char b[4];
    bytes(reinterpret_cast<char*>(b), 4, what);
    return static_cast<std::uint32_t>(b[0]) | (static_cast<std::uint32_t>(b[1]) << 8) |
           (static_cast<std::uint32_t>(b[2]) << 16) | (static_cast<std::uint32_t>(b[3]) << 24);
  }
  std::string str(const char* what) {
    const std::uint32_t n = u32(what);
    need(n, what);
    std::string s(n, '\0');
    bytes(s.data(), n, what);
    return s;
  }
  // Reads count float32 values after checking the file holds them.
  std::vector<float> f32s(std::uint64_t count, const char* what) {
    need(count * 4, what);
    std::vector<float> out(static_cast<std::size_t>(count));
    std::vector<unsigned char> raw(static_cast<std::size_t>(count) * 4);
    bytes(reinterpret_cast<char*>(raw.data()), raw.size(), what);
    for (std::size_t i = 0; i < out.size(); ++i) {
      const std::uint32_t v = static_cast<std::uint32_t>(raw[4 * i]) | (static_cast<std::uint32_t>(raw[4 * i + 1]) << 8) |
                              (static_cast<std::uint32_t>(raw[4 * i + 2]) << 16) |
                              (static_cast<std::uint32_t>(raw[4 * i + 3]) << 24);
      out[i] = std::bit_cast<float>(v);
    }
    return out;
  }
  void magic(const char* expect, std::uint8_t version) {
    char m[4];
    bytes(m, 4, "magic");
    if (std::memcmp(m, expect, 4) != 0) {
      throw FormatError(path_ + ": bad magic at byte offset 0, expected '" + std::string(expect, 4) + "'");
    }
    const std::uint8_t v = u8("version");
    if (v != version) {
      throw FormatError(path_ + ": unsupported version " + std::to_string(v) + " at byte offset 4");
    }
  }
  void end() {
    if (remaining() != 0) {
      throw FormatError(path_ + ": " + std::to_string(remaining()) + " trailing bytes at offset " +
                        std::to_string(pos_));
    }
  }
  const std::string& path() const { return path_; }

 private:
  std::string path_;
  std::ifstream in_;
  std::uint64_t size_ = 0;
  std::uint64_t pos_ = 0;
};

void check_square(const Tensor& t, std::size_t n, const char* what) {
  if (t.shape() != Shape{n, n}) throw DimensionError(std::string(what) + " must be " + std::to_string(n) + "x" + std::to_string(n));
}

}  // namespace

std::vector<std::vector<double>> Dataset::node_series(std::size_t c, std::size_t begin, std::size_t end) const {
  if (c >= channels || begin > end || end > steps) throw InputError("node_series: range out of bounds");
  std::vector<std::vector<double>> out(nodes, std::vector<double>(end - begin));
  for (std::size_t t = begin; t < end; ++t)
    for (std::size_t n = 0; n < nodes; ++n) out[n][t - begin] = at(t, n, c);
  return out;
}

Dataset read_stdf(const std::string& path) {
  Reader r(path);
  r.magic("STDF", 1);
  Dataset d;
  d.steps = r.u32("header");
  d.nodes = r.u32("header");
  d.channels = r.u32("header");
  d.interval_minutes = r.u16("header");
  if (d.steps == 0 || d.nodes == 0 || d.channels == 0) throw FormatError(path + ": header declares an empty tensor");
  const std::uint64_t count = static_cast<std::uint64_t>(d.steps) * d.nodes * d.channels;
  d.data = r.f32s(count, "payload");
  r.end();
  for (std::size_t i = 0; i < d.data.size(); ++i) {
    if (!std::isfinite(d.data[i])) {
      throw FormatError(path + ": non-finite value at byte offset " + std::to_string(19 + 4 * i));
    }
  }
  return d;
}

void write_stdf(const Dataset& d, const std::string& path) {
  if (d.data.size() != d.steps * d.nodes * d.channels) throw InputError("write_stdf: payload length mismatch");
  for (std::size_t i = 0; i < d.data.size(); ++i) {
    if (!std::isfinite(d.data[i])) throw InputError("write_stdf: non-finite value at element " + std::to_string(i));
  }
  Writer w;
  w.bytes("STDF", 4);
  w.u8(1);
  w.u32(Writer::checked_u32(d.steps, "T"));
  w.u32(Writer::checked_u32(d.nodes, "N"));
  w.u32(Writer::checked_u32(d.channels, "C"));
  w.u16(d.interval_minutes);
  for (float f : d.data) w.f32(f);
  w.save(path);
}

EdgeList read_adjacency_csv(const std::string& path, std::size_t n_nodes) {
  std::ifstream in(path);
  if (!in) throw InputError("cannot open '" + path + "'");
  std::string line;
  std::size_t lineno = 0;
  if (!std::getline(in, line)) throw InputError(path + ": empty file");
  ++lineno;
  if (!line.empty() && line.back() == '\r') line.pop_back();
  if (line != "from,to,cost") throw InputError(path + ":1: expected header 'from,to,cost'");
  EdgeList edges;
  while (std::getline(in, line)) {
    ++lineno;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line.empty()) continue;
    const std::string where = path + ":" + std::to_string(lineno) + ": ";
    std::stringstream ss(line);
    std::string a, b, c;
    if (!std::getline(ss, a, ',') || !std::getline(ss, b, ',') || !std::getline(ss, c) ||
        c.find(',') != std::string::npos) {
      throw InputError(where + "expected three comma-separated fields");
    }
    auto parse_id = [&](const std::string& s) {
      std::size_t used = 0;
      long long v = -1;
      try {
        v = std::stoll(s, &used);
      } catch (const std::exception&) {
        used = 0;
      }
      if (used != s.size() || s.empty() || v < 0) throw InputError(where + "invalid node id '" + s + "'");
      if (static_cast<std::size_t>(v) >= n_nodes) {
        throw InputError(where + "node id " + s + " out of range for " + std::to_string(n_nodes) + " nodes");
      }
      return static_cast<std::size_t>(v);
    };
    const std::size_t i = parse_id(a), j = parse_id(b);
    try {
      std::size_t used = 0;
      (void)std::stod(c, &used);
      if (used != c.size()) throw std::invalid_argument("cost");
    } catch (const std::exception&) {
      throw InputError(where + "invalid cost '" + c + "'");
    }
    edges.emplace_back(i, j);
  }
  return edges;
}

void write_stgf(const TrafficGraph& g, const std::string& path) {
  check_square(g.a_hat_connection, g.n_nodes, "A_hat_connection");
  check_square(g.a_hat_dtw, g.n_nodes, "A_hat_dtw");
  Writer w;
  w.bytes("STGF", 4);
  w.u8(1);
  w.u32(Writer::checked_u32(g.n_nodes, "N"));
  for (double v : g.a_hat_connection.data()) w.f32(static_cast<float>(v));
  for (double v : g.a_hat_dtw.data()) w.f32(static_cast<float>(v));
  w.save(path);
}

TrafficGraph read_stgf(const std::string& path) {
  Reader r(path);
  r.magic("STGF", 1);
  TrafficGraph g;
  g.n_nodes = r.u32("header");
  if (g.n_nodes == 0) throw FormatError(path + ": header declares zero nodes");
  const std::uint64_t nn = static_cast<std::uint64_t>(g.n_nodes) * g.n_nodes;
  r.need(2 * nn * 4, "payload");
  auto to_tensor = [&](const std::vector<float>& v) {
    Tensor t({g.n_nodes, g.n_nodes});
    for (std::size_t i = 0; i < v.size(); ++i) t[i] = v[i];
    return t;
  };
  g.a_hat_connection = to_tensor(r.f32s(nn, "payload"));
  g.a_hat_dtw = to_tensor(r.f32s(nn, "payload"));
  r.end();
  return g;
}

void save_checkpoint(const std::string& path, const Model& model, const NormStats& norm) {
  Writer w;
  w.bytes("GRMD", 4);
  w.u8(1);
  w.str(to_json(model.config()));
  const auto params = model.params().all();
  w.u32(Writer::checked_u32(params.size() + 2, "record count"));
  auto record = [&](const std::string& name, const Shape& shape, const std::vector<double>& values) {
    w.str(name);
    w.u32(Writer::checked_u32(shape.size(), "rank"));
    for (std::size_t d : shape) w.u32(Writer::checked_u32(d, "dimension"));
    for (double v : values) w.f32(static_cast<float>(v));
  };
  for (const Parameter* p : params) record(p->path, p->value.shape(), p->value.vec());
  record("norm/mean", {norm.mean.size()}, norm.mean);
  record("norm/std", {norm.std.size()}, norm.std);
  w.save(path);
}

std::unique_ptr<Model> load_checkpoint(const std::string& path, NormStats& norm) {
  Reader r(path);
  r.magic("GRMD", 1);
  const std::string json = r.str("config");
  ModelConfig cfg = config_from_json(json);
  auto model = std::make_unique<Model>(cfg, cfg.train.seed);
  const std::uint32_t n = r.u32("record count");
  std::size_t loaded = 0;
  norm = {};
  for (std::uint32_t k = 0; k < n; ++k) {
    const std::uint64_t at = r.pos();
    const std::string name = r.str("record path");
    const std::uint32_t rank = r.u32("record rank");
    r.need(static_cast<std::uint64_t>(rank) * 4, "record shape");
    Shape shape(rank);
    std::uint64_t count = 1;
    for (auto& d : shape) {
      d = r.u32("record shape");
      count *= d;
    }
    const std::vector<float> values = r.f32s(count, "record payload");
    if (name == "norm/mean" || name == "norm/std") {
      auto& dst = name == "norm/mean" ? norm.mean : norm.std;
      dst.assign(values.begin(), values.end());
      continue;
    }
    Parameter* p = model->params().find(name);
    if (p == nullptr) {
      throw FormatError(path + ": unknown parameter '" + name + "' at byte offset " + std::to_string(at));
    }
    if (p->value.shape() != shape) {
      throw FormatError(path + ": parameter '" + name + "' has shape " + shape_str(shape) + ", model expects " +
                        shape_str(p->value.shape()));
    }
    for (std::size_t i = 0; i < values.size(); ++i) p->value[i] = values[i];
    ++loaded;
  }
  r.end();
  if (loaded != model->params().size()) {
    throw FormatError(path + ": checkpoint holds " + std::to_string(loaded) + " of " +
                      std::to_string(model->params().size()) + " parameters");
  }
  if (norm.mean.size() != cfg.raw_channels || norm.std.size() != cfg.raw_channels) {
    throw FormatError(path + ": missing or malformed normalization records");
  }
  return model;
}

}  // namespace gramode
