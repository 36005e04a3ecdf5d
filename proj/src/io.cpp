#include "segnext/io.hpp"

#include <bit>
#include <cmath>
#include <cstdio>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <sstream>

namespace segnext {

static_assert(std::endian::native == std::endian::little, "checkpoint I/O assumes a little-endian host");

namespace {

uint64_t fnv1a(std::string_view bytes) {
  uint64_t h = 0xcbf29ce484222325ull;
  for (unsigned char c : bytes) {
    h ^= c;
    h *= 0x100000001b3ull;
  }
  return h;
}

class Writer {
 public:
  template <class U>
  void pod(U v) {
    buf_.append(reinterpret_cast<const char*>(&v), sizeof v);
  }
  void str(std::string_view s) {
    pod<uint64_t>(s.size());
    buf_.append(s);
  }
  void floats(std::span<const float> v) { buf_.append(reinterpret_cast<const char*>(v.data()), v.size_bytes()); }
  std::string& bytes() { return buf_; }

 private:
  std::string buf_;
};

class Reader {
 public:
  explicit Reader(std::string_view b) : b_(b) {}
  template <class U>
  U pod() {
    need(sizeof(U));
    U v;
    std::memcpy(&v, b_.data() + pos_, sizeof v);
    pos_ += sizeof v;
    return v;
  }
  std::string str() {
    const auto n = pod<uint64_t>();
    need(n);
    std::string s(b_.substr(pos_, n));
    pos_ += n;
    return s;
  }
  void floats(std::span<float> out) {
    need(out.size_bytes());
    std::memcpy(out.data(), b_.data() + pos_, out.size_bytes());
    pos_ += out.size_bytes();
  }
  size_t pos() const { return pos_; }

 private:
  void need(uint64_t n) const {
    if (n > b_.size() - pos_) throw Error("checkpoint truncated");
  }
  std::string_view b_;
  size_t pos_ = 0;
};

void write_table(Writer& w, const std::vector<std::string>& names, const std::vector<Tensor>& values) {
  w.pod<uint32_t>(static_cast<uint32_t>(values.size()));
  for (size_t i = 0; i < values.size(); ++i) {
    w.str(names[i]);
    const Shape s = values[i].shape();
    for (int64_t d : {s.n, s.c, s.h, s.w}) w.pod<int64_t>(d);
    w.floats(values[i].data());
  }
}

std::vector<Tensor> read_table(Reader& r, const std::vector<std::string>& names, const char* what) {
  const auto count = r.pod<uint32_t>();
  if (count != names.size()) {
    throw Error(std::string("checkpoint ") + what + " table has " + std::to_string(count) + " entries, model expects " +
                std::to_string(names.size()));
  }
  std::vector<Tensor> out;
  out.reserve(count);
  for (size_t i = 0; i < count; ++i) {
    const std::string name = r.str();
    if (name != names[i]) throw Error("checkpoint entry " + std::to_string(i) + " is '" + name + "', expected '" + names[i] + "'");
    Shape s{r.pod<int64_t>(), r.pod<int64_t>(), r.pod<int64_t>(), r.pod<int64_t>()};
    if (s.n < 0 || s.c < 0 || s.h < 0 || s.w < 0) throw Error("checkpoint entry '" + name + "' has a negative dimension");
    Tensor t(s);
    r.floats(t.mutable_data());
    out.push_back(std::move(t));
  }
  return out;
}

}  // namespace

std::string encode_checkpoint(const RunConfig& cfg, const SegModel<float>& model, const OptimState<float>* optim) {
  Writer w;
  w.bytes().append("SGNX", 4);
  w.pod<uint32_t>(kCheckpointVersion);
  w.str(serialize_config(cfg));
  std::vector<std::string> pnames, bnames;
  for (const auto& p : model.registry().params()) pnames.push_back(p.name);
  for (const auto& b : model.registry().buffers()) bnames.push_back(b.name);
  write_table(w, pnames, model.store().params);
  write_table(w, bnames, model.store().buffers);
  w.pod<uint8_t>(optim ? 1 : 0);
  if (optim) {
    w.pod<int64_t>(optim->step);
    for (const auto& t : optim->m) w.floats(t.data());
    for (const auto& t : optim->v) w.floats(t.data());
  }
  w.pod<uint64_t>(fnv1a(w.bytes()));
  return std::move(w.bytes());
}

LoadedCheckpoint decode_checkpoint(std::string_view bytes) {
  if (bytes.size() < 8 || bytes.substr(0, 4) != "SGNX") throw Error("not a checkpoint (bad magic)");
  uint32_t version = 0;
  std::memcpy(&version, bytes.data() + 4, 4);
  if (version != kCheckpointVersion) {
    throw Error("checkpoint format version " + std::to_string(version) + " is not supported (expected " +
                std::to_string(kCheckpointVersion) + ")");
  }
  if (bytes.size() < 16) throw Error("checkpoint truncated");
  uint64_t stored = 0;
  std::memcpy(&stored, bytes.data() + bytes.size() - 8, 8);
  const auto body = bytes.substr(0, bytes.size() - 8);
  if (fnv1a(body) != stored) throw Error("checkpoint checksum mismatch (file corrupt or truncated)");

  Reader r(body);
  r.pod<uint32_t>();
  r.pod<uint32_t>();
  LoadedCheckpoint out;
  out.config = parse_config(r.str());
  auto arch = Architecture::build(out.config.model);
  std::vector<std::string> pnames, bnames;
  for (const auto& p : arch->registry.params()) pnames.push_back(p.name);
  for (const auto& b : arch->registry.buffers()) bnames.push_back(b.name);
  ParamStore<float> store;
  store.params = read_table(r, pnames, "parameter");
  store.buffers = read_table(r, bnames, "buffer");
  for (size_t i = 0; i < pnames.size(); ++i) {
    if (store.params[i].shape() != arch->registry.params()[i].shape) {
      throw Error("checkpoint parameter '" + pnames[i] + "' has shape " + store.params[i].shape().str());
    }
  }
  for (size_t i = 0; i < bnames.size(); ++i) {
    if (store.buffers[i].shape() != arch->registry.buffers()[i].shape) {
      throw Error("checkpoint buffer '" + bnames[i] + "' has shape " + store.buffers[i].shape().str());
    }
  }
  const auto has_optim = r.pod<uint8_t>();
  if (has_optim > 1) throw Error("checkpoint optimizer flag is invalid");
  if (has_optim) {
    auto st = OptimState<float>::create(store.params, AdamWOptions{out.config.train.adamw});
    st.step = r.pod<int64_t>();
    for (auto& t : st.m) r.floats(t.mutable_data());
    for (auto& t : st.v) r.floats(t.mutable_data());
    out.optim = std::move(st);
  }
  if (r.pos() != body.size()) throw Error("checkpoint has trailing bytes");
  out.model = SegModel<float>(std::move(arch), std::move(store));
  return out;
}

std::string read_file(const std::string& path) {
  std::ifstream f(path, std::ios::binary);
  if (!f) throw Error("cannot open '" + path + "'");
  std::ostringstream ss;
  ss << f.rdbuf();
  return ss.str();
}

void write_file_atomic(const std::string& path, std::string_view bytes) {
  const std::string tmp = path + ".tmp";
  {
    std::ofstream f(tmp, std::ios::binary | std::ios::trunc);
    if (!f) throw Error("cannot write '" + tmp + "'");
    f.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
    f.flush();
    if (!f) throw Error("write to '" + tmp + "' failed");
  }
  std::error_code ec;
  std::filesystem::rename(tmp, path, ec);
  if (ec) throw Error("cannot rename '" + tmp + "' to '" + path + "': " + ec.message());
}

void save_checkpoint(const std::string& path, const RunConfig& cfg, const SegModel<float>& model,
                     const OptimState<float>* optim) {
  write_file_atomic(path, encode_checkpoint(cfg, model, optim));
}

LoadedCheckpoint load_checkpoint(const std::string& path) {
  try {
    return decode_checkpoint(read_file(path));
  } catch (const Error& e) {
    throw Error(path + ": " + e.what());
  }
}

namespace {

struct NetpbmHeader {
  int64_t w = 0, h = 0;
  size_t data_offset = 0;
};

NetpbmHeader parse_netpbm(std::string_view b, std::string_view magic) {
  if (b.size() < 2 || b.substr(0, 2) != magic) throw Error("expected a " + std::string(magic) + " header");
  size_t pos = 2;
  auto token = [&]() -> int64_t {
    while (pos < b.size()) {
      if (b[pos] == '#') {
        while (pos < b.size() && b[pos] != '\n') ++pos;
      } else if (std::isspace(static_cast<unsigned char>(b[pos]))) {
        ++pos;
      } else {
        break;
      }
    }
    if (pos >= b.size() || !std::isdigit(static_cast<unsigned char>(b[pos]))) {
      throw Error("malformed " + std::string(magic) + " header");
    }
    int64_t v = 0;
    while (pos < b.size() && std::isdigit(static_cast<unsigned char>(b[pos]))) {
      v = v * 10 + (b[pos] - '0');
      if (v > (int64_t{1} << 30)) throw Error(std::string(magic) + " header value too large");
      ++pos;
    }
    return v;
  };
  NetpbmHeader h;
  h.w = token();
  h.h = token();
  const int64_t maxval = token();
  if (h.w < 1 || h.h < 1) throw Error(std::string(magic) + " image has zero size");
  if (maxval != 255) throw Error(std::string(magic) + " maxval must be 255, got " + std::to_string(maxval));
  if (pos >= b.size() || !std::isspace(static_cast<unsigned char>(b[pos]))) {
    throw Error("malformed " + std::string(magic) + " header");
  }
  h.data_offset = pos + 1;
  if (h.w * h.h > (int64_t{1} << 28)) throw Error(std::string(magic) + " image too large");
  return h;
}

}  // namespace

Tensor decode_ppm(std::string_view b) {
  const auto hd = parse_netpbm(b, "P6");
  const auto plane = static_cast<size_t>(hd.w * hd.h);
  if (b.size() - hd.data_offset < 3 * plane) throw Error("P6 pixel data truncated");
  Tensor img(Shape{1, 3, hd.h, hd.w});
  auto o = img.mutable_data();
  for (size_t p = 0; p < plane; ++p) {
    for (size_t c = 0; c < 3; ++c) {
      o[c * plane + p] = static_cast<float>(static_cast<unsigned char>(b[hd.data_offset + 3 * p + c])) / 255.0f;
    }
  }
  return img;
}

std::string encode_ppm(const Tensor& image) {
  const Shape s = image.shape();
  if (s.n != 1 || s.c != 3) throw Error("encode_ppm: expected a 1 x 3 x H x W image, got " + s.str());
  std::string out = "P6\n" + std::to_string(s.w) + " " + std::to_string(s.h) + "\n255\n";
  const auto plane = static_cast<size_t>(s.h * s.w);
  const auto in = image.data();
  for (size_t p = 0; p < plane; ++p) {
    for (size_t c = 0; c < 3; ++c) {
      const double v = std::clamp(static_cast<double>(in[c * plane + p]), 0.0, 1.0);
      out.push_back(static_cast<char>(static_cast<unsigned char>(std::lround(v * 255.0))));
    }
  }
  return out;
}

LabelMap decode_pgm(std::string_view b) {
  const auto hd = parse_netpbm(b, "P5");
  const auto n = static_cast<size_t>(hd.w * hd.h);
  if (b.size() - hd.data_offset < n) throw Error("P5 pixel data truncated");
  LabelMap m(hd.h, hd.w);
  std::memcpy(m.data.data(), b.data() + hd.data_offset, n);
  return m;
}

std::string encode_pgm(const LabelMap& m) {
  std::string out = "P5\n" + std::to_string(m.w) + " " + std::to_string(m.h) + "\n255\n";
  out.append(reinterpret_cast<const char*>(m.data.data()), m.data.size());
  return out;
}

Tensor read_ppm(const std::string& path) {
  try {
    return decode_ppm(read_file(path));
  } catch (const Error& e) {
    throw Error(path + ": " + e.what());
  }
}
void write_ppm(const std::string& path, const Tensor& image) { write_file_atomic(path, encode_ppm(image)); }
LabelMap read_pgm(const std::string& path) {
  try {
    return decode_pgm(read_file(path));
  } catch (const Error& e) {
    throw Error(path + ": " + e.what());
  }
}
void write_pgm(const std::string& path, const LabelMap& labels) { write_file_atomic(path, encode_pgm(labels)); }

}  // namespace segnext
