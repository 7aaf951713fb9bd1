// Binary weights file: little-endian, "CRCT", u32 version, config as u32s, then f32 tensors
// each preceded by u32 rank and u32 dims.

#include <array>
#include <bit>
#include <cstring>
#include <fstream>
#include <string>

#include "corect/errors.hpp"
#include "corect/model.hpp"

namespace corect {

namespace {

constexpr std::array<char, 4> kMagic{'C', 'R', 'C', 'T'};
constexpr std::uint32_t kVersion = 1;

class Writer {
 public:
  explicit Writer(const std::filesystem::path& path) : out_(path, std::ios::binary | std::ios::trunc) {
    if (!out_) throw IoError("cannot open " + path.string() + " for writing");
  }
  void u32(std::uint32_t v) {
    const std::array<unsigned char, 4> b{static_cast<unsigned char>(v), static_cast<unsigned char>(v >> 8),
                                         static_cast<unsigned char>(v >> 16),
                                         static_cast<unsigned char>(v >> 24)};
    out_.write(reinterpret_cast<const char*>(b.data()), 4);
  }
  void f32(double v) { u32(std::bit_cast<std::uint32_t>(static_cast<float>(v))); }
  void tensor(const Mat& m) {
    u32(2);
    u32(static_cast<std::uint32_t>(m.rows()));
    u32(static_cast<std::uint32_t>(m.cols()));
    for (double v : m.values()) f32(v);
  }
  void tensor(const Vec& v) {
    u32(1);
    u32(static_cast<std::uint32_t>(v.size()));
    for (double x : v) f32(x);
  }
  void raw(const char* data, std::size_t n) { out_.write(data, static_cast<std::streamsize>(n)); }
  void finish(const std::filesystem::path& path) {
    out_.flush();
    if (!out_) throw IoError("write failed for " + path.string());
  }

 private:
  std::ofstream out_;
};

class Reader {
 public:
  explicit Reader(const std::filesystem::path& path) : in_(path, std::ios::binary) {
    if (!in_) throw IoError("cannot open " + path.string());
  }
  void raw(char* data, std::size_t n) {
    in_.read(data, static_cast<std::streamsize>(n));
    if (static_cast<std::size_t>(in_.gcount()) != n) throw TruncationError("weights file ends early");
  }
  std::uint32_t u32() {
    std::array<unsigned char, 4> b{};
    raw(reinterpret_cast<char*>(b.data()), 4);
    return static_cast<std::uint32_t>(b[0]) | (static_cast<std::uint32_t>(b[1]) << 8) |
           (static_cast<std::uint32_t>(b[2]) << 16) | (static_cast<std::uint32_t>(b[3]) << 24);
  }
  double f32() { return static_cast<double>(std::bit_cast<float>(u32())); }
  Mat mat(std::size_t rows, std::size_t cols, const char* name) {
    const std::uint32_t rank = u32();
    if (rank != 2) throw ShapeError(std::string(name) + ": expected rank 2, got " + std::to_string(rank));
    const std::uint32_t r = u32();
    const std::uint32_t c = u32();
    if (r != rows || c != cols) {
      throw ShapeError(std::string(name) + ": expected " + std::to_string(rows) + "x" + std::to_string(cols) +
                       ", got " + std::to_string(r) + "x" + std::to_string(c));
    }
    Mat m(rows, cols);
    for (double& v : m.values()) v = f32();
    return m;
  }
  Vec vec(std::size_t n, const char* name) {
    const std::uint32_t rank = u32();
    if (rank != 1) throw ShapeError(std::string(name) + ": expected rank 1, got " + std::to_string(rank));
    if (u32() != n) throw ShapeError(std::string(name) + ": expected length " + std::to_string(n));
    Vec v(n);
    for (double& x : v) x = f32();
    return v;
  }
  bool at_end() { return in_.peek() == std::ifstream::traits_type::eof(); }

 private:
  std::ifstream in_;
};

}  // namespace

void save_weights(const ModelWeights& w, const std::filesystem::path& path) {
  w.validate();
  Writer out(path);
  out.raw(kMagic.data(), kMagic.size());
  out.u32(kVersion);
  const ModelConfig& c = w.cfg;
  for (int v : {c.L, c.d, c.H, c.d_ff, c.vocab, c.max_seq}) out.u32(static_cast<std::uint32_t>(v));
  out.u32(static_cast<std::uint32_t>(c.activation));
  out.tensor(w.W_E);
  out.tensor(w.W_U);
  for (const LayerWeights& lw : w.layers) {
    for (const Mat* m : {&lw.W_Q, &lw.W_K, &lw.W_V, &lw.W_O, &lw.W_up, &lw.W_down}) out.tensor(*m);
    for (const Vec* v : {&lw.ln1_gain, &lw.ln1_bias, &lw.ln2_gain, &lw.ln2_bias}) out.tensor(*v);
  }
  out.tensor(w.lnf_gain);
  out.tensor(w.lnf_bias);
  out.tensor(w.pos);
  out.finish(path);
}

ModelWeights load_weights(const std::filesystem::path& path) {
  Reader in(path);
  std::array<char, 4> magic{};
  in.raw(magic.data(), magic.size());
  if (magic != kMagic) throw FormatError(path.string() + ": bad magic bytes");
  const std::uint32_t version = in.u32();
  if (version != kVersion) throw FormatError(path.string() + ": unsupported version " + std::to_string(version));
  ModelConfig c;
  int* fields[] = {&c.L, &c.d, &c.H, &c.d_ff, &c.vocab, &c.max_seq};
  for (int* f : fields) {
    const std::uint32_t v = in.u32();
    if (v == 0 || v > (1u << 24)) throw FormatError(path.string() + ": implausible config value");
    *f = static_cast<int>(v);
  }
  const std::uint32_t act = in.u32();
  if (act > 1) throw FormatError(path.string() + ": unknown activation code " + std::to_string(act));
  c.activation = static_cast<Activation>(act);
  try {
    c.validate();
  } catch (const ValidationError& e) {
    throw FormatError(path.string() + ": " + e.what());
  }

  const auto d = static_cast<std::size_t>(c.d);
  const auto ff = static_cast<std::size_t>(c.d_ff);
  ModelWeights w;
  w.cfg = c;
  w.W_E = in.mat(d, static_cast<std::size_t>(c.vocab), "W_E");
  w.W_U = in.mat(static_cast<std::size_t>(c.vocab), d, "W_U");
  for (int l = 0; l < c.L; ++l) {
    LayerWeights lw;
    lw.W_Q = in.mat(d, d, "W_Q");
    lw.W_K = in.mat(d, d, "W_K");
    lw.W_V = in.mat(d, d, "W_V");
    lw.W_O = in.mat(d, d, "W_O");
    lw.W_up = in.mat(ff, d, "W_up");
    lw.W_down = in.mat(d, ff, "W_down");
    lw.ln1_gain = in.vec(d, "ln1_gain");
    lw.ln1_bias = in.vec(d, "ln1_bias");
    lw.ln2_gain = in.vec(d, "ln2_gain");
    lw.ln2_bias = in.vec(d, "ln2_bias");
    w.layers.push_back(std::move(lw));
  }
  w.lnf_gain = in.vec(d, "lnf_gain");
  w.lnf_bias = in.vec(d, "lnf_bias");
  w.pos = in.mat(static_cast<std::size_t>(c.max_seq), d, "pos");
  if (!in.at_end()) throw FormatError(path.string() + ": trailing bytes after last tensor");
  try {
    w.validate();
  } catch (const ValidationError& e) {
    throw FormatError(path.string() + ": " + e.what());
  }
  return w;
}

}  // namespace corect
