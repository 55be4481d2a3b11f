// SPDX-License-Identifier: Apache-2.0
#include "qwid/model_io.hpp"

#include <bit>
#include <cstring>
#include <fstream>
#include <iterator>

namespace qwid {

namespace fs = std::filesystem;

namespace {

// Encoders write fixed-width little-endian values independent of the host.
class Writer {
 public:
  void u8(std::uint8_t v) { out_.push_back(static_cast<char>(v)); }
  void u16(std::uint16_t v) { le(v, 2); }
  void u32(std::uint32_t v) { le(v, 4); }
  void u64(std::uint64_t v) { le(v, 8); }
  void i32(std::int32_t v) { le(static_cast<std::uint32_t>(v), 4); }
  void f32(float v) { le(std::bit_cast<std::uint32_t>(v), 4); }
  void f64(double v) { le(std::bit_cast<std::uint64_t>(v), 8); }
  void bytes(const void* p, std::size_t n) { out_.append(static_cast<const char*>(p), n); }

  void count(std::size_t n) {
    if (n > 0xFFFFFFFFu) throw FormatError("serialize: count exceeds 32 bits");
    u32(static_cast<std::uint32_t>(n));
  }

  std::string take() { return std::move(out_); }

 private:
  void le(std::uint64_t v, int n) {
    for (int i = 0; i < n; ++i) out_.push_back(static_cast<char>((v >> (8 * i)) & 0xFF));
  }
  std::string out_;
};

class Reader {
 public:
  explicit Reader(const std::string& s) : s_(s) {}

  std::uint8_t u8() { return static_cast<std::uint8_t>(le(1)); }
  std::uint16_t u16() { return static_cast<std::uint16_t>(le(2)); }
  std::uint32_t u32() { return static_cast<std::uint32_t>(le(4)); }
  std::uint64_t u64() { return le(8); }
  std::int32_t i32() { return static_cast<std::int32_t>(static_cast<std::uint32_t>(le(4))); }
  float f32() { return std::bit_cast<float>(static_cast<std::uint32_t>(le(4))); }
  double f64() { return std::bit_cast<double>(le(8)); }

  void bytes(void* p, std::size_t n) {
    need(n);
    std::memcpy(p, s_.data() + pos_, n);
    pos_ += n;
  }

  void need(std::size_t n) const {
    if (s_.size() - pos_ < n) {
      throw TruncatedError("model file truncated at byte " + std::to_string(pos_) + " (needed " + std::to_string(n) +
                           " more bytes)");
    }
  }
  std::size_t remaining() const { return s_.size() - pos_; }
  std::size_t pos() const { return pos_; }

 private:
  std::uint64_t le(int n) {
    need(static_cast<std::size_t>(n));
    std::uint64_t v = 0;
    for (int i = 0; i < n; ++i) v |= static_cast<std::uint64_t>(static_cast<unsigned char>(s_[pos_ + i])) << (8 * i);
    pos_ += static_cast<std::size_t>(n);
    return v;
  }

  const std::string& s_;
  std::size_t pos_ = 0;
};

void put_shape(Writer& w, const Shape& s) {
  if (s.rank() > 255) throw FormatError("serialize: rank too large");
  w.u8(static_cast<std::uint8_t>(s.rank()));
  for (Index d : s.dims()) w.count(static_cast<std::size_t>(d));
}

Shape get_shape(Reader& r) {
  const std::uint8_t rank = r.u8();
  std::vector<Index> dims;
  std::uint64_t total = 1;
  for (std::uint8_t i = 0; i < rank; ++i) {
    const std::uint32_t d = r.u32();
    if (d == 0) throw FormatError("model file: zero-length tensor dimension");
    dims.push_back(d);
    total *= d;
    // Reject sizes that cannot fit in the remaining bytes before allocating.
    if (total > r.remaining()) r.need(total);
  }
  return Shape(std::move(dims));
}

void put_tensor(Writer& w, const FloatTensor& t) {
  put_shape(w, t.shape());
  for (float v : t.span()) w.f32(v);
}

FloatTensor get_tensor(Reader& r) {
  Shape s = get_shape(r);
  if (s.rank() == 0) return {};
  r.need(static_cast<std::size_t>(s.numel()) * 4);
  FloatTensor t(std::move(s));
  for (auto& v : t.span()) v = r.f32();
  return t;
}

void put_params(Writer& w, const QuantParams& p) {
  if (p.qmin != kInt8Min || p.qmax != kInt8Max) throw FormatError("serialize: only int8 grids are stored");
  w.f64(p.scale);
  w.i32(p.zero_point);
}

QuantParams get_params(Reader& r) {
  QuantParams p;
  p.scale = r.f64();
  p.zero_point = r.i32();
  try {
    p.validate();
  } catch (const ContractError& e) {
    throw FormatError(std::string("model file: invalid quantization parameters: ") + e.what());
  }
  return p;
}

void put_qtensor(Writer& w, const QuantTensor& t) {
  put_shape(w, t.shape());
  if (t.per_tensor()) {
    w.u8(0);
    put_params(w, t.params());
  } else {
    const auto& pc = std::get<PerChannel>(t.scheme());
    w.u8(1);
    w.count(static_cast<std::size_t>(pc.axis));
    w.count(pc.params.size());
    for (const auto& p : pc.params) put_params(w, p);
  }
  w.bytes(t.values().data(), static_cast<std::size_t>(t.size()));
}

QuantTensor get_qtensor(Reader& r) {
  Shape s = get_shape(r);
  const std::uint8_t scheme = r.u8();
  QScheme q;
  if (scheme == 0) {
    q = PerTensor{get_params(r)};
  } else if (scheme == 1) {
    PerChannel pc;
    pc.axis = r.u32();
    const std::uint32_t n = r.u32();
    r.need(static_cast<std::size_t>(n) * 12);
    for (std::uint32_t i = 0; i < n; ++i) pc.params.push_back(get_params(r));
    q = std::move(pc);
  } else {
    throw FormatError("model file: unknown quantization scheme " + std::to_string(scheme));
  }
  r.need(static_cast<std::size_t>(s.numel()));
  Int8Tensor values(std::move(s));
  r.bytes(values.data(), static_cast<std::size_t>(values.size()));
  try {
    return QuantTensor(std::move(values), std::move(q));
  } catch (const Error& e) {
    throw FormatError(std::string("model file: inconsistent quantized tensor: ") + e.what());
  }
}

void put_bn(Writer& w, const BatchNormParams& bn) {
  put_tensor(w, bn.gamma);
  put_tensor(w, bn.beta);
  put_tensor(w, bn.mean);
  put_tensor(w, bn.var);
  w.f32(bn.eps);
  w.f32(bn.momentum);
}

BatchNormParams get_bn(Reader& r) {
  BatchNormParams bn;
  bn.gamma = get_tensor(r);
  bn.beta = get_tensor(r);
  bn.mean = get_tensor(r);
  bn.var = get_tensor(r);
  bn.eps = r.f32();
  bn.momentum = r.f32();
  return bn;
}

void put_node(Writer& w, const LayerGraph& g, const Node& n) {
  w.u8(static_cast<std::uint8_t>(n.kind));
  w.u8(static_cast<std::uint8_t>(n.inputs.size()));
  for (int in : n.inputs) w.i32(in);
  const bool int8 = g.mode == NumericMode::kInt8;

  if (n.has_conv()) {
    w.count(static_cast<std::size_t>(n.conv.stride));
    w.count(static_cast<std::size_t>(n.conv.padding));
  }
  if (n.kind == OpKind::kMaxPool) {
    w.count(static_cast<std::size_t>(n.pool.window));
    w.count(static_cast<std::size_t>(n.pool.stride));
  }
  if (n.has_weights()) {
    if (int8) {
      const auto& q = *n.quantized;
      put_qtensor(w, q.weight);
      w.count(q.bias.size());
      for (auto b : q.bias) w.i32(b);
      w.count(q.requant.multipliers.size());
      for (double m : q.requant.multipliers) w.f64(m);
      w.i32(q.requant.input_zero_point);
    } else {
      put_tensor(w, n.weight);
      put_tensor(w, n.bias);
    }
  }
  if (n.kind == OpKind::kBatchNorm || n.kind == OpKind::kFusedConvBnRelu) put_bn(w, *n.bn);
  if (n.kind == OpKind::kFakeQuant) w.count(static_cast<std::size_t>(*n.observer));
  if (int8) {
    w.u8(n.out_params ? 1 : 0);
    if (n.out_params) put_params(w, *n.out_params);
  }
}

Node get_node(Reader& r, NumericMode mode, int id) {
  Node n;
  n.id = id;
  const std::uint8_t kind = r.u8();
  if (kind > static_cast<std::uint8_t>(OpKind::kConcat)) throw FormatError("model file: unknown node kind " + std::to_string(kind));
  n.kind = static_cast<OpKind>(kind);
  const std::uint8_t inputs = r.u8();
  for (std::uint8_t i = 0; i < inputs; ++i) n.inputs.push_back(r.i32());
  const bool int8 = mode == NumericMode::kInt8;

  if (n.has_conv()) {
    n.conv.stride = r.u32();
    n.conv.padding = r.u32();
  }
  if (n.kind == OpKind::kMaxPool) {
    n.pool.window = r.u32();
    n.pool.stride = r.u32();
  }
  if (n.has_weights()) {
    if (int8) {
      QuantizedLayer q;
      q.weight = get_qtensor(r);
      const std::uint32_t nb = r.u32();
      r.need(static_cast<std::size_t>(nb) * 4);
      for (std::uint32_t i = 0; i < nb; ++i) q.bias.push_back(r.i32());
      const std::uint32_t nm = r.u32();
      r.need(static_cast<std::size_t>(nm) * 8);
      for (std::uint32_t i = 0; i < nm; ++i) q.requant.multipliers.push_back(r.f64());
      q.requant.input_zero_point = r.i32();
      n.quantized = std::move(q);
    } else {
      n.weight = get_tensor(r);
      n.bias = get_tensor(r);
    }
  }
  if (n.kind == OpKind::kBatchNorm || n.kind == OpKind::kFusedConvBnRelu) n.bn = get_bn(r);
  if (n.kind == OpKind::kFakeQuant) n.observer = static_cast<int>(r.u32());
  if (int8) {
    const std::uint8_t has = r.u8();
    if (has > 1) throw FormatError("model file: bad output-params flag");
    if (has) n.out_params = get_params(r);
    if (n.quantized && n.out_params) n.quantized->requant.output = *n.out_params;
  }
  return n;
}

void put_observer(Writer& w, const MinMaxObserver& obs) {
  w.u8(obs.is_per_channel() ? 1 : 0);
  w.u64(obs.count());
  w.count(obs.ranges().size());
  for (const auto& rg : obs.ranges()) {
    w.f64(rg.lo);
    w.f64(rg.hi);
  }
}

MinMaxObserver get_observer(Reader& r) {
  const std::uint8_t per_channel = r.u8();
  if (per_channel > 1) throw FormatError("model file: bad observer kind");
  const std::uint64_t count = r.u64();
  const std::uint32_t n = r.u32();
  r.need(static_cast<std::size_t>(n) * 16);
  std::vector<RealRange> ranges;
  for (std::uint32_t i = 0; i < n; ++i) {
    const double lo = r.f64();
    ranges.push_back({lo, r.f64()});
  }
  return MinMaxObserver::restore(per_channel ? std::optional<Index>(0) : std::nullopt, count, std::move(ranges));
}

}  // namespace

std::string serialize(const LayerGraph& g) {
  validate(g);
  Writer w;
  w.bytes(kModelMagic, 4);
  w.u16(kModelVersion);
  w.u8(static_cast<std::uint8_t>(g.mode));
  w.count(g.nodes.size());
  w.count(static_cast<std::size_t>(g.input.channels));
  w.count(static_cast<std::size_t>(g.input.height));
  w.count(static_cast<std::size_t>(g.input.width));
  for (const auto& n : g.nodes) put_node(w, g, n);
  if (g.mode == NumericMode::kFakeQuant) {
    w.count(g.observers.size());
    for (const auto& obs : g.observers) put_observer(w, obs);
  }
  return w.take();
}

LayerGraph deserialize(const std::string& bytes) {
  Reader r(bytes);
  char magic[4];
  if (bytes.size() < 4) throw TruncatedError("model file shorter than its magic number");
  r.bytes(magic, 4);
  if (std::memcmp(magic, kModelMagic, 4) != 0) throw BadMagicError("not a QWID model file (bad magic)");
  const std::uint16_t version = r.u16();
  if (version != kModelVersion) {
    throw UnsupportedVersionError("unsupported model format version " + std::to_string(version) + " (expected " +
                                  std::to_string(kModelVersion) + ")");
  }
  const std::uint8_t mode = r.u8();
  if (mode > static_cast<std::uint8_t>(NumericMode::kFakeQuant)) throw FormatError("model file: unknown mode " + std::to_string(mode));
  LayerGraph g;
  g.mode = static_cast<NumericMode>(mode);
  const std::uint32_t count = r.u32();
  g.input.channels = r.u32();
  g.input.height = r.u32();
  g.input.width = r.u32();
  if (g.input.channels == 0 || g.input.height == 0 || g.input.width == 0) throw FormatError("model file: empty input shape");
  for (std::uint32_t i = 0; i < count; ++i) g.nodes.push_back(get_node(r, g.mode, static_cast<int>(i)));
  if (g.mode == NumericMode::kFakeQuant) {
    const std::uint32_t n = r.u32();
    for (std::uint32_t i = 0; i < n; ++i) g.observers.push_back(get_observer(r));
  }
  if (r.remaining() != 0) throw FormatError("model file: " + std::to_string(r.remaining()) + " trailing bytes");
  try {
    validate(g);
    infer_shapes(g, 1);
  } catch (const GraphError& e) {
    throw FormatError(std::string("model file describes an invalid graph: ") + e.what());
  } catch (const ShapeError& e) {
    throw FormatError(std::string("model file describes an invalid graph: ") + e.what());
  }
  prepare_int8(g);
  return g;
}

std::uint64_t save(const LayerGraph& g, const fs::path& path) {
  const std::string bytes = serialize(g);
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw IoError("cannot create " + path.string());
  out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
  out.close();
  if (!out) throw IoError("write failed for " + path.string());
  return bytes.size();
}

LayerGraph load(const fs::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open " + path.string());
  const std::string bytes((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
  if (in.bad()) throw IoError("cannot read " + path.string());
  return deserialize(bytes);
}

std::uint64_t model_size_bytes(const fs::path& path) {
  std::error_code ec;
  const auto n = fs::file_size(path, ec);
  if (ec) throw IoError("cannot stat " + path.string() + ": " + ec.message());
  return n;
}

}  // namespace qwid
