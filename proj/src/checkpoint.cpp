#include "annealprune/checkpoint.hpp"

#include <bit>
#include <cstring>
#include <fstream>
#include <sstream>

#include "annealprune/error.hpp"

namespace annealprune {

namespace {

constexpr char kMagic[8] = {'A', 'P', 'C', 'H', 'K', 'P', 'T', '1'};
constexpr std::uint32_t kVersion = 1;

constexpr std::uint32_t kSecNetwork = 0x5754454Eu;   // "NETW"
constexpr std::uint32_t kSecParams = 0x4D524150u;    // "PARM"
constexpr std::uint32_t kSecMask = 0x4B53414Du;      // "MASK"
constexpr std::uint32_t kSecProgress = 0x524E5254u;  // "TRNR"

class Writer {
 public:
  void u8(std::uint8_t v) { buf_.push_back(static_cast<char>(v)); }
  void u32(std::uint32_t v) { raw(&v, 4); }
  void u64(std::uint64_t v) { raw(&v, 8); }
  void f32(float v) { raw(&v, 4); }
  void f64(double v) { raw(&v, 8); }
  void str(const std::string& s) {
    u8(static_cast<std::uint8_t>(s.size()));
    buf_.append(s);
  }
  void raw(const void* p, std::size_t n) {
    buf_.append(static_cast<const char*>(p), n);
  }
  const std::string& bytes() const { return buf_; }

 private:
  std::string buf_;
};

class Reader {
 public:
  Reader(const char* data, std::size_t len) : data_(data), len_(len) {}

  std::uint8_t u8() { return static_cast<std::uint8_t>(*take(1)); }
  std::uint32_t u32() {
    std::uint32_t v;
    std::memcpy(&v, take(4), 4);
    return v;
  }
  std::uint64_t u64() {
    std::uint64_t v;
    std::memcpy(&v, take(8), 8);
    return v;
  }
  float f32() {
    float v;
    std::memcpy(&v, take(4), 4);
    return v;
  }
  double f64() {
    double v;
    std::memcpy(&v, take(8), 8);
    return v;
  }
  std::string str() {
    const std::size_t n = u8();
    return std::string(take(n), n);
  }
  const char* take(std::size_t n) {
    if (pos_ + n > len_) throw FormatError("checkpoint: truncated section");
    const char* p = data_ + pos_;
    pos_ += n;
    return p;
  }
  bool done() const { return pos_ == len_; }

 private:
  const char* data_;
  std::size_t len_;
  std::size_t pos_ = 0;
};

void write_shape(Writer& w, const std::vector<std::size_t>& shape) {
  w.u8(static_cast<std::uint8_t>(shape.size()));
  for (std::size_t d : shape) w.u64(d);
}

std::vector<std::size_t> read_shape(Reader& r) {
  const std::size_t rank = r.u8();
  std::vector<std::size_t> shape(rank);
  for (auto& d : shape) d = r.u64();
  return shape;
}

// mask != nullptr selects sparse storage of the entries where
// mask[mask_offset + j] == 0.
void write_tensor_payload(Writer& w, const Tensor& t,
                          const std::vector<std::uint8_t>* mask,
                          std::size_t mask_offset) {
  write_shape(w, t.shape);
  w.u8(mask != nullptr ? 1 : 0);
  if (mask == nullptr) {
    w.raw(t.data.data(), t.data.size() * sizeof(float));
    return;
  }
  const SparsePayload p = sparse_encode_kept(t, *mask, mask_offset);
  const std::uint8_t index_width = p.total <= UINT32_MAX ? 4 : 8;
  w.u64(p.indices.size());
  w.u8(index_width);
  for (std::uint64_t idx : p.indices) {
    if (index_width == 4) {
      w.u32(static_cast<std::uint32_t>(idx));
    } else {
      w.u64(idx);
    }
  }
  w.raw(p.values.data(), p.values.size() * sizeof(float));
}

Tensor read_tensor_payload(Reader& r, bool* was_sparse,
                           std::size_t* stored_count) {
  const std::vector<std::size_t> shape = read_shape(r);
  const std::size_t numel = shape_numel(shape);
  const bool sparse = r.u8() != 0;
  if (was_sparse) *was_sparse = sparse;
  if (!sparse) {
    if (stored_count) *stored_count = numel;
    Tensor t(shape);
    std::memcpy(t.data.data(), r.take(numel * sizeof(float)),
                numel * sizeof(float));
    return t;
  }
  SparsePayload p;
  p.total = numel;
  const std::uint64_t nnz = r.u64();
  const std::uint8_t index_width = r.u8();
  if (index_width != 4 && index_width != 8) {
    throw FormatError("checkpoint: bad sparse index width");
  }
  if (stored_count) *stored_count = nnz;
  p.indices.resize(nnz);
  for (auto& idx : p.indices) {
    idx = index_width == 4 ? r.u32() : r.u64();
  }
  p.values.resize(nnz);
  if (nnz > 0) {
    std::memcpy(p.values.data(), r.take(nnz * sizeof(float)),
                nnz * sizeof(float));
  }
  return sparse_decode(p, shape);
}

void write_section(std::ostream& out, std::uint32_t tag,
                   const std::string& payload) {
  const std::uint64_t len = payload.size();
  const std::uint32_t crc = crc32(payload.data(), payload.size());
  out.write(reinterpret_cast<const char*>(&tag), 4);
  out.write(reinterpret_cast<const char*>(&len), 8);
  out.write(payload.data(), static_cast<std::streamsize>(payload.size()));
  out.write(reinterpret_cast<const char*>(&crc), 4);
}

std::string spec_section(const Network& net) {
  Writer w;
  write_shape(w, net.input_shape());
  w.u32(static_cast<std::uint32_t>(net.specs().size()));
  for (const LayerSpec& s : net.specs()) {
    w.u8(static_cast<std::uint8_t>(s.kind));
    w.u64(s.filters);
    w.u8(s.padding == Padding::Same ? 0 : 1);
    w.u64(s.units);
    w.f32(s.dropout_q);
  }
  return w.bytes();
}

std::string mask_section(const MaskState& m) {
  Writer w;
  w.u64(m.target_layer);
  w.f64(m.hp.keep_fraction);
  w.f64(m.hp.mu);
  w.u64(m.hp.start);
  w.u64(m.hp.post);
  w.f64(m.hp.reentry_b0);
  w.u8(m.hp.mode == PruneMode::Largest ? 0 : 1);
  w.u64(m.schedule.total);
  w.u64(m.schedule.keep);
  w.u64(m.schedule.iterations);
  w.f64(m.schedule.mu);
  w.u8(m.frozen ? 1 : 0);
  w.u8(m.initialized ? 1 : 0);
  w.u64(m.last_epoch);
  w.u64(m.total_epochs);
  w.u64(m.rng.seed());
  for (std::uint64_t s : m.rng.state()) w.u64(s);
  w.u64(m.mask.size());
  // Mask bits packed 8 per byte.
  std::string bits((m.mask.size() + 7) / 8, '\0');
  for (std::size_t j = 0; j < m.mask.size(); ++j) {
    if (m.mask[j]) bits[j / 8] |= static_cast<char>(1u << (j % 8));
  }
  w.raw(bits.data(), bits.size());
  return w.bytes();
}

MaskState read_mask_section(Reader& r) {
  MaskState m;
  m.target_layer = r.u64();
  m.hp.keep_fraction = r.f64();
  m.hp.mu = r.f64();
  m.hp.start = r.u64();
  m.hp.post = r.u64();
  m.hp.reentry_b0 = r.f64();
  m.hp.mode = r.u8() == 0 ? PruneMode::Largest : PruneMode::Smallest;
  m.schedule.total = r.u64();
  m.schedule.keep = r.u64();
  m.schedule.iterations = r.u64();
  m.schedule.mu = r.f64();
  m.frozen = r.u8() != 0;
  m.initialized = r.u8() != 0;
  m.last_epoch = r.u64();
  m.total_epochs = r.u64();
  const std::uint64_t seed = r.u64();
  std::array<std::uint64_t, 4> state;
  for (auto& s : state) s = r.u64();
  m.rng.restore(seed, state);
  const std::uint64_t bits = r.u64();
  m.mask.assign(bits, 0);
  const char* packed = r.take((bits + 7) / 8);
  for (std::uint64_t j = 0; j < bits; ++j) {
    m.mask[j] =
        (static_cast<unsigned char>(packed[j / 8]) >> (j % 8)) & 1u;
  }
  return m;
}

}  // namespace

std::uint32_t crc32(const void* data, std::size_t len) {
  static const auto table = [] {
    std::array<std::uint32_t, 256> t{};
    for (std::uint32_t i = 0; i < 256; ++i) {
      std::uint32_t c = i;
      for (int k = 0; k < 8; ++k) {
        c = (c & 1u) ? 0xEDB88320u ^ (c >> 1) : c >> 1;
      }
      t[i] = c;
    }
    return t;
  }();
  std::uint32_t c = 0xFFFFFFFFu;
  const auto* p = static_cast<const unsigned char*>(data);
  for (std::size_t i = 0; i < len; ++i) {
    c = table[(c ^ p[i]) & 0xFFu] ^ (c >> 8);
  }
  return c ^ 0xFFFFFFFFu;
}

SparsePayload sparse_encode(const Tensor& t) {
  SparsePayload p;
  p.total = t.numel();
  for (std::size_t j = 0; j < t.numel(); ++j) {
    if (std::bit_cast<std::uint32_t>(t.data[j]) != 0u) {
      p.indices.push_back(j);
      p.values.push_back(t.data[j]);
    }
  }
  return p;
}

SparsePayload sparse_encode_kept(const Tensor& t,
                                 const std::vector<std::uint8_t>& mask,
                                 std::size_t first) {
  if (first + t.numel() > mask.size()) {
    throw DimensionError("sparse_encode_kept: mask slice out of range");
  }
  SparsePayload p;
  p.total = t.numel();
  for (std::size_t j = 0; j < t.numel(); ++j) {
    if (mask[first + j]) {
      if (std::bit_cast<std::uint32_t>(t.data[j]) != 0u) {
        throw StateError("sparse_encode_kept: pruned parameter is nonzero");
      }
      continue;
    }
    p.indices.push_back(j);
    p.values.push_back(t.data[j]);
  }
  return p;
}

Tensor sparse_decode(const SparsePayload& p,
                     const std::vector<std::size_t>& shape) {
  if (shape_numel(shape) != p.total) {
    throw DimensionError("sparse_decode: shape does not match total");
  }
  if (p.indices.size() != p.values.size()) {
    throw FormatError("sparse payload: index/value count mismatch");
  }
  Tensor t(shape);
  std::uint64_t prev = 0;
  for (std::size_t j = 0; j < p.indices.size(); ++j) {
    const std::uint64_t idx = p.indices[j];
    if (idx >= p.total || (j > 0 && idx <= prev)) {
      throw FormatError("sparse payload: indices not strictly increasing");
    }
    prev = idx;
    t.data[idx] = p.values[j];
  }
  return t;
}

void save_checkpoint(const std::string& path, Network& net,
                     const MaskState* mask, std::uint64_t epoch,
                     std::uint64_t run_seed) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw FormatError("cannot open " + path + " for writing");
  out.write(kMagic, 8);
  out.write(reinterpret_cast<const char*>(&kVersion), 4);

  write_section(out, kSecNetwork, spec_section(net));

  Writer params;
  for (std::size_t i = 0; i < net.layer_count(); ++i) {
    const bool sparse =
        mask != nullptr && mask->frozen && mask->target_layer == i;
    auto refs = net.params_of(i);
    params.u8(static_cast<std::uint8_t>(refs.size()));
    std::size_t offset = 0;
    for (const ParamRef& ref : refs) {
      params.str(ref.name);
      write_tensor_payload(params, *ref.value,
                           sparse ? &mask->mask : nullptr, offset);
      offset += ref.value->numel();
    }
  }
  write_section(out, kSecParams, params.bytes());

  if (mask != nullptr) {
    write_section(out, kSecMask, mask_section(*mask));
  }

  Writer progress;
  progress.u64(epoch);
  progress.u64(run_seed);
  write_section(out, kSecProgress, progress.bytes());
  if (!out) throw FormatError("failed writing " + path);
}

LoadedCheckpoint load_checkpoint(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw FormatError("cannot open checkpoint " + path);
  std::ostringstream ss;
  ss << in.rdbuf();
  const std::string bytes = ss.str();
  if (bytes.size() < 12 || std::memcmp(bytes.data(), kMagic, 8) != 0) {
    throw FormatError(path + ": not a checkpoint file");
  }
  std::uint32_t version;
  std::memcpy(&version, bytes.data() + 8, 4);
  if (version != kVersion) {
    throw FormatError(path + ": unsupported checkpoint version " +
                      std::to_string(version));
  }

  struct Section {
    std::uint32_t tag;
    std::string payload;
  };
  std::vector<Section> sections;
  std::size_t pos = 12;
  while (pos < bytes.size()) {
    if (pos + 12 > bytes.size()) {
      throw FormatError(path + ": truncated section header");
    }
    std::uint32_t tag;
    std::uint64_t len;
    std::memcpy(&tag, bytes.data() + pos, 4);
    std::memcpy(&len, bytes.data() + pos + 4, 8);
    pos += 12;
    if (pos + len + 4 > bytes.size()) {
      throw FormatError(path + ": truncated section payload");
    }
    std::string payload = bytes.substr(pos, len);
    pos += len;
    std::uint32_t crc;
    std::memcpy(&crc, bytes.data() + pos, 4);
    pos += 4;
    if (crc32(payload.data(), payload.size()) != crc) {
      throw FormatError(path + ": section checksum mismatch");
    }
    sections.push_back({tag, std::move(payload)});
  }

  const auto find = [&](std::uint32_t tag) -> const std::string* {
    for (const auto& s : sections) {
      if (s.tag == tag) return &s.payload;
    }
    return nullptr;
  };

  const std::string* netw = find(kSecNetwork);
  const std::string* parm = find(kSecParams);
  const std::string* prog = find(kSecProgress);
  if (netw == nullptr || parm == nullptr || prog == nullptr) {
    throw FormatError(path + ": missing required section");
  }

  Reader nr(netw->data(), netw->size());
  const std::vector<std::size_t> input_shape = read_shape(nr);
  const std::uint32_t layer_count = nr.u32();
  std::vector<LayerSpec> specs;
  specs.reserve(layer_count);
  for (std::uint32_t i = 0; i < layer_count; ++i) {
    LayerSpec s{static_cast<LayerKind>(nr.u8())};
    s.filters = nr.u64();
    s.padding = nr.u8() == 0 ? Padding::Same : Padding::Valid;
    s.units = nr.u64();
    s.dropout_q = nr.f32();
    specs.push_back(s);
  }

  Rng scratch(0);
  LoadedCheckpoint loaded{Network(specs, input_shape, scratch),
                          std::nullopt,
                          0,
                          0,
                          {},
                          {}};
  loaded.stored_sparse.assign(loaded.net.layer_count(), 0);
  loaded.stored_counts.assign(loaded.net.layer_count(), 0);

  Reader pr(parm->data(), parm->size());
  for (std::size_t i = 0; i < loaded.net.layer_count(); ++i) {
    const std::size_t tensor_count = pr.u8();
    auto refs = loaded.net.params_of(i);
    if (tensor_count != refs.size()) {
      throw FormatError(path + ": layer " + std::to_string(i) +
                        " parameter count mismatch");
    }
    for (ParamRef& ref : refs) {
      const std::string name = pr.str();
      if (name != ref.name) {
        throw FormatError(path + ": unexpected parameter '" + name + "'");
      }
      bool sparse = false;
      std::size_t stored = 0;
      Tensor t = read_tensor_payload(pr, &sparse, &stored);
      if (t.shape != ref.value->shape) {
        throw FormatError(path + ": parameter shape mismatch in layer " +
                          std::to_string(i));
      }
      *ref.value = std::move(t);
      if (sparse) loaded.stored_sparse[i] = 1;
      loaded.stored_counts[i] += stored;
    }
  }
  if (!pr.done()) throw FormatError(path + ": trailing parameter bytes");

  if (const std::string* msk = find(kSecMask)) {
    Reader mr(msk->data(), msk->size());
    loaded.mask = read_mask_section(mr);
  }

  Reader gr(prog->data(), prog->size());
  loaded.epoch = gr.u64();
  loaded.run_seed = gr.u64();
  return loaded;
}

CompressionReport compression_report(const std::string& checkpoint_path) {
  LoadedCheckpoint loaded = load_checkpoint(checkpoint_path);
  CompressionReport rep;
  for (std::size_t i = 0; i < loaded.net.layer_count(); ++i) {
    LayerCompression lc;
    lc.layer = i;
    lc.kind = layer_kind_name(loaded.net.specs()[i].kind);
    lc.params = loaded.net.layer_parameter_count(i);
    lc.sparse = loaded.stored_sparse[i] != 0;
    std::size_t nnz = 0;
    for (const ParamRef& ref : loaded.net.params_of(i)) {
      for (float v : ref.value->data) {
        if (std::bit_cast<std::uint32_t>(v) != 0u) ++nnz;
      }
    }
    lc.nonzeros = nnz;
    lc.effective_params =
        lc.sparse ? loaded.stored_counts[i] : lc.params;
    lc.dense_bytes = lc.params * sizeof(float);
    const std::size_t index_width = lc.params <= UINT32_MAX ? 4 : 8;
    lc.actual_bytes =
        lc.sparse
            ? 8 + loaded.stored_counts[i] * (index_width + sizeof(float))
            : lc.params * sizeof(float);
    rep.layers.push_back(lc);
    rep.total_params += lc.params;
    rep.total_effective += lc.effective_params;
    rep.total_dense_bytes += lc.dense_bytes;
    rep.total_actual_bytes += lc.actual_bytes;
  }
  rep.reduction =
      rep.total_params == 0
          ? 0.0
          : 1.0 - static_cast<double>(rep.total_effective) /
                      static_cast<double>(rep.total_params);
  return rep;
}

std::string format_compression_table(const CompressionReport& rep) {
  std::ostringstream os;
  os << "layer  kind        params      after-pruning  stored  bytes\n";
  char line[160];
  for (const auto& lc : rep.layers) {
    std::snprintf(line, sizeof(line), "%-6zu %-11s %-11zu %-14zu %-7s %zu\n",
                  lc.layer, lc.kind.c_str(), lc.params, lc.effective_params,
                  lc.sparse ? "sparse" : "dense", lc.actual_bytes);
    os << line;
  }
  std::snprintf(line, sizeof(line), "total  %-11s %-11zu %-14zu %-7s %zu\n",
                "", rep.total_params, rep.total_effective, "",
                rep.total_actual_bytes);
  os << line;
  std::snprintf(line, sizeof(line), "parameter reduction: %.1f%%\n",
                100.0 * rep.reduction);
  os << line;
  return os.str();
}

std::string format_compression_kv(const CompressionReport& rep) {
  std::ostringstream os;
  os << "total_params=" << rep.total_params << '\n'
     << "total_after_pruning=" << rep.total_effective << '\n'
     << "total_dense_bytes=" << rep.total_dense_bytes << '\n'
     << "total_actual_bytes=" << rep.total_actual_bytes << '\n';
  char buf[64];
  std::snprintf(buf, sizeof(buf), "reduction=%.6f", rep.reduction);
  os << buf << '\n';
  for (const auto& lc : rep.layers) {
    os << "layer" << lc.layer << "_kind=" << lc.kind << '\n'
       << "layer" << lc.layer << "_params=" << lc.params << '\n'
       << "layer" << lc.layer << "_after_pruning=" << lc.effective_params
       << '\n'
       << "layer" << lc.layer << "_nonzeros=" << lc.nonzeros << '\n';
  }
  return os.str();
}

}  // namespace annealprune
