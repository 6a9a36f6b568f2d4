#pragma once

// Append-only store of finished tasks.
//
// File layout (all integers little-endian, doubles as their IEEE-754 bits):
//
//   "ROSETTA1"                       8-byte magic
//   u32 format version               currently 1
//   u32 n, u64[n]                    architecture fingerprint
//   u64 record count
//   u32 CRC-32 of the header fields after the magic
//   record count x { u64 payload length, payload, u32 CRC-32 of payload }
//
// The file is rewritten whole on every commit through a temp file + rename.

#include <array>
#include <bit>
#include <cstdint>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <iterator>
#include <optional>
#include <string>
#include <system_error>
#include <vector>

#include <boost/crc.hpp>

#include "rosetta/correlation.hpp"
#include "rosetta/error.hpp"
#include "rosetta/gatednet.hpp"

namespace rosetta {

inline constexpr std::array<char, 8> kBankMagic{'R', 'O', 'S', 'E', 'T', 'T', 'A', '1'};
inline constexpr std::uint32_t kBankVersion = 1;

// Filter (weight row + bias) of a channel first claimed by the owning task.
struct FilterSnapshot {
  std::uint32_t layer = 0;
  std::uint32_t channel = 0;
  std::vector<double> weights;
  double bias = 0.0;

  friend bool operator==(const FilterSnapshot&, const FilterSnapshot&) = default;
};

// This task's classes seen through an earlier task's sub-network, and the
// resulting correlation figures used to weight the diversity loss.
struct CrossTaskCorrelation {
  TaskId source_task = 0;
  std::vector<Prototype> prototypes;
  double r_cross = 0.0;  // R(p^t, p^source)
  double phi = 0.0;

  friend bool operator==(const CrossTaskCorrelation&, const CrossTaskCorrelation&) = default;
};

struct ConfigFingerprint {
  std::uint64_t seed = 0;
  double lambda_sparsity = 0.0;
  double lambda_kd = 0.0;
  double lambda_diversity = 0.0;
  double eta = 0.0;

  friend bool operator==(const ConfigFingerprint&, const ConfigFingerprint&) = default;
};

struct TaskRecord {
  TaskId task_id = 0;
  std::vector<ClassId> class_ids;
  std::vector<double> task_embedding;
  BinaryGates gates;
  Linear head;
  std::vector<Prototype> prototypes;
  double baseline = 0.0;  // R(p^t, p^t)
  std::vector<CrossTaskCorrelation> correlations;
  std::vector<FilterSnapshot> filters;
  Tensor probe_inputs;
  Tensor probe_logits;
  ConfigFingerprint config;

  std::vector<std::size_t> active_per_layer() const {
    std::vector<std::size_t> counts;
    for (const auto& m : gates) {
      std::size_t n = 0;
      for (auto b : m) n += b ? 1 : 0;
      counts.push_back(n);
    }
    return counts;
  }

  friend bool operator==(const TaskRecord&, const TaskRecord&) = default;
};

struct TaskSummary {
  TaskId task_id = 0;
  std::size_t num_classes = 0;
  std::vector<std::size_t> active_channels;

  friend bool operator==(const TaskSummary&, const TaskSummary&) = default;
};

namespace detail {

inline std::uint32_t crc32(const std::uint8_t* data, std::size_t size) {
  boost::crc_32_type crc;
  crc.process_bytes(data, size);
  return crc.checksum();
}

class ByteWriter {
 public:
  void u8(std::uint8_t v) { bytes_.push_back(v); }
  void u32(std::uint32_t v) {
    for (int i = 0; i < 4; ++i) bytes_.push_back(static_cast<std::uint8_t>(v >> (8 * i)));
  }
  void u64(std::uint64_t v) {
    for (int i = 0; i < 8; ++i) bytes_.push_back(static_cast<std::uint8_t>(v >> (8 * i)));
  }
  void f64(double v) { u64(std::bit_cast<std::uint64_t>(v)); }
  void raw(const void* p, std::size_t n) {
    const auto* b = static_cast<const std::uint8_t*>(p);
    bytes_.insert(bytes_.end(), b, b + n);
  }

  void f64s(const std::vector<double>& v) {
    u64(v.size());
    for (double x : v) f64(x);
  }
  void u64s(const std::vector<std::uint64_t>& v) {
    u64(v.size());
    for (auto x : v) u64(x);
  }
  void tensor(const Tensor& t) {
    u64(t.shape.size());
    for (auto d : t.shape) u64(d);
    for (double x : t.data) f64(x);
  }
  void linear(const Linear& l) {
    tensor(l.weight);
    tensor(l.bias);
  }
  void prototypes(const std::vector<Prototype>& ps) {
    u64(ps.size());
    for (const auto& p : ps) {
      u64(p.class_id);
      f64s(p.vector);
    }
  }

  std::vector<std::uint8_t>& bytes() { return bytes_; }

 private:
  std::vector<std::uint8_t> bytes_;
};

class ByteReader {
 public:
  ByteReader(const std::uint8_t* data, std::size_t size) : data_(data), size_(size) {}

  std::size_t remaining() const { return size_ - pos_; }
  std::size_t position() const { return pos_; }

  const std::uint8_t* take(std::size_t n) {
    if (n > remaining()) fail(ErrorKind::Checksum, "memory bank truncated");
    const auto* p = data_ + pos_;
    pos_ += n;
    return p;
  }
  std::uint8_t u8() { return *take(1); }
  std::uint32_t u32() {
    const auto* p = take(4);
    std::uint32_t v = 0;
    for (int i = 0; i < 4; ++i) v |= std::uint32_t{p[i]} << (8 * i);
    return v;
  }
  std::uint64_t u64() {
    const auto* p = take(8);
    std::uint64_t v = 0;
    for (int i = 0; i < 8; ++i) v |= std::uint64_t{p[i]} << (8 * i);
    return v;
  }
  double f64() { return std::bit_cast<double>(u64()); }

  // Element counts are bounded by what is left so corrupt lengths cannot
  // trigger huge allocations.
  std::size_t count(std::size_t element_size) {
    const auto n = u64();
    if (element_size > 0 && n > remaining() / element_size) fail(ErrorKind::Checksum, "memory bank length overflow");
    return static_cast<std::size_t>(n);
  }
  std::vector<double> f64s() {
    std::vector<double> v(count(8));
    for (auto& x : v) x = f64();
    return v;
  }
  std::vector<std::uint64_t> u64s() {
    std::vector<std::uint64_t> v(count(8));
    for (auto& x : v) x = u64();
    return v;
  }
  Tensor tensor() {
    std::vector<std::size_t> shape(count(8));
    for (auto& d : shape) d = u64();
    std::size_t n = 1;
    for (auto d : shape) {
      if (d != 0 && n > remaining() / 8 / d) fail(ErrorKind::Checksum, "memory bank tensor size overflow");
      n *= d;
    }
    std::vector<double> data(n);
    for (auto& x : data) x = f64();
    return Tensor(std::move(shape), std::move(data));
  }
  Linear linear() {
    Linear l;
    l.weight = tensor();
    l.bias = tensor();
    return l;
  }
  std::vector<Prototype> prototypes() {
    std::vector<Prototype> ps(count(16));
    for (auto& p : ps) {
      p.class_id = u64();
      p.vector = f64s();
    }
    return ps;
  }

 private:
  const std::uint8_t* data_;
  std::size_t size_;
  std::size_t pos_ = 0;
};

inline void write_record(ByteWriter& w, const TaskRecord& r) {
  w.u64(r.task_id);
  w.u64s(r.class_ids);
  w.f64s(r.task_embedding);
  w.u64(r.gates.size());
  for (const auto& m : r.gates) {
    w.u64(m.size());
    w.raw(m.data(), m.size());
  }
  w.linear(r.head);
  w.prototypes(r.prototypes);
  w.f64(r.baseline);
  w.u64(r.correlations.size());
  for (const auto& c : r.correlations) {
    w.u64(c.source_task);
    w.prototypes(c.prototypes);
    w.f64(c.r_cross);
    w.f64(c.phi);
  }
  w.u64(r.filters.size());
  for (const auto& f : r.filters) {
    w.u32(f.layer);
    w.u32(f.channel);
    w.f64s(f.weights);
    w.f64(f.bias);
  }
  w.tensor(r.probe_inputs);
  w.tensor(r.probe_logits);
  w.u64(r.config.seed);
  w.f64(r.config.lambda_sparsity);
  w.f64(r.config.lambda_kd);
  w.f64(r.config.lambda_diversity);
  w.f64(r.config.eta);
}

inline TaskRecord read_record(ByteReader& in) {
  TaskRecord r;
  r.task_id = in.u64();
  r.class_ids = in.u64s();
  r.task_embedding = in.f64s();
  r.gates.resize(in.count(8));
  for (auto& m : r.gates) {
    const auto n = in.count(1);
    const auto* p = in.take(n);
    m.assign(p, p + n);
    for (auto b : m)
      if (b > 1) fail(ErrorKind::Checksum, "memory bank gate value is not binary");
  }
  r.head = in.linear();
  r.prototypes = in.prototypes();
  r.baseline = in.f64();
  r.correlations.resize(in.count(8));
  for (auto& c : r.correlations) {
    c.source_task = in.u64();
    c.prototypes = in.prototypes();
    c.r_cross = in.f64();
    c.phi = in.f64();
  }
  r.filters.resize(in.count(16));
  for (auto& f : r.filters) {
    f.layer = in.u32();
    f.channel = in.u32();
    f.weights = in.f64s();
    f.bias = in.f64();
  }
  r.probe_inputs = in.tensor();
  r.probe_logits = in.tensor();
  r.config.seed = in.u64();
  r.config.lambda_sparsity = in.f64();
  r.config.lambda_kd = in.f64();
  r.config.lambda_diversity = in.f64();
  r.config.eta = in.f64();
  return r;
}

}  // namespace detail

class MemoryBank {
 public:
  MemoryBank() = default;
  explicit MemoryBank(std::vector<std::uint64_t> fingerprint, std::optional<std::filesystem::path> path = {})
      : fingerprint_(std::move(fingerprint)), path_(std::move(path)) {}

  const std::vector<std::uint64_t>& fingerprint() const { return fingerprint_; }
  const std::vector<TaskRecord>& records() const { return records_; }
  std::size_t size() const { return records_.size(); }
  const std::optional<std::filesystem::path>& path() const { return path_; }
  void set_path(std::optional<std::filesystem::path> p) { path_ = std::move(p); }

  bool contains(TaskId id) const { return find(id) != nullptr; }

  const TaskRecord& record(TaskId id) const {
    const auto* r = find(id);
    if (!r) fail(ErrorKind::NotFound, "task " + std::to_string(id) + " not in memory bank");
    return *r;
  }

  // Validates and appends a record. A file-backed bank is rewritten first, so
  // a failed write leaves both the file and the in-memory bank unchanged.
  void store(TaskRecord record) {
    if (contains(record.task_id))
      fail(ErrorKind::Duplicate, "task " + std::to_string(record.task_id) + " already in memory bank");
    check_architecture(record);
    if (path_) {
      MemoryBank next = *this;
      next.records_.push_back(record);
      next.save(*path_);
    }
    records_.push_back(std::move(record));
  }

  std::vector<TaskSummary> list_tasks() const {
    std::vector<TaskSummary> out;
    for (const auto& r : records_) out.push_back({r.task_id, r.class_ids.size(), r.active_per_layer()});
    return out;
  }

  std::vector<std::uint8_t> serialize() const {
    detail::ByteWriter w;
    w.raw(kBankMagic.data(), kBankMagic.size());
    detail::ByteWriter header;
    header.u32(kBankVersion);
    header.u32(static_cast<std::uint32_t>(fingerprint_.size()));
    for (auto v : fingerprint_) header.u64(v);
    header.u64(records_.size());
    w.raw(header.bytes().data(), header.bytes().size());
    w.u32(detail::crc32(header.bytes().data(), header.bytes().size()));
    for (const auto& r : records_) {
      detail::ByteWriter payload;
      detail::write_record(payload, r);
      w.u64(payload.bytes().size());
      w.raw(payload.bytes().data(), payload.bytes().size());
      w.u32(detail::crc32(payload.bytes().data(), payload.bytes().size()));
    }
    return std::move(w.bytes());
  }

  static MemoryBank deserialize(const std::vector<std::uint8_t>& bytes) {
    detail::ByteReader in(bytes.data(), bytes.size());
    if (bytes.size() < kBankMagic.size() || std::memcmp(bytes.data(), kBankMagic.data(), kBankMagic.size()) != 0)
      fail(ErrorKind::BadMagic, "not a memory bank file (bad magic)");
    in.take(kBankMagic.size());
    const auto header_start = in.position();
    const auto version = in.u32();
    if (version != kBankVersion)
      fail(ErrorKind::BadVersion, "unsupported memory bank version " + std::to_string(version));
    MemoryBank bank;
    const auto fp_len = in.u32();
    if (fp_len > in.remaining() / 8) fail(ErrorKind::Checksum, "memory bank truncated");
    for (std::uint32_t i = 0; i < fp_len; ++i) bank.fingerprint_.push_back(in.u64());
    const auto count = in.u64();
    const auto header_end = in.position();
    const auto header_crc = in.u32();
    if (header_crc != detail::crc32(bytes.data() + header_start, header_end - header_start))
      fail(ErrorKind::Checksum, "memory bank header checksum mismatch");
    for (std::uint64_t i = 0; i < count; ++i) {
      const auto len = in.u64();
      if (len > in.remaining()) fail(ErrorKind::Checksum, "memory bank truncated in record " + std::to_string(i));
      const auto* payload = in.take(static_cast<std::size_t>(len));
      const auto crc = in.u32();
      if (crc != detail::crc32(payload, static_cast<std::size_t>(len)))
        fail(ErrorKind::Checksum, "memory bank record " + std::to_string(i) + " checksum mismatch");
      detail::ByteReader rec(payload, static_cast<std::size_t>(len));
      auto r = detail::read_record(rec);
      if (rec.remaining() != 0) fail(ErrorKind::Checksum, "memory bank record " + std::to_string(i) + " has trailing bytes");
      bank.records_.push_back(std::move(r));
    }
    if (in.remaining() != 0) fail(ErrorKind::Checksum, "memory bank has trailing bytes");
    return bank;
  }

  // Writes `<path>.tmp` then renames it over `path`.
  void save(const std::filesystem::path& path) const {
    const auto bytes = serialize();
    auto tmp = path;
    tmp += ".tmp";
    {
      std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
      if (!out) fail(ErrorKind::Io, "cannot open " + tmp.string() + " for writing");
      out.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
      out.flush();
      if (!out) fail(ErrorKind::Io, "write to " + tmp.string() + " failed");
    }
    std::error_code ec;
    std::filesystem::rename(tmp, path, ec);
    if (ec) fail(ErrorKind::Io, "cannot rename " + tmp.string() + ": " + ec.message());
  }

  static MemoryBank load(const std::filesystem::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) fail(ErrorKind::Io, "cannot open memory bank " + path.string());
    std::vector<std::uint8_t> bytes((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
    auto bank = deserialize(bytes);
    bank.path_ = path;
    return bank;
  }

 private:
  const TaskRecord* find(TaskId id) const {
    for (const auto& r : records_)
      if (r.task_id == id) return &r;
    return nullptr;
  }

  void check_architecture(const TaskRecord& r) const {
    const auto arch = Architecture::from_fingerprint(fingerprint_);
    auto mismatch = [&](const std::string& what) {
      fail(ErrorKind::Fingerprint, "task " + std::to_string(r.task_id) + ": " + what + " does not match the bank architecture");
    };
    if (r.gates.size() != arch.depth()) mismatch("gate layer count");
    for (std::size_t l = 0; l < arch.depth(); ++l)
      if (r.gates[l].size() != arch.out_width(l)) mismatch("gate length of layer " + std::to_string(l));
    if (r.head.weight.rank() != 2 || r.head.in_features() != arch.widths.back()) mismatch("head input width");
    for (const auto& f : r.filters) {
      if (f.layer >= arch.depth() || f.channel >= arch.out_width(f.layer)) mismatch("filter location");
      if (f.weights.size() != arch.in_width(f.layer)) mismatch("filter width");
    }
  }

  std::vector<std::uint64_t> fingerprint_;
  std::vector<TaskRecord> records_;
  std::optional<std::filesystem::path> path_;
};

}  // namespace rosetta
