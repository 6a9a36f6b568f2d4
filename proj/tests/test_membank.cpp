#include <filesystem>
#include <fstream>
#include <random>

#include <gtest/gtest.h>

#include "rosetta/membank.hpp"
#include "support.hpp"

namespace rosetta {
namespace {

namespace fs = std::filesystem;
using test::error_kind;
using test::random_tensor;

Architecture bank_arch() {
  Architecture a;
  a.input_dim = 3;
  a.widths = {4, 5};
  return a;
}

TaskRecord make_record(TaskId id, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  std::bernoulli_distribution coin(0.5);
  std::normal_distribution<double> n(0.0, 1.0);
  const auto arch = bank_arch();
  TaskRecord r;
  r.task_id = id;
  r.class_ids = {id * 10, id * 10 + 1, id * 10 + 2};
  r.task_embedding = {n(rng), n(rng), -0.0, 1e-300};
  for (auto w : arch.widths) {
    GateMask m(w);
    for (auto& b : m) b = coin(rng);
    r.gates.push_back(m);
  }
  r.head = Linear{random_tensor({3, 5}, rng), random_tensor({3}, rng)};
  for (auto c : r.class_ids) r.prototypes.push_back({c, {n(rng), n(rng), n(rng), n(rng), n(rng)}});
  r.baseline = 0.1 + std::abs(n(rng));
  if (id > 1) {
    CrossTaskCorrelation c{id - 1, r.prototypes, 1.0 / 3.0, 0.25};
    r.correlations.push_back(c);
  }
  r.filters.push_back({1, 2, {n(rng), n(rng), n(rng), n(rng)}, n(rng)});
  r.probe_inputs = random_tensor({4, 3}, rng);
  r.probe_logits = random_tensor({4, 3}, rng);
  r.config = {seed, 0.5, 1.0, 1.0, 0.5};
  return r;
}

MemoryBank three_task_bank() {
  MemoryBank bank(bank_arch().fingerprint());
  for (TaskId id : {1, 2, 3}) bank.store(make_record(id, 100 + id));
  return bank;
}

struct TempDir {
  fs::path path;
  TempDir() {
    path = fs::temp_directory_path() / ("rosetta-bank-" + std::to_string(::testing::UnitTest::GetInstance()->random_seed()) +
                                        "-" + ::testing::UnitTest::GetInstance()->current_test_info()->name());
    fs::remove_all(path);
    fs::create_directories(path);
  }
  ~TempDir() { fs::remove_all(path); }
};

std::vector<std::uint8_t> file_bytes(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

void write_bytes(const fs::path& p, const std::vector<std::uint8_t>& b) {
  std::ofstream out(p, std::ios::binary | std::ios::trunc);
  out.write(reinterpret_cast<const char*>(b.data()), static_cast<std::streamsize>(b.size()));
}

TEST(MemoryBank, RoundTripIsIdentity) {
  const auto bank = three_task_bank();
  const auto bytes = bank.serialize();
  const auto back = MemoryBank::deserialize(bytes);
  EXPECT_EQ(back.fingerprint(), bank.fingerprint());
  ASSERT_EQ(back.records(), bank.records());
  // -0.0 and subnormal-adjacent values survive with their bit patterns.
  EXPECT_TRUE(std::signbit(back.records()[0].task_embedding[2]));
  EXPECT_EQ(back.records()[0].task_embedding[3], 1e-300);
  EXPECT_EQ(back.serialize(), bytes);
}

TEST(MemoryBank, EmptyBank) {
  MemoryBank bank(bank_arch().fingerprint());
  const auto back = MemoryBank::deserialize(bank.serialize());
  EXPECT_EQ(back.size(), 0u);
  EXPECT_TRUE(back.list_tasks().empty());
  EXPECT_EQ(back.fingerprint(), bank.fingerprint());
}

TEST(MemoryBank, CommitOrderAndSummaries) {
  const auto bank = MemoryBank::deserialize(three_task_bank().serialize());
  const auto list = bank.list_tasks();
  ASSERT_EQ(list.size(), 3u);
  for (std::size_t i = 0; i < 3; ++i) {
    EXPECT_EQ(list[i].task_id, i + 1);
    EXPECT_EQ(list[i].num_classes, 3u);
    const auto& gates = bank.records()[i].gates;
    for (std::size_t l = 0; l < gates.size(); ++l) {
      std::size_t pop = 0;
      for (auto b : gates[l]) pop += b != 0;
      EXPECT_EQ(list[i].active_channels[l], pop);
    }
  }
}

TEST(MemoryBank, DuplicateRejectedBankUnchanged) {
  auto bank = three_task_bank();
  const auto before = bank.serialize();
  EXPECT_EQ(error_kind([&] { bank.store(make_record(2, 999)); }), ErrorKind::Duplicate);
  EXPECT_EQ(bank.serialize(), before);
}

TEST(MemoryBank, ArchitectureMismatchRejected) {
  MemoryBank bank(bank_arch().fingerprint());
  auto r = make_record(1, 1);
  r.gates[1].push_back(1);
  EXPECT_EQ(error_kind([&] { bank.store(r); }), ErrorKind::Fingerprint);
  r = make_record(1, 1);
  r.filters[0].channel = 9;
  EXPECT_EQ(error_kind([&] { bank.store(r); }), ErrorKind::Fingerprint);
  r = make_record(1, 1);
  r.head.weight = Tensor::zeros({3, 4});
  EXPECT_EQ(error_kind([&] { bank.store(r); }), ErrorKind::Fingerprint);
  EXPECT_EQ(bank.size(), 0u);
}

TEST(MemoryBank, RecordLookup) {
  const auto bank = three_task_bank();
  EXPECT_EQ(bank.record(2).task_id, 2u);
  EXPECT_TRUE(bank.contains(3));
  EXPECT_EQ(error_kind([&] { bank.record(7); }), ErrorKind::NotFound);
}

TEST(MemoryBank, FileBackedStoreAndLoad) {
  TempDir dir;
  const auto path = dir.path / "bank.bin";
  MemoryBank bank(bank_arch().fingerprint(), path);
  bank.save(path);
  EXPECT_EQ(MemoryBank::load(path).size(), 0u);
  for (TaskId id : {1, 2}) {
    bank.store(make_record(id, id));
    EXPECT_EQ(file_bytes(path), bank.serialize());
  }
  EXPECT_FALSE(fs::exists(dir.path / "bank.bin.tmp"));
  const auto loaded = MemoryBank::load(path);
  EXPECT_EQ(loaded.records(), bank.records());
  EXPECT_EQ(loaded.path(), std::optional<fs::path>(path));
}

TEST(MemoryBank, FailedWriteLeavesBankUnchanged) {
  MemoryBank bank(bank_arch().fingerprint(), fs::temp_directory_path() / "rosetta-missing-dir" / "bank.bin");
  EXPECT_EQ(error_kind([&] { bank.store(make_record(1, 1)); }), ErrorKind::Io);
  EXPECT_EQ(bank.size(), 0u);
}

TEST(MemoryBank, TruncationIsChecksumError) {
  const auto bytes = three_task_bank().serialize();
  for (std::size_t len = 8; len < bytes.size(); len += (len < 64 ? 1 : 37)) {
    std::vector<std::uint8_t> cut(bytes.begin(), bytes.begin() + static_cast<std::ptrdiff_t>(len));
    EXPECT_EQ(error_kind([&] { MemoryBank::deserialize(cut); }), ErrorKind::Checksum) << "length " << len;
  }
  std::vector<std::uint8_t> cut(bytes.begin(), bytes.end() - 1);
  EXPECT_EQ(error_kind([&] { MemoryBank::deserialize(cut); }), ErrorKind::Checksum);
}

TEST(MemoryBank, InterruptedWriteKeepsPriorFile) {
  TempDir dir;
  const auto path = dir.path / "bank.bin";
  MemoryBank bank(bank_arch().fingerprint(), path);
  bank.save(path);
  bank.store(make_record(1, 1));
  const auto committed = file_bytes(path);
  // A crash mid-write leaves a partial temp file; the committed file is untouched.
  auto next = bank;
  next.set_path(std::nullopt);
  next.store(make_record(2, 2));
  const auto full = next.serialize();
  const std::vector<std::uint8_t> partial(full.begin(), full.begin() + static_cast<std::ptrdiff_t>(full.size() / 2));
  write_bytes(dir.path / "bank.bin.tmp", partial);
  EXPECT_EQ(MemoryBank::load(path).records(), bank.records());
  EXPECT_EQ(file_bytes(path), committed);
  EXPECT_EQ(error_kind([&] { MemoryBank::load(dir.path / "bank.bin.tmp"); }), ErrorKind::Checksum);
}

TEST(MemoryBank, CorruptedPayloadIsChecksumError) {
  const auto bytes = three_task_bank().serialize();
  // Flip single bits spread over the records, header excluded from this loop.
  for (std::size_t pos = 80; pos < bytes.size(); pos += 53) {
    auto bad = bytes;
    bad[pos] ^= 0x10;
    EXPECT_EQ(error_kind([&] { MemoryBank::deserialize(bad); }), ErrorKind::Checksum) << "byte " << pos;
  }
  auto header = bytes;
  header[20] ^= 0x01;  // inside the fingerprint
  EXPECT_EQ(error_kind([&] { MemoryBank::deserialize(header); }), ErrorKind::Checksum);
}

TEST(MemoryBank, BadMagicAndVersion) {
  auto bytes = three_task_bank().serialize();
  auto magic = bytes;
  magic[0] = 'X';
  EXPECT_EQ(error_kind([&] { MemoryBank::deserialize(magic); }), ErrorKind::BadMagic);
  EXPECT_EQ(error_kind([] { MemoryBank::deserialize({'R', 'O'}); }), ErrorKind::BadMagic);
  auto version = bytes;
  version[8] = 2;
  EXPECT_EQ(error_kind([&] { MemoryBank::deserialize(version); }), ErrorKind::BadVersion);
}

TEST(MemoryBank, MissingFileIsIoError) {
  EXPECT_EQ(error_kind([] { MemoryBank::load("/nonexistent/rosetta/bank.bin"); }), ErrorKind::Io);
}

}  // namespace
}  // namespace rosetta
