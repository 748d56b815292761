#pragma once
// Versioned binary checkpoints: backbone identifier, tokenizer spec,
// parameter blob, and (for training checkpoints) optimizer state and the
// metrics history needed to resume.

#include <cstdint>
#include <filesystem>
#include <fstream>
#include <optional>
#include <string>
#include <vector>

#include "mico/encoder.hpp"
#include "mico/errors.hpp"
#include "mico/io.hpp"

namespace mico {

inline constexpr char kCheckpointMagic[] = "MICOCKPT";
inline constexpr std::uint32_t kCheckpointVersion = 1;

// One line of the metrics log. Epoch 0 is the untrained initialization.
struct EpochRecord {
  int epoch = 0;
  std::int64_t step = 0;
  std::optional<double> train_loss;
  double valid_loss = 0.0;
  double best_valid_loss = 0.0;
  std::string timestamp;
};

struct TrainingProgress {
  int epoch = 0;  // last completed epoch
  std::int64_t step = 0;
  std::vector<double> adam_m;
  std::vector<double> adam_v;
  std::int64_t adam_step = 0;
  std::vector<EpochRecord> records;
};

struct Checkpoint {
  std::string backbone = TinyEncoder::kId;
  TinyEncoderConfig encoder;
  std::vector<double> parameters;
  std::optional<TrainingProgress> progress;
};

inline Checkpoint make_checkpoint(const TinyEncoder& enc) {
  Checkpoint c;
  c.backbone = enc.id();
  c.encoder = enc.config();
  c.parameters.assign(enc.parameters().begin(), enc.parameters().end());
  return c;
}

inline void save_checkpoint(const std::filesystem::path& path, const Checkpoint& c) {
  io::write_atomically(path, [&](std::ostream& out) {
    io::BinaryWriter w(out);
    w.bytes(kCheckpointMagic, 8);
    w.u32(kCheckpointVersion);
    w.str(c.backbone);
    w.i64(c.encoder.hidden_dim);
    w.i64(c.encoder.tokenizer.vocab_buckets);
    w.u32(c.encoder.tokenizer.lowercase ? 1 : 0);
    w.u64(c.encoder.init_seed);
    w.f64s(c.parameters);
    w.u32(c.progress ? 1 : 0);
    if (c.progress) {
      const auto& p = *c.progress;
      w.i64(p.epoch);
      w.i64(p.step);
      w.f64s(p.adam_m);
      w.f64s(p.adam_v);
      w.i64(p.adam_step);
      w.u64(p.records.size());
      for (const auto& r : p.records) {
        w.i64(r.epoch);
        w.i64(r.step);
        w.u32(r.train_loss ? 1 : 0);
        w.f64(r.train_loss.value_or(0.0));
        w.f64(r.valid_loss);
        w.f64(r.best_valid_loss);
        w.str(r.timestamp);
      }
    }
  });
}

inline Checkpoint load_checkpoint(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw InputError("cannot open checkpoint " + path.string());
  io::BinaryReader r(in, path.string());
  r.expect_magic(std::string_view(kCheckpointMagic, 8));
  if (auto v = r.u32(); v != kCheckpointVersion)
    throw InputError(path.string() + ": unsupported checkpoint version " + std::to_string(v));
  Checkpoint c;
  c.backbone = r.str();
  c.encoder.hidden_dim = static_cast<int>(r.i64());
  c.encoder.tokenizer.vocab_buckets = static_cast<int>(r.i64());
  c.encoder.tokenizer.lowercase = r.u32() != 0;
  c.encoder.init_seed = r.u64();
  c.parameters = r.f64s();
  if (r.u32() != 0) {
    TrainingProgress p;
    p.epoch = static_cast<int>(r.i64());
    p.step = r.i64();
    p.adam_m = r.f64s();
    p.adam_v = r.f64s();
    p.adam_step = r.i64();
    const auto n = r.u64();
    if (n > 100000) throw InputError(path.string() + ": corrupt metrics history");
    for (std::uint64_t i = 0; i < n; ++i) {
      EpochRecord rec;
      rec.epoch = static_cast<int>(r.i64());
      rec.step = r.i64();
      bool has_train = r.u32() != 0;
      double train = r.f64();
      if (has_train) rec.train_loss = train;
      rec.valid_loss = r.f64();
      rec.best_valid_loss = r.f64();
      rec.timestamp = r.str();
      p.records.push_back(std::move(rec));
    }
    c.progress = std::move(p);
  }
  return c;
}

// Rebuilds the encoder. A checkpoint whose hidden size differs from the
// expected one is rejected.
inline TinyEncoder encoder_from_checkpoint(const Checkpoint& c, std::optional<int> expected_hidden_dim = std::nullopt) {
  if (c.backbone != TinyEncoder::kId)
    throw InputError("checkpoint backbone '" + c.backbone + "' is not loadable by this build");
  if (expected_hidden_dim && *expected_hidden_dim != c.encoder.hidden_dim)
    throw InputError("checkpoint hidden dimension " + std::to_string(c.encoder.hidden_dim) + " does not match expected " +
                     std::to_string(*expected_hidden_dim));
  TinyEncoder enc(c.encoder);
  enc.set_parameters(c.parameters);
  return enc;
}

inline TinyEncoder load_encoder(const std::filesystem::path& path, std::optional<int> expected_hidden_dim = std::nullopt) {
  return encoder_from_checkpoint(load_checkpoint(path), expected_hidden_dim);
}

}  // namespace mico
