#include <fstream>
#include <random>

#include <gtest/gtest.h>

#include "mico/checkpoint.hpp"
#include "mico/encoder.hpp"
#include "oracles.hpp"
#include "support.hpp"

using namespace mico;

namespace {

TinyEncoder small_encoder(std::uint64_t seed = 1, int d = 8, int vocab = 64) {
  TinyEncoderConfig cfg;
  cfg.hidden_dim = d;
  cfg.tokenizer.vocab_buckets = vocab;
  cfg.init_seed = seed;
  return TinyEncoder(cfg);
}

std::string words(int n) {
  std::string s;
  for (int i = 0; i < n; ++i) s += (i ? " w" : "w") + std::to_string(i);
  return s;
}

}  // namespace

TEST(Tokenize, CountsStartWordsEnd) {
  auto t = hash_tokenize("to protect others", kDefaultMaxLen, TokenizerSpec{});
  ASSERT_EQ(t.size(), 5u);
  EXPECT_EQ(t.ids.front(), kStartId);
  EXPECT_EQ(t.ids.back(), kEndId);
  for (std::size_t i = 1; i + 1 < t.size(); ++i) {
    EXPECT_GE(t.ids[i], kFirstWordId);
    EXPECT_LT(t.ids[i], TokenizerSpec{}.vocab_buckets);
  }
}

TEST(Tokenize, TruncatesAndReappendsTheEndMarker) {
  auto t = hash_tokenize(words(100), 32, TokenizerSpec{});
  ASSERT_EQ(t.size(), 32u);
  EXPECT_EQ(t.ids.front(), kStartId);
  EXPECT_EQ(t.ids.back(), kEndId);
  auto head = hash_tokenize(words(30), 32, TokenizerSpec{});
  EXPECT_EQ(t.ids, head.ids);
}

TEST(Tokenize, LowercasesAndSplitsOnAnyWhitespace) {
  TokenizerSpec spec;
  EXPECT_EQ(hash_tokenize("The  Cat\tsat", 32, spec).ids, hash_tokenize("the cat sat", 32, spec).ids);
}

TEST(Tokenize, RejectsEmptyTextAndTinyMaxLen) {
  EXPECT_THROW(hash_tokenize("   ", 32, TokenizerSpec{}), InputError);
  EXPECT_THROW(hash_tokenize("word", 1, TokenizerSpec{}), ConfigError);
}

TEST(Pool, TakesRowZero) {
  HiddenStates h{Eigen::MatrixXd(2, 2)};
  h.matrix << 1, 2, 3, 4;
  auto v = pool(h);
  ASSERT_EQ(v.size(), 2);
  EXPECT_EQ(v(0), 1);
  EXPECT_EQ(v(1), 2);
}

TEST(TinyEncoder, ShapeAndDeterminism) {
  auto enc = small_encoder();
  auto toks = enc.tokenize("a cat sat on the mat", 32);
  auto a = enc.encode(toks), b = enc.encode(toks);
  EXPECT_EQ(a.matrix.rows(), static_cast<Eigen::Index>(toks.size()));
  EXPECT_EQ(a.matrix.cols(), enc.hidden_dim());
  EXPECT_TRUE((a.matrix.array() == b.matrix.array()).all());
  EXPECT_TRUE(a.matrix.allFinite());
  EXPECT_EQ(enc.embed("a cat sat on the mat"), enc.embed("a cat sat on the mat"));
}

TEST(TinyEncoder, SameSeedSameWeights) {
  auto a = small_encoder(5), b = small_encoder(5), c = small_encoder(6);
  EXPECT_EQ(a.fingerprint(), b.fingerprint());
  EXPECT_NE(a.fingerprint(), c.fingerprint());
}

TEST(TinyEncoder, OneTokenChangesTheOutput) {
  auto enc = small_encoder();
  auto a = enc.encode(enc.tokenize("the cat sat", 32));
  auto b = enc.encode(enc.tokenize("the dog sat", 32));
  EXPECT_GT((a.matrix - b.matrix).cwiseAbs().maxCoeff(), 0.0);
  EXPECT_GT((pool(a) - pool(b)).cwiseAbs().maxCoeff(), 0.0);
}

TEST(TinyEncoder, ForwardMatchesPooledEncode) {
  auto enc = small_encoder();
  auto toks = enc.tokenize("people go to the library", 32);
  EXPECT_LT((enc.forward(toks) - pool(enc.encode(toks))).cwiseAbs().maxCoeff(), 1e-15);
}

TEST(TinyEncoder, RejectsOutOfVocabularyIds) {
  auto enc = small_encoder(1, 4, 16);
  EXPECT_THROW(enc.encode(TokenSequence{{kStartId, 16, kEndId}}), InputError);
  EXPECT_THROW(enc.encode(TokenSequence{{kStartId, -1, kEndId}}), InputError);
  EXPECT_THROW(enc.encode(TokenSequence{}), InputError);
}

TEST(EncodeBatch, ChunkedMatchesOneByOne) {
  auto enc = small_encoder();
  std::vector<std::string> texts;
  for (int i = 0; i < 10; ++i) texts.push_back(words(1 + (i * 7) % 13) + " x" + std::to_string(i));
  auto chunked = encode_batch(enc, texts, 32, 4);
  auto whole = encode_batch(enc, texts, 32, 64);
  EXPECT_LT((chunked - whole).cwiseAbs().maxCoeff(), 1e-6);
  for (std::size_t i = 0; i < texts.size(); ++i)
    EXPECT_LT((chunked.row(static_cast<Eigen::Index>(i)).transpose() - enc.embed(texts[i], 32)).cwiseAbs().maxCoeff(), 1e-6);
}

TEST(EncodeBatch, SingletonAndPermutation) {
  auto enc = small_encoder();
  std::vector<std::string> texts = {"alpha beta", "gamma", "delta epsilon zeta eta"};
  auto one = encode_batch(enc, std::vector<std::string>{texts[0]}, 32, 8);
  EXPECT_EQ(one.row(0).transpose(), pool(enc.encode(enc.tokenize(texts[0], 32))));
  auto fwd = encode_batch(enc, texts, 32, 2);
  std::vector<std::string> rev(texts.rbegin(), texts.rend());
  auto bwd = encode_batch(enc, rev, 32, 2);
  for (Eigen::Index i = 0; i < 3; ++i) EXPECT_LT((fwd.row(i) - bwd.row(2 - i)).cwiseAbs().maxCoeff(), 1e-12);
}

TEST(EncodeBatch, ReportsTheFailingIndex) {
  auto enc = small_encoder();
  try {
    encode_batch(enc, std::vector<std::string>{"ok", "  ", "fine"}, 32, 8);
    FAIL();
  } catch (const InputError& e) {
    EXPECT_NE(std::string(e.what()).find("#1"), std::string::npos) << e.what();
  }
  EXPECT_THROW(encode_batch(enc, std::vector<std::string>{}, 32, 8), InputError);
}

TEST(TinyEncoder, BackwardMatchesFiniteDifferences) {
  auto enc = small_encoder(3, 4, 16);
  auto toks = enc.tokenize("one two three two", 32);
  std::mt19937_64 rng(9);
  std::normal_distribution<double> nd;
  Eigen::VectorXd w(enc.hidden_dim());
  for (auto& x : w) x = nd(rng);

  TinyEncoder::Cache cache;
  enc.forward(toks, &cache);
  std::vector<double> analytic(enc.parameter_count(), 0.0);
  enc.backward(cache, w, analytic);

  std::vector<double> p(enc.parameters().begin(), enc.parameters().end());
  auto probe = enc;
  auto f = [&](const std::vector<double>& v) {
    probe.set_parameters(v);
    return w.dot(probe.forward(toks));
  };
  auto numeric = oracle::numeric_gradient(p, f, 1e-5);
  EXPECT_LT(oracle::max_relative_error(analytic, numeric, 1e-6), 1e-4);
}

TEST(Backbones, PretrainedNamesAreKnownButUnavailable) {
  EXPECT_DOUBLE_EQ(default_learning_rate("bert-base-uncased"), 1e-5);
  EXPECT_DOUBLE_EQ(default_learning_rate("roberta-base"), 1e-5);
  EXPECT_DOUBLE_EQ(default_learning_rate("roberta-large"), 5e-6);
  EXPECT_EQ(find_pretrained("roberta-large")->hidden_dim, 1024);
  EXPECT_THROW(make_tiny_backbone("roberta-large", {}), RuntimeFailure);
  EXPECT_THROW(make_tiny_backbone("gpt-17", {}), ConfigError);
  EXPECT_THROW(default_learning_rate("gpt-17"), ConfigError);
  EXPECT_NE(make_tiny_backbone("tiny", {}), nullptr);
}

TEST(Checkpoint, RoundTripIsBitExact) {
  support::TempDir dir("ckpt");
  auto enc = small_encoder(4);
  save_checkpoint(dir / "a.ckpt", make_checkpoint(enc));
  auto back = load_encoder(dir / "a.ckpt");
  EXPECT_EQ(back.fingerprint(), enc.fingerprint());
  EXPECT_EQ(back.embed("round trip"), enc.embed("round trip"));
}

TEST(Checkpoint, HiddenDimensionMismatchIsAnError) {
  support::TempDir dir("ckpt");
  save_checkpoint(dir / "a.ckpt", make_checkpoint(small_encoder(4, 8)));
  EXPECT_THROW(load_encoder(dir / "a.ckpt", 16), InputError);
  EXPECT_NO_THROW(load_encoder(dir / "a.ckpt", 8));
}

TEST(Checkpoint, RejectsForeignOrCorruptFiles) {
  support::TempDir dir("ckpt");
  {
    std::ofstream out(dir / "junk.ckpt", std::ios::binary);
    out << "not a checkpoint at all";
  }
  EXPECT_THROW(load_checkpoint(dir / "junk.ckpt"), InputError);
  EXPECT_THROW(load_checkpoint(dir / "missing.ckpt"), InputError);

  auto c = make_checkpoint(small_encoder());
  c.backbone = "roberta-base";
  save_checkpoint(dir / "other.ckpt", c);
  EXPECT_THROW(load_encoder(dir / "other.ckpt"), InputError);

  // truncated
  save_checkpoint(dir / "t.ckpt", make_checkpoint(small_encoder()));
  std::filesystem::resize_file(dir / "t.ckpt", 40);
  EXPECT_THROW(load_checkpoint(dir / "t.ckpt"), InputError);
}
