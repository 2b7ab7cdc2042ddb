// Shared fixtures for the unit tests.
#pragma once

#include <filesystem>
#include <functional>
#include <string>
#include <vector>

#include "judgelab/attack_loss.hpp"
#include "judgelab/backend.hpp"
#include "judgelab/judge.hpp"
#include "judgelab/rng.hpp"
#include "judgelab/text.hpp"
#include "judgelab/tinylm.hpp"

namespace testsupport {

using namespace judgelab;

inline std::filesystem::path temp_dir(const std::string& name) {
  auto p = std::filesystem::temp_directory_path() / ("judgelab_test_" + name);
  std::filesystem::remove_all(p);
  std::filesystem::create_directories(p);
  return p;
}

inline std::filesystem::path data_dir() { return JUDGELAB_DATA_DIR; }

/// A vocabulary with exactly `n` tokens: the three specials, the judgment
/// words, and filler words w0, w1, ...
inline Vocab sized_vocab(std::size_t n) {
  std::vector<std::string> words{"output", "(", ")", ":", "is", "better", ".", "1", "2", "3",
                                 "correct", "!", "judge", "which"};
  for (std::size_t i = 0; words.size() + 3 < n; ++i) words.push_back("w" + std::to_string(i));
  std::vector<std::string> tokens{"<pad>", "<bos>", "<unk>"};
  tokens.insert(tokens.end(), words.begin(), words.begin() + static_cast<std::ptrdiff_t>(n - 3));
  return Vocab(std::move(tokens), 0, 1, 2);
}

inline JudgeTemplate small_template() {
  JudgeTemplate t;
  t.header = "judge";
  t.trailer = "which";
  return t;
}

/// Small random model whose outputs are far from uniform.
inline ModelParams random_params(std::size_t vocab_size, std::uint64_t seed,
                                 std::size_t ctx = 64, double init_std = 0.3) {
  ModelConfig c;
  c.n_layers = 2;
  c.d_model = 16;
  c.n_heads = 2;
  c.d_ff = 32;
  c.ctx_len = ctx;
  c.vocab_size = vocab_size;
  c.seed = seed;
  c.init_std = init_std;
  auto p = init_params(c);
  // Perturb gains and biases too so no parameter sits at a special value.
  Rng rng(seed ^ 0x9e3779b97f4a7c15ULL);
  for (auto& v : p.values) v += 0.05 * rng.normal();
  return p;
}

inline TokenSeq random_tokens(Rng& rng, std::size_t n, std::size_t vocab_size,
                              std::size_t first = 3) {
  TokenSeq s(n);
  for (auto& t : s) t = static_cast<TokenId>(first + rng.index(vocab_size - first));
  return s;
}

/// Backend whose next-token logits come from a callback on the context.
class ScriptedBackend : public ModelBackend {
 public:
  using Fn = std::function<std::vector<double>(std::span<const TokenId>)>;
  ScriptedBackend(std::size_t vocab, Fn fn, std::size_t ctx = 512)
      : vocab_(vocab), ctx_(ctx), fn_(std::move(fn)) {}

  std::size_t vocab_size() const override { return vocab_; }
  std::size_t context_length() const override { return ctx_; }

  std::vector<std::vector<double>> logits_at(std::span<const TokenId> seq,
                                             std::span<const std::size_t> rows) const override {
    std::vector<std::vector<double>> out;
    for (auto r : rows) out.push_back(fn_(seq.subspan(0, r + 1)));
    return out;
  }

  std::vector<double> term_nll(std::span<const TokenId> seq,
                               std::span<const LossTerm> terms) const override {
    std::vector<double> out;
    for (const auto& t : terms) out.push_back(-log_softmax(fn_(seq.subspan(0, t.row + 1)))[t.target]);
    return out;
  }

  GradientMatrix input_token_gradients(std::span<const TokenId>, std::span<const LossTerm>,
                                       std::span<const std::size_t> positions) const override {
    return {positions.size(), vocab_, std::vector<double>(positions.size() * vocab_, 0.0)};
  }

 private:
  std::size_t vocab_, ctx_;
  Fn fn_;
};

/// Logits that put all mass on one token.
inline std::vector<double> peaked(std::size_t vocab, TokenId tok, double height = 20.0) {
  std::vector<double> z(vocab, 0.0);
  z[tok] = height;
  return z;
}

}  // namespace testsupport
