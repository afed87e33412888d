#pragma once

#include <memory>
#include <string>
#include <unordered_map>
#include <vector>

#include "subilstm/rng.hpp"
#include "subilstm/tensor.hpp"

namespace subi {

// Token table with reserved ids: pad = 0, unk = 1.
struct Vocab {
  static constexpr std::int64_t kPad = 0;
  static constexpr std::int64_t kUnk = 1;

  Vocab() : tokens{"<pad>", "<unk>"} {
    to_id.emplace("<pad>", kPad);
    to_id.emplace("<unk>", kUnk);
  }

  std::int64_t add(const std::string& tok) {
    auto it = to_id.find(tok);
    if (it != to_id.end()) return it->second;
    const auto id = static_cast<std::int64_t>(tokens.size());
    tokens.push_back(tok);
    to_id.emplace(tok, id);
    return id;
  }

  std::int64_t lookup(const std::string& tok) const {
    auto it = to_id.find(tok);
    return it == to_id.end() ? kUnk : it->second;
  }

  std::int64_t size() const { return static_cast<std::int64_t>(tokens.size()); }

  std::unordered_map<std::string, std::int64_t> to_id;
  std::vector<std::string> tokens;
};

enum class CorpusFormat { kSingle, kPair };

struct Example {
  std::vector<std::int64_t> tokens;
  std::vector<std::int64_t> tokens2;  // second sentence of a pair, else empty
  std::int64_t label = 0;
};

struct LabeledCorpus {
  std::vector<Example> examples;
  std::vector<std::string> label_names;
  std::shared_ptr<Vocab> vocab;
  CorpusFormat format = CorpusFormat::kSingle;

  std::int64_t size() const { return static_cast<std::int64_t>(examples.size()); }
  std::int64_t num_classes() const { return static_cast<std::int64_t>(label_names.size()); }
};

// Tab-separated lines: "label<TAB>text" or "label<TAB>text1<TAB>text2".
// Tokenization is whitespace splitting, lowercased by default. With a null
// vocab a new vocabulary is built from the file (the training split);
// otherwise unseen tokens map to unk. All-integer label sets use the integer
// value as the class id; otherwise classes are sorted lexicographically.
LabeledCorpus load_labeled_corpus(const std::string& path, CorpusFormat format,
                                  std::shared_ptr<Vocab> vocab = nullptr,
                                  const std::vector<std::string>* label_names = nullptr,
                                  bool lowercase = true);

void save_labeled_corpus(const std::string& path, const LabeledCorpus& corpus);

// GloVe-style text: one token followed by `dim` floats per line. Rows for
// vocabulary tokens missing from the file get a per-token seeded
// uniform(-0.1, 0.1) fallback; the pad row is always zero.
Tensor load_embeddings(const std::string& path, const Vocab& vocab, std::int64_t dim,
                       std::uint64_t fallback_seed);

// Synthetic first/last-token agreement task: positions 0 and n-1 carry
// symbols from a signal alphabet, everything between is distractor noise,
// and the label is 1 iff the two signal tokens match. Classes are balanced
// by construction of the label coin.
LabeledCorpus gen_longrange(std::int64_t num_examples, std::int64_t seq_len,
                            std::int64_t vocab_size, Rng& rng);

struct PaddedBatch {
  std::vector<std::int64_t> tokens;  // (B x n_max) row-major, pad-filled
  std::int64_t n_max = 0;
  std::vector<std::int64_t> true_lengths;
  std::vector<std::int64_t> tokens2;  // pair batches only
  std::int64_t n_max2 = 0;
  std::vector<std::int64_t> true_lengths2;
  std::vector<std::int64_t> labels;

  std::int64_t batch_size() const { return static_cast<std::int64_t>(true_lengths.size()); }
  bool is_pair() const { return !tokens2.empty(); }
  std::int64_t token_at(std::int64_t b, std::int64_t t) const {
    return tokens[static_cast<std::size_t>(b * n_max + t)];
  }
};

// Every example exactly once. With bucket on, examples of similar length are
// grouped before batching, which shrinks the suffix plans.
std::vector<PaddedBatch> make_batches(const LabeledCorpus& corpus, std::int64_t batch_size,
                                      bool bucket, Rng& rng);

// Deterministic corpus-order batching for evaluation.
std::vector<PaddedBatch> make_eval_batches(const LabeledCorpus& corpus, std::int64_t batch_size,
                                           bool bucket = true);

}  // namespace subi
