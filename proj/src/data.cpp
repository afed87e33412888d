#include "subilstm/data.hpp"

#include <algorithm>
#include <cctype>
#include <charconv>
#include <fstream>
#include <numeric>
#include <sstream>
#include <stdexcept>

namespace subi {

namespace {

std::vector<std::string> split_ws(const std::string& s, bool lowercase) {
  std::vector<std::string> out;
  std::string cur;
  for (char ch : s) {
    if (std::isspace(static_cast<unsigned char>(ch))) {
      if (!cur.empty()) out.push_back(std::move(cur)), cur.clear();
    } else {
      cur.push_back(lowercase ? static_cast<char>(std::tolower(static_cast<unsigned char>(ch)))
                              : ch);
    }
  }
  if (!cur.empty()) out.push_back(std::move(cur));
  return out;
}

bool parse_int(const std::string& s, std::int64_t& out) {
  const auto* b = s.data();
  const auto* e = s.data() + s.size();
  auto [p, ec] = std::from_chars(b, e, out);
  return ec == std::errc() && p == e;
}

std::vector<std::int64_t> to_ids(const std::vector<std::string>& toks, Vocab& vocab,
                                 bool building) {
  std::vector<std::int64_t> ids;
  ids.reserve(toks.size());
  for (const auto& t : toks) ids.push_back(building ? vocab.add(t) : vocab.lookup(t));
  return ids;
}

// All-integer label sets keep the integer value as the class id; mixed or
// textual labels get ids by lexicographic rank.
std::vector<std::string> resolve_label_names(const std::vector<std::string>& raw) {
  std::vector<std::string> distinct = raw;
  std::sort(distinct.begin(), distinct.end());
  distinct.erase(std::unique(distinct.begin(), distinct.end()), distinct.end());

  bool all_int = true;
  std::int64_t max_v = -1;
  for (const auto& s : distinct) {
    std::int64_t v = 0;
    if (!parse_int(s, v) || v < 0 || v > 100000) {
      all_int = false;
      break;
    }
    max_v = std::max(max_v, v);
  }
  if (all_int) {
    std::vector<std::string> names(static_cast<std::size_t>(max_v + 1));
    for (std::int64_t i = 0; i <= max_v; ++i) names[static_cast<std::size_t>(i)] = std::to_string(i);
    return names;
  }
  return distinct;
}

}  // namespace

LabeledCorpus load_labeled_corpus(const std::string& path, CorpusFormat format,
                                  std::shared_ptr<Vocab> vocab,
                                  const std::vector<std::string>* label_names,
                                  bool lowercase) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("cannot open corpus file: " + path);

  const bool building_vocab = vocab == nullptr;
  if (building_vocab) vocab = std::make_shared<Vocab>();

  struct RawLine {
    std::string label;
    std::vector<std::int64_t> tokens, tokens2;
  };
  std::vector<RawLine> raw;
  std::vector<std::string> raw_labels;

  std::string line;
  std::size_t lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    if (line.empty()) continue;
    const auto tab1 = line.find('\t');
    if (tab1 == std::string::npos) {
      throw std::runtime_error(path + ":" + std::to_string(lineno) + ": missing label field");
    }
    RawLine r;
    r.label = line.substr(0, tab1);
    if (format == CorpusFormat::kSingle) {
      const auto toks = split_ws(line.substr(tab1 + 1), lowercase);
      if (toks.empty()) {
        throw std::runtime_error(path + ":" + std::to_string(lineno) + ": empty sentence");
      }
      r.tokens = to_ids(toks, *vocab, building_vocab);
    } else {
      const auto tab2 = line.find('\t', tab1 + 1);
      if (tab2 == std::string::npos || line.find('\t', tab2 + 1) != std::string::npos) {
        throw std::runtime_error(path + ":" + std::to_string(lineno) + ": ragged pair line");
      }
      const auto t1 = split_ws(line.substr(tab1 + 1, tab2 - tab1 - 1), lowercase);
      const auto t2 = split_ws(line.substr(tab2 + 1), lowercase);
      if (t1.empty() || t2.empty()) {
        throw std::runtime_error(path + ":" + std::to_string(lineno) + ": empty sentence");
      }
      r.tokens = to_ids(t1, *vocab, building_vocab);
      r.tokens2 = to_ids(t2, *vocab, building_vocab);
    }
    raw_labels.push_back(r.label);
    raw.push_back(std::move(r));
  }
  if (raw.empty()) throw std::runtime_error("empty corpus file: " + path);

  LabeledCorpus corpus;
  corpus.format = format;
  corpus.vocab = vocab;
  corpus.label_names = label_names ? *label_names : resolve_label_names(raw_labels);

  for (auto& r : raw) {
    const auto it =
        std::find(corpus.label_names.begin(), corpus.label_names.end(), r.label);
    if (it == corpus.label_names.end()) {
      throw std::runtime_error("unknown label '" + r.label + "' in " + path);
    }
    Example ex;
    ex.label = std::distance(corpus.label_names.begin(), it);
    ex.tokens = std::move(r.tokens);
    ex.tokens2 = std::move(r.tokens2);
    corpus.examples.push_back(std::move(ex));
  }
  return corpus;
}

void save_labeled_corpus(const std::string& path, const LabeledCorpus& corpus) {
  std::ofstream out(path);
  if (!out) throw std::runtime_error("cannot write corpus file: " + path);
  const auto& toks = corpus.vocab->tokens;
  auto write_tokens = [&](const std::vector<std::int64_t>& ids) {
    for (std::size_t i = 0; i < ids.size(); ++i) {
      if (i) out << ' ';
      out << toks[static_cast<std::size_t>(ids[i])];
    }
  };
  for (const auto& ex : corpus.examples) {
    out << corpus.label_names[static_cast<std::size_t>(ex.label)] << '\t';
    write_tokens(ex.tokens);
    if (corpus.format == CorpusFormat::kPair) {
      out << '\t';
      write_tokens(ex.tokens2);
    }
    out << '\n';
  }
}

Tensor load_embeddings(const std::string& path, const Vocab& vocab, std::int64_t dim,
                       std::uint64_t fallback_seed) {
  if (dim < 1) throw std::invalid_argument("load_embeddings: dim must be positive");
  std::ifstream in(path);
  if (!in) throw std::runtime_error("cannot open embedding file: " + path);

  const auto v = vocab.size();
  std::vector<double> table(static_cast<std::size_t>(v * dim));
  // Per-token seeded fallback, independent of vocabulary order.
  for (std::int64_t id = 1; id < v; ++id) {
    std::uint64_t x = fallback_seed ^ Rng::hash_string(vocab.tokens[static_cast<std::size_t>(id)]);
    Rng rng(Rng::splitmix64(x));
    for (std::int64_t j = 0; j < dim; ++j) {
      table[static_cast<std::size_t>(id * dim + j)] = rng.uniform(-0.1, 0.1);
    }
  }

  std::string line;
  std::size_t lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    if (line.empty()) continue;
    std::istringstream iss(line);
    std::string tok;
    iss >> tok;
    if (tok.empty()) {
      throw std::runtime_error(path + ":" + std::to_string(lineno) + ": malformed line");
    }
    std::vector<double> row(static_cast<std::size_t>(dim));
    for (std::int64_t j = 0; j < dim; ++j) {
      if (!(iss >> row[static_cast<std::size_t>(j)])) {
        throw std::runtime_error(path + ":" + std::to_string(lineno) +
                                 ": embedding dimension mismatch");
      }
    }
    double extra;
    if (iss >> extra) {
      throw std::runtime_error(path + ":" + std::to_string(lineno) +
                               ": embedding dimension mismatch");
    }
    const auto it = vocab.to_id.find(tok);
    if (it == vocab.to_id.end() || it->second == Vocab::kPad) continue;
    std::copy(row.begin(), row.end(),
              table.begin() + static_cast<std::ptrdiff_t>(it->second * dim));
  }
  // Pad row stays zero.
  std::fill(table.begin(), table.begin() + static_cast<std::ptrdiff_t>(dim), 0.0);
  return make_tensor({v, dim}, std::move(table));
}

LabeledCorpus gen_longrange(std::int64_t num_examples, std::int64_t seq_len,
                            std::int64_t vocab_size, Rng& rng) {
  if (seq_len < 4 || vocab_size < 4) {
    throw std::invalid_argument("gen_longrange: need seq_len >= 4 and vocab_size >= 4");
  }
  if (num_examples < 1) throw std::invalid_argument("gen_longrange: need examples");

  auto vocab = std::make_shared<Vocab>();
  const std::int64_t num_signal = std::max<std::int64_t>(2, vocab_size / 4);
  const std::int64_t num_noise = vocab_size - num_signal;
  std::vector<std::int64_t> signal, noise;
  for (std::int64_t i = 0; i < num_signal; ++i) signal.push_back(vocab->add("sig" + std::to_string(i)));
  for (std::int64_t i = 0; i < num_noise; ++i) noise.push_back(vocab->add("msk" + std::to_string(i)));

  LabeledCorpus corpus;
  corpus.vocab = vocab;
  corpus.format = CorpusFormat::kSingle;
  corpus.label_names = {"0", "1"};
  corpus.examples.reserve(static_cast<std::size_t>(num_examples));
  for (std::int64_t e = 0; e < num_examples; ++e) {
    Example ex;
    ex.label = static_cast<std::int64_t>(rng.uniform_int(2));
    ex.tokens.resize(static_cast<std::size_t>(seq_len));
    const auto first = rng.uniform_int(static_cast<std::uint64_t>(num_signal));
    std::uint64_t last = first;
    if (ex.label == 0) {
      last = (first + 1 + rng.uniform_int(static_cast<std::uint64_t>(num_signal - 1))) %
             static_cast<std::uint64_t>(num_signal);
    }
    ex.tokens.front() = signal[static_cast<std::size_t>(first)];
    ex.tokens.back() = signal[static_cast<std::size_t>(last)];
    for (std::int64_t t = 1; t < seq_len - 1; ++t) {
      ex.tokens[static_cast<std::size_t>(t)] =
          noise[static_cast<std::size_t>(rng.uniform_int(static_cast<std::uint64_t>(num_noise)))];
    }
    corpus.examples.push_back(std::move(ex));
  }
  return corpus;
}

namespace {

std::vector<PaddedBatch> batch_indices(const LabeledCorpus& corpus,
                                       const std::vector<std::int64_t>& order,
                                       std::int64_t batch_size) {
  std::vector<PaddedBatch> out;
  const auto n = static_cast<std::int64_t>(order.size());
  for (std::int64_t b0 = 0; b0 < n; b0 += batch_size) {
    const auto bsz = std::min(batch_size, n - b0);
    PaddedBatch pb;
    pb.true_lengths.reserve(static_cast<std::size_t>(bsz));
    for (std::int64_t i = 0; i < bsz; ++i) {
      const auto& ex = corpus.examples[static_cast<std::size_t>(order[static_cast<std::size_t>(b0 + i)])];
      pb.true_lengths.push_back(static_cast<std::int64_t>(ex.tokens.size()));
      pb.labels.push_back(ex.label);
      if (corpus.format == CorpusFormat::kPair) {
        pb.true_lengths2.push_back(static_cast<std::int64_t>(ex.tokens2.size()));
      }
      pb.n_max = std::max(pb.n_max, pb.true_lengths.back());
      if (corpus.format == CorpusFormat::kPair) {
        pb.n_max2 = std::max(pb.n_max2, pb.true_lengths2.back());
      }
    }
    pb.tokens.assign(static_cast<std::size_t>(bsz * pb.n_max), Vocab::kPad);
    if (corpus.format == CorpusFormat::kPair) {
      pb.tokens2.assign(static_cast<std::size_t>(bsz * pb.n_max2), Vocab::kPad);
    }
    for (std::int64_t i = 0; i < bsz; ++i) {
      const auto& ex = corpus.examples[static_cast<std::size_t>(order[static_cast<std::size_t>(b0 + i)])];
      std::copy(ex.tokens.begin(), ex.tokens.end(),
                pb.tokens.begin() + static_cast<std::ptrdiff_t>(i * pb.n_max));
      if (corpus.format == CorpusFormat::kPair) {
        std::copy(ex.tokens2.begin(), ex.tokens2.end(),
                  pb.tokens2.begin() + static_cast<std::ptrdiff_t>(i * pb.n_max2));
      }
    }
    out.push_back(std::move(pb));
  }
  return out;
}

std::int64_t length_key(const Example& ex) {
  return static_cast<std::int64_t>(ex.tokens.size() + ex.tokens2.size());
}

}  // namespace

std::vector<PaddedBatch> make_batches(const LabeledCorpus& corpus, std::int64_t batch_size,
                                      bool bucket, Rng& rng) {
  if (batch_size < 1) throw std::invalid_argument("make_batches: batch_size must be >= 1");
  std::vector<std::int64_t> order(static_cast<std::size_t>(corpus.size()));
  std::iota(order.begin(), order.end(), 0);
  rng.shuffle(order);
  if (bucket) {
    std::stable_sort(order.begin(), order.end(), [&](std::int64_t a, std::int64_t b) {
      return length_key(corpus.examples[static_cast<std::size_t>(a)]) <
             length_key(corpus.examples[static_cast<std::size_t>(b)]);
    });
  }
  auto batches = batch_indices(corpus, order, batch_size);
  rng.shuffle(batches);
  return batches;
}

std::vector<PaddedBatch> make_eval_batches(const LabeledCorpus& corpus, std::int64_t batch_size,
                                           bool bucket) {
  if (batch_size < 1) throw std::invalid_argument("make_eval_batches: batch_size must be >= 1");
  std::vector<std::int64_t> order(static_cast<std::size_t>(corpus.size()));
  std::iota(order.begin(), order.end(), 0);
  if (bucket) {
    std::stable_sort(order.begin(), order.end(), [&](std::int64_t a, std::int64_t b) {
      return length_key(corpus.examples[static_cast<std::size_t>(a)]) <
             length_key(corpus.examples[static_cast<std::size_t>(b)]);
    });
  }
  return batch_indices(corpus, order, batch_size);
}

}  // namespace subi
