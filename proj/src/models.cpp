#include "subilstm/models.hpp"

#include <array>
#include <fstream>
#include <sstream>
#include <stdexcept>

namespace subi {

namespace {

std::vector<std::int64_t> flat_ids(const std::vector<std::int64_t>& tokens, std::int64_t n_max,
                                   const std::vector<std::int64_t>& lengths, std::int64_t vocab_size) {
  std::vector<std::int64_t> ids;
  const auto bsz = static_cast<std::int64_t>(lengths.size());
  for (std::int64_t b = 0; b < bsz; ++b) {
    const auto len = lengths[static_cast<std::size_t>(b)];
    if (len < 1) throw std::invalid_argument("empty sentence in batch");
    for (std::int64_t t = 0; t < len; ++t) {
      const auto id = tokens[static_cast<std::size_t>(b * n_max + t)];
      if (id < 0 || id >= vocab_size) {
        throw std::invalid_argument("token id out of vocabulary range");
      }
      ids.push_back(id);
    }
  }
  return ids;
}

// Pooled sentence vectors (B x width) for one side of a batch.
Tensor encode_and_pool(const Tensor& embedding, const std::vector<std::int64_t>& tokens,
                       std::int64_t n_max, const std::vector<std::int64_t>& lengths,
                       const EncoderParams& enc, double dropout_embed,
                       const ForwardOptions& opts) {
  Tensor emb = gather_rows(embedding, flat_ids(tokens, n_max, lengths, embedding.dim(0)));
  if (opts.training && dropout_embed > 0.0) {
    if (!opts.rng) throw std::invalid_argument("training forward needs an rng for dropout");
    emb = apply_dropout(emb, dropout_embed, *opts.rng, true);
  }
  EmbeddedBatch eb = make_embedded_batch(std::move(emb), lengths);

  std::vector<Tensor> pooled;
  pooled.reserve(lengths.size());
  if (opts.use_batched) {
    Tensor flat = encode_batch_flat(eb, enc, opts.sched);
    for (std::int64_t b = 0; b < eb.batch_size(); ++b) {
      pooled.push_back(row_max_pool(flat, eb.offsets[static_cast<std::size_t>(b)],
                                    eb.lengths[static_cast<std::size_t>(b)]));
    }
  } else {
    for (std::int64_t b = 0; b < eb.batch_size(); ++b) {
      const auto len = eb.lengths[static_cast<std::size_t>(b)];
      ContextualReps reps =
          encode(slice_rows(eb.flat, eb.offsets[static_cast<std::size_t>(b)], len), enc);
      pooled.push_back(pool_max(reps, len));
    }
  }
  return stack_rows(pooled);
}

}  // namespace

EmbeddedBatch embed_tokens(const Tensor& embedding, const std::vector<std::int64_t>& tokens,
                           std::int64_t n_max, const std::vector<std::int64_t>& lengths,
                           bool /*unused*/) {
  Tensor emb = gather_rows(embedding, flat_ids(tokens, n_max, lengths, embedding.dim(0)));
  return make_embedded_batch(std::move(emb), lengths);
}

ClassifierModel ClassifierModel::init(std::int64_t vocab_size, std::int64_t num_classes,
                                      const EncoderConfig& enc, Rng& rng) {
  if (vocab_size < 2 || num_classes < 2) {
    throw std::invalid_argument("ClassifierModel: need vocab >= 2 and classes >= 2");
  }
  ClassifierModel m;
  m.embedding = uniform_tensor({vocab_size, enc.input_dim}, -0.1, 0.1, rng);
  m.encoder = EncoderParams::init(enc, rng);
  m.cls_w = init_params({enc.rep_width(), num_classes}, InitScheme::kUniformFanIn, rng);
  m.cls_b = zeros({num_classes});
  return m;
}

std::vector<Tensor*> ClassifierModel::trainables() {
  std::vector<Tensor*> out;
  if (!freeze_embedding) out.push_back(&embedding);
  for (Tensor* t : encoder.trainables()) out.push_back(t);
  out.push_back(&cls_w);
  out.push_back(&cls_b);
  return out;
}

Tensor classify_forward(const PaddedBatch& batch, const ClassifierModel& model,
                        const ForwardOptions& opts) {
  if (batch.is_pair()) throw std::invalid_argument("classify_forward: got a pair batch");
  Tensor pooled = encode_and_pool(model.embedding, batch.tokens, batch.n_max,
                                  batch.true_lengths, model.encoder, model.dropout_embed, opts);
  if (opts.training && model.dropout_out > 0.0) {
    pooled = apply_dropout(pooled, model.dropout_out, *opts.rng, true);
  }
  return add(matmul(pooled, model.cls_w), model.cls_b);
}

Tensor siamese_features(const Tensor& u, const Tensor& v) {
  if (u.rank() != 1 || v.rank() != 1 || u.dim(0) != v.dim(0)) {
    throw std::invalid_argument("siamese_features: width mismatch");
  }
  return concat_vec(std::array<Tensor, 4>{u, v, abs_t(sub(u, v)), mul(u, v)});
}

SiameseModel SiameseModel::init(std::int64_t vocab_size, std::int64_t num_classes,
                                const EncoderConfig& enc,
                                const std::vector<std::int64_t>& head_dims, Rng& rng) {
  if (vocab_size < 2 || num_classes < 2) {
    throw std::invalid_argument("SiameseModel: need vocab >= 2 and classes >= 2");
  }
  SiameseModel m;
  m.embedding = uniform_tensor({vocab_size, enc.input_dim}, -0.1, 0.1, rng);
  m.encoder = EncoderParams::init(enc, rng);
  std::int64_t in = 4 * enc.rep_width();
  for (auto dim : head_dims) {
    Layer l;
    l.w = init_params({in, dim}, InitScheme::kUniformFanIn, rng);
    l.b = zeros({dim});
    m.hidden.push_back(std::move(l));
    in = dim;
  }
  m.out_w = init_params({in, num_classes}, InitScheme::kUniformFanIn, rng);
  m.out_b = zeros({num_classes});
  return m;
}

std::vector<Tensor*> SiameseModel::trainables() {
  std::vector<Tensor*> out;
  if (!freeze_embedding) out.push_back(&embedding);
  for (Tensor* t : encoder.trainables()) out.push_back(t);
  for (auto& l : hidden) {
    out.push_back(&l.w);
    out.push_back(&l.b);
  }
  out.push_back(&out_w);
  out.push_back(&out_b);
  return out;
}

Tensor pair_forward(const PaddedBatch& batch, const SiameseModel& model,
                    const ForwardOptions& opts) {
  if (!batch.is_pair()) throw std::invalid_argument("pair_forward: needs a pair batch");
  Tensor u = encode_and_pool(model.embedding, batch.tokens, batch.n_max, batch.true_lengths,
                             model.encoder, model.dropout_embed, opts);
  Tensor v = encode_and_pool(model.embedding, batch.tokens2, batch.n_max2, batch.true_lengths2,
                             model.encoder, model.dropout_embed, opts);
  Tensor x = concat_cols(std::array<Tensor, 4>{u, v, abs_t(sub(u, v)), mul(u, v)});
  for (const auto& l : model.hidden) {
    x = relu_t(add(matmul(x, l.w), l.b));
    if (opts.training && model.dropout_head > 0.0) {
      x = apply_dropout(x, model.dropout_head, *opts.rng, true);
    }
  }
  return add(matmul(x, model.out_w), model.out_b);
}

// ---- checkpoints ------------------------------------------------------------

namespace {

using NamedTensors = std::vector<std::pair<std::string, Tensor*>>;

void append_encoder(NamedTensors& list, EncoderParams& enc) {
  for (std::size_t i = 0; i < enc.lstms.size(); ++i) {
    const std::string p = "lstm" + std::to_string(i) + ".";
    list.emplace_back(p + "wt", &enc.lstms[i].wt);
    list.emplace_back(p + "ut", &enc.lstms[i].ut);
    list.emplace_back(p + "b", &enc.lstms[i].b);
  }
}

NamedTensors named_tensors(Checkpoint& c) {
  NamedTensors list;
  if (c.classifier) {
    auto& m = *c.classifier;
    list.emplace_back("embedding", &m.embedding);
    append_encoder(list, m.encoder);
    list.emplace_back("cls_w", &m.cls_w);
    list.emplace_back("cls_b", &m.cls_b);
  } else if (c.siamese) {
    auto& m = *c.siamese;
    list.emplace_back("embedding", &m.embedding);
    append_encoder(list, m.encoder);
    for (std::size_t i = 0; i < m.hidden.size(); ++i) {
      list.emplace_back("hidden" + std::to_string(i) + ".w", &m.hidden[i].w);
      list.emplace_back("hidden" + std::to_string(i) + ".b", &m.hidden[i].b);
    }
    list.emplace_back("out_w", &m.out_w);
    list.emplace_back("out_b", &m.out_b);
  }
  return list;
}

std::string get_meta(const std::map<std::string, std::string>& meta, const std::string& key) {
  auto it = meta.find(key);
  if (it == meta.end()) throw std::runtime_error("checkpoint missing meta key: " + key);
  return it->second;
}

}  // namespace

void save_checkpoint(const std::string& path, const Checkpoint& ckpt_in) {
  Checkpoint ckpt = ckpt_in;  // tensor handles are shared; no data copied
  std::ofstream out(path, std::ios::binary);
  if (!out) throw std::runtime_error("cannot write checkpoint: " + path);
  out << "SUBILSTM-CKPT v1\n";
  out << "task=" << ckpt.task << "\n";
  for (const auto& [k, v] : ckpt.meta) out << k << "=" << v << "\n";
  out << "vocab=" << ckpt.vocab_tokens.size() << "\n";
  for (const auto& t : ckpt.vocab_tokens) out << t << "\n";
  out << "labels=" << ckpt.label_names.size() << "\n";
  for (const auto& l : ckpt.label_names) out << l << "\n";
  auto tensors = named_tensors(ckpt);
  for (auto& [name, t] : tensors) {
    out << "param " << name << " " << t->rank();
    for (int i = 0; i < t->rank(); ++i) out << " " << t->dim(i);
    out << "\n";
  }
  out << "END-HEADER\n";
  for (auto& [name, t] : tensors) {
    out.write(reinterpret_cast<const char*>(t->data()),
              static_cast<std::streamsize>(t->size() * sizeof(double)));
  }
  if (!out) throw std::runtime_error("write failed: " + path);
}

Checkpoint load_checkpoint(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw std::runtime_error("cannot open checkpoint: " + path);
  std::string line;
  if (!std::getline(in, line) || line != "SUBILSTM-CKPT v1") {
    throw std::runtime_error("bad checkpoint header: " + path);
  }

  Checkpoint ckpt;
  std::vector<std::pair<std::string, Shape>> manifest;
  while (std::getline(in, line)) {
    if (line == "END-HEADER") break;
    if (line.rfind("param ", 0) == 0) {
      std::istringstream iss(line);
      std::string tag, name;
      int rank = 0;
      iss >> tag >> name >> rank;
      Shape shape;
      for (int i = 0; i < rank; ++i) {
        std::int64_t d;
        iss >> d;
        shape.push_back(d);
      }
      manifest.emplace_back(name, shape);
      continue;
    }
    if (line.rfind("vocab=", 0) == 0) {
      const auto n = std::stoll(line.substr(6));
      ckpt.vocab_tokens.resize(static_cast<std::size_t>(n));
      for (auto& t : ckpt.vocab_tokens) std::getline(in, t);
      continue;
    }
    if (line.rfind("labels=", 0) == 0) {
      const auto n = std::stoll(line.substr(7));
      ckpt.label_names.resize(static_cast<std::size_t>(n));
      for (auto& l : ckpt.label_names) std::getline(in, l);
      continue;
    }
    const auto eq = line.find('=');
    if (eq == std::string::npos) throw std::runtime_error("bad checkpoint line: " + line);
    const auto key = line.substr(0, eq);
    const auto val = line.substr(eq + 1);
    if (key == "task") {
      ckpt.task = val;
    } else {
      ckpt.meta[key] = val;
    }
  }

  // Rebuild the model skeleton from meta, then overwrite every tensor.
  EncoderConfig enc;
  enc.variant = parse_variant(get_meta(ckpt.meta, "variant"));
  enc.combiner = parse_combiner(get_meta(ckpt.meta, "combiner"));
  enc.input_dim = std::stoll(get_meta(ckpt.meta, "input_dim"));
  enc.hidden_dim = std::stoll(get_meta(ckpt.meta, "hidden_dim"));
  const auto vocab_size = std::stoll(get_meta(ckpt.meta, "vocab_size"));
  const auto num_classes = std::stoll(get_meta(ckpt.meta, "num_classes"));
  Rng dummy(0);

  if (ckpt.task == "pair") {
    std::vector<std::int64_t> head_dims;
    std::istringstream hd(get_meta(ckpt.meta, "head_dims"));
    std::string piece;
    while (std::getline(hd, piece, ',')) {
      if (!piece.empty()) head_dims.push_back(std::stoll(piece));
    }
    ckpt.siamese = SiameseModel::init(vocab_size, num_classes, enc, head_dims, dummy);
    ckpt.siamese->freeze_embedding = get_meta(ckpt.meta, "freeze_embedding") == "1";
    ckpt.siamese->dropout_embed = std::stod(get_meta(ckpt.meta, "dropout_embed"));
    ckpt.siamese->dropout_head = std::stod(get_meta(ckpt.meta, "dropout_head"));
  } else {
    ckpt.classifier = ClassifierModel::init(vocab_size, num_classes, enc, dummy);
    ckpt.classifier->freeze_embedding = get_meta(ckpt.meta, "freeze_embedding") == "1";
    ckpt.classifier->dropout_embed = std::stod(get_meta(ckpt.meta, "dropout_embed"));
    ckpt.classifier->dropout_out = std::stod(get_meta(ckpt.meta, "dropout_out"));
  }

  auto tensors = named_tensors(ckpt);
  if (tensors.size() != manifest.size()) {
    throw std::runtime_error("checkpoint manifest does not match model layout");
  }
  for (std::size_t i = 0; i < tensors.size(); ++i) {
    auto& [name, t] = tensors[i];
    if (name != manifest[i].first || t->shape != manifest[i].second) {
      throw std::runtime_error("checkpoint tensor mismatch at " + manifest[i].first);
    }
    auto buf = std::make_shared<Buffer>(t->size());
    in.read(reinterpret_cast<char*>(buf->data()),
            static_cast<std::streamsize>(t->size() * sizeof(double)));
    if (!in) throw std::runtime_error("truncated checkpoint: " + path);
    t->values = std::move(buf);
  }
  return ckpt;
}

}  // namespace subi
