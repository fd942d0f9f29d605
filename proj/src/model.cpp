#include "scribeid/model.hpp"

#include <openssl/evp.h>

#include <algorithm>
#include <bit>
#include <cmath>
#include <cstring>
#include <fstream>

#include "scribeid/errors.hpp"
#include "scribeid/init.hpp"
#include "scribeid/ops.hpp"

namespace scribeid {
namespace {

constexpr char kMagic[8] = {'S', 'C', 'R', 'B', 'I', 'D', '0', '1'};

void put_u64(std::ostream& out, std::uint64_t v) {
  unsigned char b[8];
  for (int i = 0; i < 8; ++i) b[i] = static_cast<unsigned char>(v >> (8 * i));
  out.write(reinterpret_cast<const char*>(b), 8);
}

std::uint64_t get_u64(std::istream& in) {
  unsigned char b[8];
  if (!in.read(reinterpret_cast<char*>(b), 8)) throw SchemaError("checkpoint truncated");
  std::uint64_t v = 0;
  for (int i = 0; i < 8; ++i) v |= static_cast<std::uint64_t>(b[i]) << (8 * i);
  return v;
}

}  // namespace

WriterNet::WriterNet(ModelConfig config) : config_(std::move(config)) {
  config_.validate();
  trajectory_ = std::make_unique<TrajectoryEncoder>(store_, config_);
  lsa_ = std::make_unique<Lsa>(store_, config_);
  image_ = std::make_unique<ImageEncoder>(store_, config_);
  hap_ = std::make_unique<Hap>(store_, config_);
  if (config_.num_writers > 0) {
    Rng rng(derive_seed(config_.seed, {0x434c4153ULL}));
    Tensor w({config_.num_writers, config_.feature_dim()});
    xavier_uniform(w, config_.feature_dim(), config_.num_writers, rng);
    classifier_ = &store_.add("classifier/weight", std::move(w));
    scale_ = &store_.add("classifier/scale", Tensor::scalar(config_.initial_scale));
  }
}

ForwardResult WriterNet::forward(Tape& tape, const ModelInput& input, const NormContext& ctx) {
  if (input.letters.empty()) throw UsageError("forward needs at least one letter");
  const int batch = input.batch();
  const int n = static_cast<int>(input.letters.size());
  std::vector<int> order(static_cast<std::size_t>(n));
  for (int k = 0; k < n; ++k) {
    const char l = input.letters[k].letter;
    if (l == 0 || config_.alphabet.find(l) == std::string::npos) {
      throw UnsupportedLetterError(std::string("letter '") + (l ? std::string(1, l) : "") +
                                   "' is not in the registered alphabet '" + config_.alphabet + "'");
    }
    if (input.letters[k].xy.dim(0) != batch || input.letters[k].raster.dim(0) != batch) {
      throw DimensionError("letter groups must share the batch size");
    }
    order[k] = k;
  }
  std::sort(order.begin(), order.end(), [&](int a, int b) {
    return config_.alphabet.find(input.letters[a].letter) < config_.alphabet.find(input.letters[b].letter);
  });
  for (int k = 1; k < n; ++k) {
    if (input.letters[order[k]].letter == input.letters[order[k - 1]].letter) {
      throw UsageError(std::string("letter '") + input.letters[order[k]].letter + "' given twice");
    }
  }

  ForwardResult result;
  std::vector<char> letters;
  std::vector<Var> xs, rasters;
  for (int k : order) {
    letters.push_back(input.letters[k].letter);
    result.letters.push_back(input.letters[k].letter);
    xs.push_back(tape.constant(input.letters[k].xy));
    rasters.push_back(tape.constant(input.letters[k].raster));
  }
  std::optional<Tensor> mask;
  if (input.mask) {
    expect_rank(*input.mask, 2, "letter mask");
    expect_dim(*input.mask, 0, batch, "letter mask");
    expect_dim(*input.mask, 1, n, "letter mask");
    mask = Tensor({batch, n});
    for (int b = 0; b < batch; ++b) {
      for (int k = 0; k < n; ++k) mask->at({b, k}) = input.mask->at({b, order[k]});
    }
  }

  const std::vector<std::vector<Var>> styles = trajectory_->encode(*lsa_, letters, xs, ctx);
  const Var images = image_->encode(n == 1 ? rasters[0] : ops::concat(rasters, 0), ctx);
  std::vector<Var> h;
  for (int k = 0; k < n; ++k) h.push_back(n == 1 ? images : ops::slice(images, 0, k * batch, batch));
  for (int k = 0; k < n; ++k) result.pooling.push_back(hap_->pool_letter(styles[k], h[k]));
  result.images = h;
  result.embedding = hap_->pool_letters(result.pooling, h, mask ? &*mask : nullptr, &result.letter_weights);
  return result;
}

Var WriterNet::logits(Var embedding) {
  if (!classifier_) throw UsageError("model has no classifier head");
  const Tensor& e = embedding.value();
  expect_rank(e, 2, "embedding");
  for (int b = 0; b < e.dim(0); ++b) {
    double ss = 0.0;
    for (int j = 0; j < e.dim(1); ++j) ss += e.at({b, j}) * e.at({b, j});
    if (std::sqrt(ss) < 1e-12) throw NormalizationError("embedding row " + std::to_string(b) + " has zero norm");
  }
  Tape& t = *embedding.tape;
  const Var cosines = ops::matmul(ops::l2_normalize(embedding), ops::l2_normalize(t.parameter(*classifier_)), true);
  return ops::mul_scalar(cosines, t.parameter(*scale_));
}

void WriterNet::project_parameters() {
  if (scale_ && scale_->value[0] < 1.0) scale_->value[0] = 1.0;
}

void WriterNet::save(const std::filesystem::path& path) const {
  nlohmann::json tensors = nlohmann::json::array();
  for (const Parameter* p : store_.all()) {
    tensors.push_back({{"name", p->name}, {"shape", p->value.shape()}, {"trainable", p->trainable}});
  }
  nlohmann::json lsa_updates = nlohmann::json::object();
  for (const LsaSubmodule* s : lsa_->submodules()) lsa_updates[s->key] = s->updates;
  const nlohmann::json header = {{"format", "scribeid-checkpoint"},
                                 {"version", 1},
                                 {"dtype", "f64"},
                                 {"byte_order", "little"},
                                 {"config", to_json(config_)},
                                 {"tensors", tensors},
                                 {"lsa_updates", lsa_updates},
                                 {"bn_updates", image_->updates()},
                                 {"metadata", metadata}};
  const std::string text = header.dump();
  const auto tmp = std::filesystem::path(path.string() + ".tmp");
  {
    std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
    if (!out) throw IoError("cannot write " + tmp.string());
    out.write(kMagic, sizeof kMagic);
    put_u64(out, text.size());
    out.write(text.data(), static_cast<std::streamsize>(text.size()));
    for (const Parameter* p : store_.all()) {
      for (double v : p->value.data()) put_u64(out, std::bit_cast<std::uint64_t>(v));
    }
    if (!out) throw IoError("write failed: " + tmp.string());
  }
  std::filesystem::rename(tmp, path);
}

std::unique_ptr<WriterNet> WriterNet::load(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot read " + path.string());
  char magic[8];
  if (!in.read(magic, 8) || std::memcmp(magic, kMagic, 8) != 0) {
    throw SchemaError(path.string() + " is not a scribeid checkpoint");
  }
  const std::uint64_t len = get_u64(in);
  if (len > (1ULL << 30)) throw SchemaError("checkpoint header too large");
  std::string text(len, '\0');
  if (!in.read(text.data(), static_cast<std::streamsize>(len))) throw SchemaError("checkpoint header truncated");
  nlohmann::json header;
  try {
    header = nlohmann::json::parse(text);
  } catch (const nlohmann::json::parse_error& e) {
    throw SchemaError(std::string("checkpoint header: ") + e.what());
  }
  if (!header.is_object() || header.value("dtype", "") != "f64") throw SchemaError("unsupported checkpoint dtype");
  try {
    return read_payload(in, header);
  } catch (const nlohmann::json::exception& e) {
    throw SchemaError(std::string("checkpoint header: ") + e.what());
  } catch (const ConfigurationError& e) {
    throw SchemaError(std::string("checkpoint config: ") + e.what());
  }
}

std::unique_ptr<WriterNet> WriterNet::read_payload(std::istream& in, const nlohmann::json& header) {
  auto net = std::make_unique<WriterNet>(model_config_from_json(header.at("config")));
  for (const auto& entry : header.at("tensors")) {
    const std::string name = entry.at("name").get<std::string>();
    const Shape shape = entry.at("shape").get<Shape>();
    Parameter* p = net->store_.find(name);
    if (!p) throw SchemaError("checkpoint tensor '" + name + "' does not belong to the configured model");
    if (p->value.shape() != shape) {
      throw SchemaError("checkpoint tensor '" + name + "' has shape " + shape_string(shape) + ", expected " +
                        shape_string(p->value.shape()));
    }
    for (double& v : p->value.storage()) v = std::bit_cast<double>(get_u64(in));
  }
  if (header.at("tensors").size() != net->store_.size()) throw SchemaError("checkpoint is missing tensors");
  for (LsaSubmodule* s : net->lsa_->submodules()) {
    s->updates = header.at("lsa_updates").value(s->key, 0L);
  }
  const auto bn = header.at("bn_updates").get<std::vector<long>>();
  if (bn.size() != net->image_->updates().size()) throw SchemaError("checkpoint batch-norm counters mismatch");
  net->image_->updates() = bn;
  net->metadata = header.value("metadata", nlohmann::json::object());
  if (in.peek() != std::char_traits<char>::eof()) throw SchemaError("checkpoint has trailing bytes");
  return net;
}

LetterGroup make_group(const PreparedCorpus& corpus, char letter, const std::vector<int>& rows) {
  const int batch = static_cast<int>(rows.size()), steps = corpus.timesteps, size = corpus.raster_size;
  LetterGroup g;
  g.letter = letter;
  g.xy = Tensor({batch, 2, steps});
  g.raster = Tensor({batch, 1, size, size});
  for (int b = 0; b < batch; ++b) {
    const PreparedRecord& r = corpus.records.at(static_cast<std::size_t>(rows[b]));
    for (int t = 0; t < steps; ++t) {
      g.xy.at({b, 0, t}) = r.xy[2 * static_cast<std::size_t>(t)];
      g.xy.at({b, 1, t}) = r.xy[2 * static_cast<std::size_t>(t) + 1];
    }
    std::copy(r.raster.begin(), r.raster.end(), g.raster.storage().begin() + static_cast<long>(b) * size * size);
  }
  return g;
}

LetterGroup make_group(const std::vector<NormalizedTrajectory>& trajs, char letter, int raster_size) {
  if (trajs.empty()) throw UsageError("make_group needs at least one trajectory");
  const int batch = static_cast<int>(trajs.size()), steps = trajs[0].timesteps();
  LetterGroup g;
  g.letter = letter;
  g.xy = Tensor({batch, 2, steps});
  g.raster = Tensor({batch, 1, raster_size, raster_size});
  for (int b = 0; b < batch; ++b) {
    if (trajs[b].timesteps() != steps) throw DimensionError("trajectories differ in length");
    for (int t = 0; t < steps; ++t) {
      g.xy.at({b, 0, t}) = trajs[b].x(t);
      g.xy.at({b, 1, t}) = trajs[b].y(t);
    }
    const Tensor img = rasterize(trajs[b], raster_size);
    std::copy(img.data().begin(), img.data().end(),
              g.raster.storage().begin() + static_cast<long>(b) * raster_size * raster_size);
  }
  return g;
}

ModelInput make_input(const PreparedCorpus& corpus, const std::string& letters,
                      const std::vector<std::vector<int>>& samples) {
  ModelInput in;
  for (std::size_t k = 0; k < letters.size(); ++k) {
    std::vector<int> rows;
    rows.reserve(samples.size());
    for (const auto& s : samples) rows.push_back(s.at(k));
    in.letters.push_back(make_group(corpus, letters[k], rows));
  }
  return in;
}

std::string file_sha256(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot read " + path.string());
  EVP_MD_CTX* ctx = EVP_MD_CTX_new();
  EVP_DigestInit_ex(ctx, EVP_sha256(), nullptr);
  char buf[1 << 16];
  while (in.read(buf, sizeof buf) || in.gcount() > 0) {
    EVP_DigestUpdate(ctx, buf, static_cast<std::size_t>(in.gcount()));
  }
  unsigned char digest[EVP_MAX_MD_SIZE];
  unsigned int len = 0;
  EVP_DigestFinal_ex(ctx, digest, &len);
  EVP_MD_CTX_free(ctx);
  static const char* hex = "0123456789abcdef";
  std::string out;
  for (unsigned int i = 0; i < len; ++i) {
    out.push_back(hex[digest[i] >> 4]);
    out.push_back(hex[digest[i] & 15]);
  }
  return out;
}

}  // namespace scribeid
