#include "scribeid/service.hpp"

#include <fcntl.h>
#include <sys/stat.h>
#include <unistd.h>

#include <algorithm>
#include <cerrno>
#include <chrono>
#include <cmath>
#include <cstring>
#include <fstream>
#include <sstream>

#include "scribeid/jsonl.hpp"

namespace scribeid {

using nlohmann::json;

namespace {

std::string errno_text() { return std::strerror(errno); }

void write_all(int fd, const std::string& data) {
  std::size_t off = 0;
  while (off < data.size()) {
    const ssize_t n = ::write(fd, data.data() + off, data.size() - off);
    if (n < 0) {
      if (errno == EINTR) continue;
      throw IoError("journal write failed: " + errno_text());
    }
    off += static_cast<std::size_t>(n);
  }
}

void fsync_dir(const std::filesystem::path& file) {
  const std::filesystem::path dir = file.has_parent_path() ? file.parent_path() : std::filesystem::path(".");
  const int fd = ::open(dir.c_str(), O_RDONLY | O_DIRECTORY | O_CLOEXEC);
  if (fd < 0) return;
  ::fsync(fd);
  ::close(fd);
}

Enrollment enrollment_from_json(const json& j, int dim, const std::string& model_hash) {
  if (!j.is_object()) throw SchemaError("journal entry is not an object");
  Enrollment e;
  e.writer_id = j.at("writer_id").get<std::string>();
  e.letters = j.at("letters").get<std::string>();
  e.embedding = j.at("embedding").get<std::vector<double>>();
  e.sample = j.at("sample");
  const std::string model = j.at("model").get<std::string>();
  if (static_cast<int>(e.embedding.size()) != dim) {
    throw SchemaError("journal embedding has " + std::to_string(e.embedding.size()) + " values, model H is " +
                      std::to_string(dim));
  }
  if (model != model_hash) throw SchemaError("journal entry was written with checkpoint " + model);
  return e;
}

void index_entry(StoreState& s, std::shared_ptr<const Enrollment> e) {
  s.by_writer[e->writer_id].push_back(s.entries.size());
  s.entries.push_back(std::move(e));
}

std::vector<double> unit(const double* v, int n) {
  double ss = 0.0;
  for (int i = 0; i < n; ++i) ss += v[i] * v[i];
  const double norm = std::sqrt(ss);
  if (!(norm > 0.0)) throw NormalizationError("embedding has zero norm");
  std::vector<double> u(v, v + n);
  for (double& x : u) x /= norm;
  return u;
}

json tensor_row(const Tensor& t, int row) {
  if (t.empty()) return nullptr;
  const int cols = t.dim(1);
  const double* p = t.data().data() + static_cast<long>(row) * cols;
  return json(std::vector<double>(p, p + cols));
}

}  // namespace

json to_json(const Enrollment& e, const std::string& model_hash) {
  return json{{"writer_id", e.writer_id},
              {"letters", e.letters},
              {"embedding", e.embedding},
              {"model", model_hash},
              {"sample", e.sample}};
}

EnrollmentStore::EnrollmentStore(std::filesystem::path journal, int dim, std::string model_hash)
    : path_(std::move(journal)), dim_(dim), model_hash_(std::move(model_hash)),
      state_(std::make_shared<StoreState>()) {
  if (dim_ < 1) throw UsageError("store dimension must be positive");
  if (path_.empty()) return;
  replay();
  fd_ = ::open(path_.c_str(), O_WRONLY | O_APPEND | O_CREAT | O_CLOEXEC, 0644);
  if (fd_ < 0) throw IoError("cannot open journal " + path_.string() + ": " + errno_text());
  if (::fsync(fd_) != 0) throw IoError("journal fsync failed: " + errno_text());
  fsync_dir(path_);
}

EnrollmentStore::~EnrollmentStore() {
  if (fd_ >= 0) ::close(fd_);
}

void EnrollmentStore::replay() {
  std::error_code ec;
  if (!std::filesystem::exists(path_, ec)) return;
  std::ifstream in(path_, std::ios::binary);
  if (!in) throw IoError("cannot read journal " + path_.string());
  std::ostringstream buf;
  buf << in.rdbuf();
  const std::string data = buf.str();

  const std::size_t complete = data.rfind('\n') == std::string::npos ? 0 : data.rfind('\n') + 1;
  auto state = std::make_shared<StoreState>();
  std::size_t pos = 0;
  long line_no = 0;
  while (pos < complete) {
    const std::size_t end = data.find('\n', pos);
    ++line_no;
    const std::string line = data.substr(pos, end - pos);
    pos = end + 1;
    if (line.empty()) continue;
    try {
      index_entry(*state, std::make_shared<const Enrollment>(enrollment_from_json(json::parse(line), dim_, model_hash_)));
    } catch (const json::exception& e) {
      throw SchemaError("journal line " + std::to_string(line_no) + ": " + e.what());
    } catch (const SchemaError& e) {
      throw SchemaError("journal line " + std::to_string(line_no) + ": " + e.what());
    }
  }
  if (complete < data.size()) {
    // An append interrupted before its newline: drop it.
    recovered_bytes_ = data.size() - complete;
    std::filesystem::resize_file(path_, complete, ec);
    if (ec) throw IoError("cannot truncate torn journal tail: " + ec.message());
  }
  file_size_ = static_cast<long long>(complete);
  state_ = std::move(state);
}

std::size_t EnrollmentStore::append(Enrollment e) {
  if (static_cast<int>(e.embedding.size()) != dim_) {
    throw DimensionError("enrollment embedding has " + std::to_string(e.embedding.size()) + " values, expected " +
                         std::to_string(dim_));
  }
  if (e.writer_id.empty()) throw UsageError("writer_id must not be empty");
  auto entry = std::make_shared<const Enrollment>(std::move(e));

  std::lock_guard<std::mutex> writer(write_mu_);
  if (fd_ >= 0) {
    const std::string line = to_json(*entry, model_hash_).dump() + "\n";
    try {
      write_all(fd_, line);
      if (::fsync(fd_) != 0) throw IoError("journal fsync failed: " + errno_text());
    } catch (...) {
      // Leave no partial line behind for the next append.
      if (::ftruncate(fd_, file_size_) == 0) ::fsync(fd_);
      throw;
    }
    file_size_ += static_cast<long long>(line.size());
  }
  auto next = std::make_shared<StoreState>(*snapshot());
  index_entry(*next, entry);
  const std::size_t templates = next->by_writer[entry->writer_id].size();
  {
    std::lock_guard<std::mutex> lock(read_mu_);
    state_ = std::move(next);
  }
  return templates;
}

std::shared_ptr<const StoreState> EnrollmentStore::snapshot() const {
  std::lock_guard<std::mutex> lock(read_mu_);
  return state_;
}

IdentificationService::IdentificationService(std::unique_ptr<WriterNet> net, std::string model_hash,
                                             std::filesystem::path journal, ServiceOptions options)
    : net_(std::move(net)), model_hash_(std::move(model_hash)), options_(options),
      store_(std::move(journal), net_->config().feature_dim(), model_hash_) {
  const int L = net_->config().letters();
  if (options_.min_enroll_letters < 0 || options_.min_enroll_letters > L) {
    throw ConfigurationError("min_enroll_letters must lie in [0, " + std::to_string(L) + "]");
  }
}

json IdentificationService::model_info() const {
  const ModelConfig& c = net_->config();
  return json{{"alphabet", c.alphabet},
              {"N", c.branches},
              {"H", c.feature_dim()},
              {"T", c.timesteps},
              {"num_enrolled", store_.size()},
              {"num_writers", store_.writers()},
              {"checkpoint_hash", model_hash_}};
}

ModelInput IdentificationService::parse_letters(const json& body, std::vector<NormalizedTrajectory>& trajs,
                                                std::size_t min_letters) const {
  const ModelConfig& c = net_->config();
  if (!body.is_object()) throw ServiceError(400, "bad_request", "request body must be a JSON object");
  auto it = body.find("letters");
  if (it == body.end() || !it->is_object()) {
    throw ServiceError(400, "bad_request", "'letters' must be an object mapping letters to trajectories");
  }
  for (const auto& [key, value] : it->items()) {
    if (key.size() != 1 || c.alphabet.find(key[0]) == std::string::npos) {
      throw ServiceError(400, "unsupported_letter", "letter '" + key + "' is not in the model alphabet " + c.alphabet,
                         json{{"letter", key}});
    }
    (void)value;
  }
  if (it->size() < min_letters) {
    std::string missing;
    for (char l : c.alphabet) {
      if (!it->contains(std::string(1, l))) missing.push_back(l);
    }
    throw ServiceError(422, "insufficient_letters",
                       "need at least " + std::to_string(min_letters) + " letters, got " + std::to_string(it->size()),
                       json{{"missing", missing}, {"required", min_letters}});
  }

  ModelInput input;
  trajs.clear();
  for (const auto& [key, value] : it->items()) {
    const char letter = key[0];
    try {
      if (!value.is_object()) throw SchemaError("trajectory must be an object");
      json record = value;
      if (auto l = record.find("letter"); l != record.end() && *l != key) {
        throw SchemaError("trajectory letter does not match its key");
      }
      record["letter"] = key;
      if (!record.contains("writer_id") || !record["writer_id"].is_string()) record["writer_id"] = "";
      trajs.push_back(normalize(trajectory_from_json(record), c.timesteps));
    } catch (const ServiceError&) {
      throw;
    } catch (const Error& e) {
      throw ServiceError(400, "malformed_trajectory", "letter '" + key + "': " + e.what(),
                         json{{"letter", key}, {"reason", e.code()}});
    }
    input.letters.push_back(make_group(std::vector<NormalizedTrajectory>{trajs.back()}, letter, c.raster));
  }
  return input;
}

json IdentificationService::enroll(const json& body) {
  if (!body.is_object()) throw ServiceError(400, "bad_request", "request body must be a JSON object");
  auto wid = body.find("writer_id");
  if (wid == body.end() || !wid->is_string() || wid->get<std::string>().empty()) {
    throw ServiceError(400, "bad_request", "'writer_id' must be a non-empty string");
  }
  const ModelConfig& c = net_->config();
  const std::size_t min_letters =
      options_.min_enroll_letters == 0 ? c.alphabet.size() : static_cast<std::size_t>(options_.min_enroll_letters);
  std::vector<NormalizedTrajectory> trajs;
  const ModelInput input = parse_letters(body, trajs, min_letters);

  Tape tape;
  tape.set_grad_enabled(false);
  const ForwardResult fwd = net_->forward(tape, input, NormContext{false, false});
  const Tensor& e = fwd.embedding.value();
  Enrollment entry;
  entry.writer_id = wid->get<std::string>();
  entry.embedding.assign(e.data().begin(), e.data().end());
  entry.letters = fwd.letters;
  entry.sample = body["letters"];
  unit(entry.embedding.data(), static_cast<int>(entry.embedding.size()));  // rejects a zero embedding
  const std::size_t templates = store_.append(std::move(entry));
  return json{{"writer_id", wid->get<std::string>()}, {"templates", templates}, {"enrolled", store_.size()}};
}

json IdentificationService::identify(const json& body) {
  const auto t0 = std::chrono::steady_clock::now();
  const auto snap = store_.snapshot();
  std::vector<NormalizedTrajectory> trajs;
  const ModelInput input = parse_letters(body, trajs, 1);
  if (snap->entries.empty()) throw ServiceError(409, "empty_store", "no writers are enrolled");

  Tape tape;
  tape.set_grad_enabled(false);
  const ForwardResult fwd = net_->forward(tape, input, NormContext{false, false});
  const int H = net_->config().feature_dim();
  const std::vector<double> probe = unit(fwd.embedding.value().data().data(), H);

  struct Hit {
    std::string writer;
    double similarity;
    std::size_t templates;
  };
  std::vector<Hit> hits;
  hits.reserve(snap->by_writer.size());
  for (const auto& [writer, rows] : snap->by_writer) {
    double best = -2.0;
    for (std::size_t r : rows) {
      const std::vector<double> t = unit(snap->entries[r]->embedding.data(), H);
      double dot = 0.0;
      for (int i = 0; i < H; ++i) dot += probe[static_cast<std::size_t>(i)] * t[static_cast<std::size_t>(i)];
      best = std::max(best, dot);
    }
    hits.push_back({writer, best, rows.size()});
  }
  // by_writer is ordered by id, so a stable sort breaks ties by id.
  std::stable_sort(hits.begin(), hits.end(), [](const Hit& a, const Hit& b) { return a.similarity > b.similarity; });

  json ranking = json::array();
  for (const Hit& h : hits) {
    ranking.push_back({{"writer_id", h.writer}, {"similarity", h.similarity}, {"templates", h.templates}});
  }

  json letter_weights = json::object();
  json per_letter = json::object();
  for (std::size_t k = 0; k < fwd.letters.size(); ++k) {
    const char l = fwd.letters[k];
    const std::string key(1, l);
    letter_weights[key] =
        fwd.letter_weights.empty() ? json(nullptr) : json(fwd.letter_weights.at({0, static_cast<int>(k)}));
    const LetterPooling& p = fwd.pooling[k];
    const auto traj = std::find_if(trajs.begin(), trajs.end(), [&](const NormalizedTrajectory& t) { return t.letter == l; });
    json xy = json::array();
    for (int t = 0; t < traj->timesteps(); ++t) xy.push_back({traj->x(t), traj->y(t)});
    per_letter[key] = {{"style", tensor_row(p.style, 0)},
                       {"temporal_raw", tensor_row(p.temporal_raw, 0)},
                       {"temporal_effective", tensor_row(p.temporal_effective, 0)},
                       {"resampled", xy}};
  }
  const double latency =
      std::chrono::duration<double, std::milli>(std::chrono::steady_clock::now() - t0).count();
  return json{{"ranking", ranking},
              {"attention", {{"letter", letter_weights}, {"letters", per_letter}}},
              {"latency_ms", latency}};
}

std::pair<int, json> IdentificationService::error_response(const std::exception& e) {
  int status = 500;
  std::string code = "internal";
  json details = json::object();
  if (const auto* s = dynamic_cast<const ServiceError*>(&e)) {
    status = s->status();
    code = s->code();
    details = s->details();
  } else if (dynamic_cast<const json::exception*>(&e) != nullptr) {
    status = 400;
    code = "bad_request";
  } else if (const auto* err = dynamic_cast<const Error*>(&e)) {
    code = err->code();
    if (code == "unsupported_letter") status = 400;
  }
  json error = {{"code", code}, {"message", e.what()}};
  for (const auto& [k, v] : details.items()) error[k] = v;
  return {status, json{{"error", error}}};
}

}  // namespace scribeid
