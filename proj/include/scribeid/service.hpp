#pragma once

// Enrollment store with a write-ahead JSONL journal and the enroll/identify
// service on top of a loaded checkpoint.

#include <filesystem>
#include <map>
#include <memory>
#include <mutex>
#include <string>
#include <vector>

#include "json.hpp"
#include "scribeid/errors.hpp"
#include "scribeid/model.hpp"

namespace scribeid {

struct Enrollment {
  std::string writer_id;
  std::vector<double> embedding;  // [H]
  std::string letters;            // alphabet order
  nlohmann::json sample;          // the request's letters object, as received

  bool operator==(const Enrollment&) const = default;
};

nlohmann::json to_json(const Enrollment& e, const std::string& model_hash);

// Immutable view of the store. Entries keep journal order.
struct StoreState {
  std::vector<std::shared_ptr<const Enrollment>> entries;
  std::map<std::string, std::vector<std::size_t>> by_writer;  // writer -> entry indices
};

// One journal line per enrollment, fsynced before the enrollment becomes
// visible. Opening replays the journal; a torn final line (no newline) is cut
// off, any other malformed line throws SchemaError. An empty path keeps the
// store in memory only.
class EnrollmentStore {
 public:
  EnrollmentStore(std::filesystem::path journal, int dim, std::string model_hash);
  ~EnrollmentStore();
  EnrollmentStore(const EnrollmentStore&) = delete;
  EnrollmentStore& operator=(const EnrollmentStore&) = delete;

  // Returns the writer's template count after the append.
  std::size_t append(Enrollment e);

  std::shared_ptr<const StoreState> snapshot() const;
  std::size_t size() const { return snapshot()->entries.size(); }
  std::size_t writers() const { return snapshot()->by_writer.size(); }
  // Bytes dropped from a torn tail at open.
  std::size_t recovered_bytes() const { return recovered_bytes_; }
  const std::filesystem::path& path() const { return path_; }

 private:
  void replay();

  std::filesystem::path path_;
  int dim_;
  std::string model_hash_;
  int fd_ = -1;
  long long file_size_ = 0;
  std::size_t recovered_bytes_ = 0;
  mutable std::mutex read_mu_;   // guards state_ pointer swaps
  std::mutex write_mu_;          // one writer at a time
  std::shared_ptr<const StoreState> state_;
};

// Error with an HTTP status; `details` is merged into the error object.
class ServiceError : public Error {
 public:
  ServiceError(int status, std::string code, const std::string& message,
               nlohmann::json details = nlohmann::json::object())
      : Error(std::move(code), message), status_(status), details_(std::move(details)) {}

  int status() const noexcept { return status_; }
  const nlohmann::json& details() const noexcept { return details_; }

 private:
  int status_;
  nlohmann::json details_;
};

struct ServiceOptions {
  // Letters an enrollment must contain; 0 means the whole alphabet.
  int min_enroll_letters = 0;
};

class IdentificationService {
 public:
  // `model_hash` identifies the checkpoint (file digest).
  IdentificationService(std::unique_ptr<WriterNet> net, std::string model_hash,
                        std::filesystem::path journal, ServiceOptions options = {});

  nlohmann::json model_info() const;
  // {writer_id, letters: {letter: trajectory}} -> {writer_id, templates, enrolled}
  nlohmann::json enroll(const nlohmann::json& body);
  // {letters: {...}} -> {ranking, attention, latency_ms}. Never changes state.
  nlohmann::json identify(const nlohmann::json& body);

  const EnrollmentStore& store() const { return store_; }
  const WriterNet& model() const { return *net_; }

  // JSON error body for any exception escaping enroll/identify, with its status.
  static std::pair<int, nlohmann::json> error_response(const std::exception& e);

 private:
  ModelInput parse_letters(const nlohmann::json& body, std::vector<NormalizedTrajectory>& trajs,
                           std::size_t min_letters) const;

  std::unique_ptr<WriterNet> net_;
  std::string model_hash_;
  ServiceOptions options_;
  EnrollmentStore store_;
};

}  // namespace scribeid
