#pragma once

#include <filesystem>
#include <map>
#include <memory>
#include <mutex>
#include <string>
#include <vector>

#include <json.hpp>

#include "cue/pipeline.hpp"

namespace httplib {
class Server;
}

namespace cue {

struct FlagRecord {
  int concept_id = 0;  // combined id
  bool flagged = false;
  std::string note;
  std::string timestamp;  // ISO 8601 UTC, as supplied or stamped on write
};

nlohmann::json to_json(const FlagRecord& r);
FlagRecord flag_from_json(const nlohmann::json& j);

/// Append-only JSON-lines journal in the run dir; the last record per concept wins.
class FlagStore {
 public:
  explicit FlagStore(std::filesystem::path run_dir);

  static constexpr const char* kFileName = "flags.jsonl";

  /// Current state per concept, ordered by concept id.
  std::map<int, FlagRecord> state() const;
  /// Concepts whose latest record has flagged = true, ascending.
  std::vector<int> flagged() const;
  void append(FlagRecord r);

  const std::filesystem::path& path() const { return path_; }

 private:
  std::filesystem::path path_;
  mutable std::mutex mu_;
};

/// Splits "host:port"; the port must be in [0, 65535].
std::pair<std::string, int> parse_addr(const std::string& addr);

class Service {
 public:
  /// Loads the run eagerly; throws MissingRunArtifacts.
  explicit Service(const std::filesystem::path& run_dir, std::filesystem::path static_dir = {});
  ~Service();

  Service(const Service&) = delete;
  Service& operator=(const Service&) = delete;

  /// Binds and serves until stop(). Throws AddrInUse when binding fails.
  void listen(const std::string& host, int port);
  /// Binds to a free port and returns it; call serve() afterwards.
  int bind_any(const std::string& host);
  void serve();
  void stop();
  bool running() const;

  nlohmann::json run_summary() const;
  nlohmann::json concepts() const;
  nlohmann::json top_segments(int concept_id, std::size_t k) const;
  nlohmann::json attribution(const std::string& item_id) const;
  nlohmann::json flags() const;
  nlohmann::json post_flag(const nlohmann::json& body);
  nlohmann::json filter(const nlohmann::json& body) const;
  nlohmann::json curves() const;

 private:
  void routes();

  Run run_;
  FlagStore store_;
  std::filesystem::path static_dir_;
  nlohmann::json report_;
  std::unique_ptr<httplib::Server> server_;
};

}  // namespace cue
