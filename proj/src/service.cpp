#include "cue/service.hpp"

#include <chrono>
#include <ctime>
#include <fstream>
#include <sstream>

#include <httplib.h>

namespace cue {

namespace fs = std::filesystem;
using nlohmann::json;

namespace {

std::string utc_now() {
  const auto t = std::chrono::system_clock::to_time_t(std::chrono::system_clock::now());
  std::tm tm{};
  gmtime_r(&t, &tm);
  char buf[32];
  std::strftime(buf, sizeof buf, "%Y-%m-%dT%H:%M:%SZ", &tm);
  return buf;
}

int http_status(ErrorCode c) {
  switch (c) {
    case ErrorCode::ConceptOutOfRange: return 404;
    case ErrorCode::MissingRunArtifacts:
    case ErrorCode::IoFailure: return 500;
    default: return exit_code(c) == 2 ? 400 : 422;
  }
}

void send_json(httplib::Response& res, const json& body, int status = 200) {
  res.status = status;
  res.set_content(body.dump(), "application/json");
}

void send_error(httplib::Response& res, int status, std::string_view code, const std::string& message) {
  send_json(res, {{"code", code}, {"message", message}}, status);
}

template <typename Fn>
httplib::Server::Handler guarded(Fn fn) {
  return [fn](const httplib::Request& req, httplib::Response& res) {
    try {
      fn(req, res);
    } catch (const Error& e) {
      send_error(res, http_status(e.code()), to_string(e.code()), e.what());
    } catch (const json::exception& e) {
      send_error(res, 400, "InvalidRequest", e.what());
    } catch (const std::exception& e) {
      send_error(res, 500, "Internal", e.what());
    }
  };
}

json load_report(const fs::path& p) { return fs::is_regular_file(p) ? json::parse(read_text(p)) : json(nullptr); }

}  // namespace

json to_json(const FlagRecord& r) {
  return {{"concept", r.concept_id}, {"flagged", r.flagged}, {"note", r.note}, {"timestamp", r.timestamp}};
}

FlagRecord flag_from_json(const json& j) {
  require(j.is_object() && j.contains("concept") && j["concept"].is_number_integer(), ErrorCode::InvalidFlags,
          "flag record needs an integer 'concept'");
  FlagRecord r;
  r.concept_id = j["concept"].get<int>();
  r.flagged = j.value("flagged", true);
  r.note = j.value("note", std::string{});
  r.timestamp = j.value("timestamp", std::string{});
  return r;
}

// ---------------------------------------------------------------------------
// FlagStore

FlagStore::FlagStore(fs::path run_dir) : path_(std::move(run_dir) / kFileName) {}

std::map<int, FlagRecord> FlagStore::state() const {
  std::lock_guard lock(mu_);
  std::map<int, FlagRecord> out;
  std::ifstream in(path_);
  std::string line;
  int lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
    json j;
    try {
      j = json::parse(line);
    } catch (const json::exception& e) {
      throw Error(ErrorCode::InvalidFlags, path_.string() + ":" + std::to_string(lineno) + ": " + e.what());
    }
    auto r = flag_from_json(j);
    out[r.concept_id] = std::move(r);
  }
  return out;
}

std::vector<int> FlagStore::flagged() const {
  std::vector<int> out;
  for (const auto& [c, r] : state())
    if (r.flagged) out.push_back(c);
  return out;
}

void FlagStore::append(FlagRecord r) {
  if (r.timestamp.empty()) r.timestamp = utc_now();
  std::lock_guard lock(mu_);
  std::ofstream out(path_, std::ios::app);
  require(static_cast<bool>(out), ErrorCode::IoFailure, "cannot open " + path_.string());
  out << to_json(r).dump() << '\n';
  out.flush();
  require(static_cast<bool>(out), ErrorCode::IoFailure, "write failed: " + path_.string());
}

std::pair<std::string, int> parse_addr(const std::string& addr) {
  const auto colon = addr.rfind(':');
  require(colon != std::string::npos && colon > 0 && colon + 1 < addr.size(), ErrorCode::InvalidConfig,
          "address must be host:port, got '" + addr + "'");
  int port = -1;
  try {
    std::size_t used = 0;
    port = std::stoi(addr.substr(colon + 1), &used);
    if (used != addr.size() - colon - 1) port = -1;
  } catch (const std::exception&) {
  }
  require(port >= 0 && port <= 65535, ErrorCode::InvalidConfig, "bad port in '" + addr + "'");
  return {addr.substr(0, colon), port};
}

// ---------------------------------------------------------------------------
// Service

Service::Service(const fs::path& run_dir, fs::path static_dir)
    : run_(load_run(run_dir)),
      store_(run_dir),
      static_dir_(std::move(static_dir)),
      report_(json::parse(read_text(run_dir / "report.json"))),
      server_(std::make_unique<httplib::Server>()) {
  // httplib defaults to SO_REUSEPORT, which lets a second server share a busy port.
  server_->set_socket_options([](auto sock) {
    int yes = 1;
    setsockopt(sock, SOL_SOCKET, SO_REUSEADDR, &yes, sizeof(yes));
  });
  routes();
}

Service::~Service() { stop(); }

json Service::run_summary() const {
  const auto& r = run_.result;
  return {{"report_version", kReportVersion},
          {"run_dir", fs::absolute(run_.dir).lexically_normal().string()},
          {"config", report_.at("config")},
          {"seed", r.seed},
          {"n_items", run_.dataset.manifest.n_items},
          {"n_classes", run_.dataset.manifest.n_classes},
          {"d_cer", r.d_cer()},
          {"d_unc", r.d_unc()},
          {"gmm", report_.at("gmm")},
          {"groups", report_.at("groups")},
          {"uncertainty", report_.at("uncertainty")},
          {"top_concepts", report_.at("top_concepts")}};
}

json Service::concepts() const {
  const auto& r = run_.result;
  const auto flags = store_.state();
  const auto e_cer = r.global.certain.reported(), e_unc = r.global.uncertain.reported();
  auto is_dead = [](const ConceptBank<double>& b, int local) {
    return std::find(b.dead.begin(), b.dead.end(), local) != b.dead.end();
  };
  json out = json::array();
  for (Eigen::Index c = 0; c < r.d_cer() + r.d_unc(); ++c) {
    const bool unc = c >= r.d_cer();
    const int local = static_cast<int>(unc ? c - r.d_cer() : c);
    const auto it = flags.find(static_cast<int>(c));
    out.push_back({{"id", c},
                   {"provenance", unc ? "UNC" : "CER"},
                   {"local_index", local},
                   {"global_importance", unc ? e_unc(local) : e_cer(local)},
                   {"dead", is_dead(unc ? r.bank_unc : r.bank_cer, local)},
                   {"flagged", it != flags.end() && it->second.flagged}});
  }
  return {{"d_cer", r.d_cer()}, {"d_unc", r.d_unc()}, {"concepts", std::move(out)}};
}

json Service::top_segments(int concept_id, std::size_t k) const {
  const auto& r = run_.result;
  const auto& items = run_.dataset.manifest.items;
  require(concept_id >= 0 && concept_id < r.d_cer() + r.d_unc(), ErrorCode::ConceptOutOfRange,
          "concept " + std::to_string(concept_id) + " outside [0," + std::to_string(r.d_cer() + r.d_unc()) + ")");
  const bool unc = concept_id >= r.d_cer();
  const auto hits = unc ? top_activating_segments(r.coeffs_unc, items, concept_id - r.d_cer(), k)
                        : top_activating_segments(r.coeffs_cer, items, concept_id, k);
  std::map<std::string, const ItemRecord*> by_id;
  for (const auto& it : items) by_id[it.id] = &it;
  json out = json::array();
  for (const auto& h : hits) {
    json e = {{"item_id", h.item_id}, {"segment", h.segment}, {"activation", h.activation}};
    const auto* it = by_id.at(h.item_id);
    if (it->grid) e["grid_pos"] = {h.segment / it->grid->second, h.segment % it->grid->second};
    out.push_back(std::move(e));
  }
  return {{"concept", concept_id}, {"provenance", unc ? "UNC" : "CER"}, {"k", k}, {"segments", std::move(out)}};
}

json Service::attribution(const std::string& item_id) const {
  const auto& r = run_.result;
  const auto& items = run_.dataset.manifest.items;
  std::size_t i = 0;
  while (i < items.size() && items[i].id != item_id) ++i;
  if (i == items.size()) throw Error(ErrorCode::ConceptOutOfRange, "unknown item '" + item_id + "'");
  const auto& item = items[i];
  const bool unc = r.groups.group[i] == Group::Uncertain;
  const auto map = attribution_map(unc ? r.coeffs_unc : r.coeffs_cer, item);
  json rows = json::array();
  for (Eigen::Index s = 0; s < map.activations.rows(); ++s) {
    const Eigen::VectorXd row = map.activations.row(s).transpose();
    rows.push_back(std::vector<double>(row.data(), row.data() + row.size()));
  }
  const Eigen::Index off = unc ? r.d_cer() : 0, d = unc ? r.d_unc() : r.d_cer();
  const Eigen::VectorXd local = r.local.row(static_cast<Eigen::Index>(i)).segment(off, d).transpose();
  json out = {{"item_id", item.id},
              {"group", unc ? "UNC" : "CER"},
              {"f", r.groups.f[i]},
              {"uncertainty",
               {{"total", r.scores[i].total}, {"aleatoric", r.scores[i].aleatoric}, {"epistemic", r.scores[i].epistemic}}},
              {"predicted", r.predicted[i]},
              {"concept_offset", off},
              {"segment_count", item.segment_count},
              {"activations", std::move(rows)},
              {"local_importance", std::vector<double>(local.data(), local.data() + local.size())}};
  out["grid"] = item.grid ? json{item.grid->first, item.grid->second} : json(nullptr);
  return out;
}

json Service::flags() const {
  json records = json::array();
  std::vector<int> flagged;
  for (const auto& [c, r] : store_.state()) {
    records.push_back(to_json(r));
    if (r.flagged) flagged.push_back(c);
  }
  return {{"flags", flagged}, {"records", std::move(records)}};
}

json Service::post_flag(const json& body) {
  auto rec = flag_from_json(body);
  const auto& r = run_.result;
  require(rec.concept_id >= 0 && rec.concept_id < r.d_cer() + r.d_unc(), ErrorCode::ConceptOutOfRange,
          "concept " + std::to_string(rec.concept_id) + " does not exist");
  store_.append(std::move(rec));
  return flags();
}

json Service::filter(const json& body) const {
  // The flag set is captured once so concurrent writes do not leak into this computation.
  std::vector<int> flagged = body.contains("flags") ? body["flags"].get<std::vector<int>>() : store_.flagged();
  require(!flagged.empty(), ErrorCode::EmptyFlagSet, "no concepts are flagged");
  std::vector<std::string> names;
  if (body.contains("method")) names.push_back(body["method"].get<std::string>());
  if (body.contains("methods")) {
    auto more = body["methods"].get<std::vector<std::string>>();
    names.insert(names.end(), more.begin(), more.end());
  }
  if (names.empty()) names = run_.config.methods;
  const auto outcome =
      run_filter(run_.result, run_.dataset, flagged, resolve_filter_methods(names), run_.config.pooling);
  return filter_report(outcome, run_.dataset);
}

json Service::curves() const {
  json out = json::object();
  for (const char* name : {"filter", "reject"}) {
    const json rep = load_report(run_.dir / (std::string(name) + "_report.json"));
    json list = json::array();
    if (rep.is_object() && rep.contains("methods"))
      for (const auto& m : rep["methods"]) {
        if (m.contains("curve") && !m["curve"].is_null()) list.push_back(m["curve"]);
        for (const char* key : {"accuracy_curve", "ood_curve"})
          if (m.contains(key)) list.push_back(m[key]);
      }
    out[name] = std::move(list);
  }
  return out;
}

void Service::routes() {
  auto& s = *server_;
  s.Get("/api/run", guarded([this](const httplib::Request&, httplib::Response& res) { send_json(res, run_summary()); }));
  s.Get("/api/concepts",
        guarded([this](const httplib::Request&, httplib::Response& res) { send_json(res, concepts()); }));
  s.Get(R"(/api/concepts/(-?\d+)/top-segments)", guarded([this](const httplib::Request& req, httplib::Response& res) {
          std::size_t k = 6;
          if (req.has_param("k")) {
            const auto v = req.get_param_value("k");
            try {
              const long parsed = std::stol(v);
              require(parsed > 0, ErrorCode::InvalidConfig, "k must be positive");
              k = static_cast<std::size_t>(parsed);
            } catch (const std::logic_error&) {
              throw Error(ErrorCode::InvalidConfig, "k must be an integer, got '" + v + "'");
            }
          }
          send_json(res, top_segments(std::stoi(req.matches[1].str()), k));
        }));
  s.Get(R"(/api/items/([^/]+)/attribution)", guarded([this](const httplib::Request& req, httplib::Response& res) {
          const auto id = req.matches[1].str();
          try {
            send_json(res, attribution(id));
          } catch (const Error& e) {
            if (e.code() != ErrorCode::ConceptOutOfRange) throw;
            send_error(res, 404, "UnknownItem", e.what());
          }
        }));
  s.Get("/api/flags", guarded([this](const httplib::Request&, httplib::Response& res) { send_json(res, flags()); }));
  s.Post("/api/flags", guarded([this](const httplib::Request& req, httplib::Response& res) {
           send_json(res, post_flag(json::parse(req.body)));
         }));
  s.Post("/api/filter", guarded([this](const httplib::Request& req, httplib::Response& res) {
           send_json(res, filter(req.body.empty() ? json::object() : json::parse(req.body)));
         }));
  s.Get("/api/curves", guarded([this](const httplib::Request&, httplib::Response& res) { send_json(res, curves()); }));
  s.Get(R"(/api/.*)", [](const httplib::Request& req, httplib::Response& res) {
    send_error(res, 404, "NotFound", "no endpoint " + req.path);
  });
  if (!static_dir_.empty() && fs::is_directory(static_dir_)) s.set_mount_point("/", static_dir_.string());
}

void Service::listen(const std::string& host, int port) {
  require(server_->bind_to_port(host, port), ErrorCode::AddrInUse,
          "cannot bind " + host + ":" + std::to_string(port));
  serve();
}

int Service::bind_any(const std::string& host) {
  const int port = server_->bind_to_any_port(host);
  require(port > 0, ErrorCode::AddrInUse, "cannot bind " + host);
  return port;
}

void Service::serve() { server_->listen_after_bind(); }

void Service::stop() {
  if (server_) server_->stop();
}

bool Service::running() const { return server_->is_running(); }

}  // namespace cue
