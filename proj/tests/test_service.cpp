#include <doctest.h>

#include <sstream>
#include <thread>

#include "cue/cli.hpp"
#include "cue/pipeline.hpp"
#include "cue/service.hpp"
#include "support.hpp"

// after Eigen: resolv.h defines _res
#include <httplib.h>

using namespace cue;
using nlohmann::json;

namespace {

struct RunFixture {
  testing::TempDir root{"cue-svc"};
  std::filesystem::path data = root / "data", run = root / "run", web = root / "web";

  RunFixture() {
    const Dataset ds = generate(testing::small_spec(4, 160));
    save_dataset(ds, data);
    RunConfig c;
    c.d_cer = 4;
    c.d_unc = 4;
    c.n_qmc = 64;
    c.dataset = data.string();
    c.out = run.string();
    write_run(run_pipeline(ds, c, 0), c, ds);
    std::filesystem::create_directories(web);
    write_text(web / "index.html", "<html>concepts</html>");
  }
};

RunFixture& fixture() {
  static RunFixture f;
  return f;
}

// Serves on a loopback port for the lifetime of the object.
struct LiveServer {
  Service service;
  int port;
  std::thread thread;

  explicit LiveServer(const std::filesystem::path& run, const std::filesystem::path& web = {})
      : service(run, web), port(service.bind_any("127.0.0.1")), thread([this] { service.serve(); }) {
    for (int i = 0; i < 200 && !service.running(); ++i) std::this_thread::sleep_for(std::chrono::milliseconds(5));
  }
  ~LiveServer() {
    service.stop();
    thread.join();
  }
  httplib::Client client() const { return httplib::Client("127.0.0.1", port); }
};

json body(const httplib::Result& r) {
  REQUIRE(r);
  return json::parse(r->body);
}

}  // namespace

TEST_CASE("address parsing") {
  CHECK(parse_addr("127.0.0.1:8080") == std::pair<std::string, int>{"127.0.0.1", 8080});
  CHECK(parse_addr("localhost:0").second == 0);
  CHECK_THROWS_AS(parse_addr("nohost"), Error);
  CHECK_THROWS_AS(parse_addr("h:99999"), Error);
  CHECK_THROWS_AS(parse_addr("h:80x"), Error);
}

TEST_CASE("flag journal keeps the last record per concept") {
  testing::TempDir dir;
  FlagStore store(dir.path());
  CHECK(store.flagged().empty());
  store.append({3, true, "a", ""});
  store.append({1, true, "", "2024-01-01T00:00:00Z"});
  store.append({3, false, "b", ""});
  const auto st = store.state();
  CHECK(st.at(3).note == "b");
  CHECK_FALSE(st.at(3).flagged);
  CHECK(st.at(1).timestamp == "2024-01-01T00:00:00Z");
  CHECK(st.at(3).timestamp.size() == 20);  // stamped on write
  CHECK(store.flagged() == std::vector<int>{1});
  CHECK(FlagStore(dir.path()).flagged() == std::vector<int>{1});

  write_text(store.path(), "{\"concept\": 2}\nnot json\n");
  CHECK_THROWS_AS(store.state(), Error);
}

TEST_CASE("read endpoints") {
  auto& f = fixture();
  LiveServer srv(f.run, f.web);
  auto cli = srv.client();

  auto j = body(cli.Get("/api/run"));
  CHECK(j["d_cer"] == 4);
  CHECK(j["n_items"] == 160);

  j = body(cli.Get("/api/concepts"));
  CHECK(j["concepts"].size() == 8);
  CHECK(j["concepts"][5]["provenance"] == "UNC");
  CHECK(j["concepts"][5]["local_index"] == 1);

  auto r = cli.Get("/api/concepts/6/top-segments?k=3");
  REQUIRE(r);
  CHECK(r->status == 200);
  j = json::parse(r->body);
  CHECK(j["segments"].size() == 3);
  CHECK(j["segments"][0]["activation"].get<double>() >= j["segments"][2]["activation"].get<double>());
  CHECK(j["segments"][0].contains("grid_pos"));

  r = cli.Get("/api/concepts/99/top-segments");
  REQUIRE(r);
  CHECK(r->status == 404);
  CHECK(json::parse(r->body)["code"] == "ConceptOutOfRange");
  r = cli.Get("/api/concepts/1/top-segments?k=abc");
  REQUIRE(r);
  CHECK(r->status == 400);

  r = cli.Get("/api/items/item00003/attribution");
  REQUIRE(r);
  CHECK(r->status == 200);
  j = json::parse(r->body);
  CHECK(j["activations"].size() == 4);
  CHECK(j["activations"][0].size() == 4);
  CHECK(j["grid"] == json::array({2, 2}));

  r = cli.Get("/api/items/nobody/attribution");
  REQUIRE(r);
  CHECK(r->status == 404);
  CHECK(json::parse(r->body)["code"] == "UnknownItem");

  r = cli.Get("/api/unknown");
  REQUIRE(r);
  CHECK(r->status == 404);

  r = cli.Get("/index.html");
  REQUIRE(r);
  CHECK(r->status == 200);
  CHECK(r->body == "<html>concepts</html>");

  j = body(cli.Get("/api/curves"));
  CHECK(j.contains("filter"));
  CHECK(j.contains("reject"));
}

TEST_CASE("flags: read-your-write, persistence and the filter ranking") {
  auto& f = fixture();
  std::filesystem::remove(f.run / FlagStore::kFileName);
  {
    LiveServer srv(f.run);
    auto cli = srv.client();
    auto r = cli.Post("/api/filter", "{}", "application/json");
    REQUIRE(r);
    CHECK(r->status == 400);
    CHECK(json::parse(r->body)["code"] == "EmptyFlagSet");

    auto j = body(cli.Post("/api/flags", json{{"concept", 5}, {"note", "grain"}}.dump(), "application/json"));
    CHECK(j["flags"] == json::array({5}));
    j = body(cli.Get("/api/flags"));
    CHECK(j["flags"] == json::array({5}));
    CHECK(j["records"][0]["note"] == "grain");

    r = cli.Post("/api/flags", json{{"concept", 77}}.dump(), "application/json");
    REQUIRE(r);
    CHECK(r->status == 404);
    r = cli.Post("/api/flags", "{\"note\": 1}", "application/json");
    REQUIRE(r);
    CHECK(r->status == 400);
    r = cli.Post("/api/flags", "nope", "application/json");
    REQUIRE(r);
    CHECK(r->status == 400);

    // Concurrent writers all land in the journal.
    std::vector<std::thread> writers;
    for (int t = 0; t < 4; ++t)
      writers.emplace_back([&, t] {
        auto c = srv.client();
        c.Post("/api/flags", json{{"concept", 4 + t}, {"flagged", t != 3}}.dump(), "application/json");
      });
    for (auto& w : writers) w.join();
    CHECK(body(cli.Get("/api/flags"))["flags"] == json::array({4, 5, 6}));
  }

  // A fresh server sees the same flags.
  LiveServer again(f.run);
  auto cli = again.client();
  CHECK(body(cli.Get("/api/flags"))["flags"] == json::array({4, 5, 6}));
  const auto served = body(cli.Post("/api/filter", "{}", "application/json"));

  std::string out_dir = f.run.string();
  std::vector<std::string> args = {"cue", "filter", "--out", out_dir};
  std::vector<char*> argv;
  for (auto& a : args) argv.push_back(a.data());
  std::ostringstream out, err;
  REQUIRE(cli_main(static_cast<int>(argv.size()), argv.data(), out, err) == 0);
  const auto written = json::parse(read_text(f.run / "filter_report.json"));
  REQUIRE(served["methods"].size() == written["methods"].size());
  for (std::size_t k = 0; k < served["methods"].size(); ++k)
    CHECK(served["methods"][k]["ranking"] == written["methods"][k]["ranking"]);

  const auto single = body(cli.Post("/api/filter", json{{"method", "OursNMF"}, {"flags", {6}}}.dump(), "application/json"));
  CHECK(single["methods"].size() == 1);
  CHECK(single["flags"] == json::array({6}));

  const auto curves = body(cli.Get("/api/curves"));
  CHECK(curves["filter"].size() == 5);
}

TEST_CASE("a taken port is reported") {
  auto& f = fixture();
  LiveServer srv(f.run);
  Service second(f.run);
  try {
    second.listen("127.0.0.1", srv.port);
    FAIL("expected AddrInUse");
  } catch (const Error& e) {
    CHECK(e.code() == ErrorCode::AddrInUse);
  }
}

TEST_CASE("service refuses an incomplete run") {
  testing::TempDir empty;
  try {
    Service s(empty.path());
    FAIL("expected MissingRunArtifacts");
  } catch (const Error& e) {
    CHECK(e.code() == ErrorCode::MissingRunArtifacts);
  }
}
