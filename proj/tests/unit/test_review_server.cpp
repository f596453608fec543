#include "doctest.h"

#include <fstream>
#include <thread>

#include "httplib.h"
#include "sieve/review_server.hpp"
#include "test_support.hpp"

using namespace sieve;
using nlohmann::json;

namespace {

Annotation pending(std::string id, int score) {
  Annotation a;
  a.pair_id = std::move(id);
  a.score = score;
  a.rationale = "r" + std::to_string(score);
  a.annotator = "teacher";
  a.ts = "2026-01-01T00:00:00Z";
  return a;
}

// Runs a ReviewService on an ephemeral loopback port for the lifetime of the object.
class LiveService {
 public:
  LiveService(AnnotationStore& store, const Manifest* manifest, std::optional<std::filesystem::path> static_dir = {})
      : service_(store, manifest) {
    service_.mount(server_, static_dir);
    port_ = server_.bind_to_any_port("127.0.0.1");
    thread_ = std::thread([this] { server_.listen_after_bind(); });
    server_.wait_until_ready();
  }
  ~LiveService() {
    server_.stop();
    thread_.join();
  }
  httplib::Client client() const { return httplib::Client("127.0.0.1", port_); }

 private:
  httplib::Server server_;
  ReviewService service_;
  int port_ = 0;
  std::thread thread_;
};

json body_of(const httplib::Result& r) {
  REQUIRE(r);
  return json::parse(r->body);
}

}  // namespace

TEST_CASE("fresh journal reports zero counts") {
  auto store = AnnotationStore::in_memory();
  LiveService live(store, nullptr);
  auto c = live.client();
  const auto r = c.Get("/api/stats");
  REQUIRE(r);
  CHECK(r->status == 200);
  const auto j = json::parse(r->body);
  CHECK(j["pending"] == 0);
  CHECK(j["accepted"] == 0);
  CHECK(j["overridden"] == 0);
  CHECK(j["total"] == 0);
}

TEST_CASE("queue, detail and review round trip") {
  Manifest m;
  m.records = {{"a", "http://x/a.jpg", "cap a", "s"}, {"b", "http://x/b.jpg", "cap b", "s"}, {"c", "http://x/c.jpg", "cap c", "s"}};
  auto store = AnnotationStore::in_memory();
  for (const auto& [id, s] : std::vector<std::pair<std::string, int>>{{"a", 9}, {"b", 4}, {"c", 7}}) store.append(pending(id, s));
  LiveService live(store, &m);
  auto c = live.client();

  auto q = body_of(c.Get("/api/queue?state=pending&limit=2"));
  REQUIRE(q.size() == 2);
  CHECK(q[0]["pair"]["image_ref"] == "http://x/a.jpg");
  CHECK(q[0]["annotation"]["score"] == 9);
  CHECK(q[1]["annotation"]["pair_id"] == "b");

  auto d = body_of(c.Get("/api/pairs/c"));
  CHECK(d["pair"]["caption"] == "cap c");
  CHECK(d["annotation"]["review_state"] == "pending");

  auto r = c.Post("/api/pairs/a/review", R"({"decision":"accept","reviewer":"kim"})", "application/json");
  REQUIRE(r);
  CHECK(r->status == 200);
  CHECK(json::parse(r->body)["annotation"]["review_state"] == "accepted");
  CHECK(body_of(c.Get("/api/pairs/a"))["annotation"]["review_state"] == "accepted");
  CHECK(body_of(c.Get("/api/pairs/a"))["annotation"]["reviewer"] == "human:kim");

  r = c.Post("/api/pairs/b/review", R"({"decision":"override","score":2,"rationale":"wrong animal","reviewer":"human:kim"})",
             "application/json");
  REQUIRE(r);
  CHECK(r->status == 200);
  const auto ov = json::parse(r->body)["annotation"];
  CHECK(ov["override_score"] == 2);
  CHECK(ov["reviewer"] == "human:kim");
  CHECK(store.lookup("b")->effective_score() == 2);

  auto stats = body_of(c.Get("/api/stats"));
  CHECK(stats["pending"] == 1);
  CHECK(stats["accepted"] == 1);
  CHECK(stats["overridden"] == 1);
  CHECK(body_of(c.Get("/api/queue")).size() == 1);
  CHECK(body_of(c.Get("/api/queue?state=all")).size() == 3);
  CHECK(body_of(c.Get("/api/queue?state=overridden"))[0]["annotation"]["pair_id"] == "b");
}

TEST_CASE("error statuses") {
  auto store = AnnotationStore::in_memory();
  store.append(pending("a", 5));
  LiveService live(store, nullptr);
  auto c = live.client();

  auto r = c.Get("/api/pairs/missing");
  REQUIRE(r);
  CHECK(r->status == 404);
  CHECK(json::parse(r->body)["error"] == "NotFound");

  CHECK(c.Post("/api/pairs/missing/review", R"({"decision":"accept"})", "application/json")->status == 404);
  CHECK(c.Post("/api/pairs/a/review", "not json", "application/json")->status == 400);
  CHECK(c.Post("/api/pairs/a/review", R"({"decision":"maybe"})", "application/json")->status == 400);
  CHECK(c.Post("/api/pairs/a/review", R"({"decision":"override","score":11})", "application/json")->status == 400);
  CHECK(c.Post("/api/pairs/a/review", R"({"decision":"override","score":"3"})", "application/json")->status == 400);
  CHECK(c.Get("/api/queue?state=bogus")->status == 400);
  CHECK(c.Post("/api/pairs/a/review", R"({"decision":"accept"})", "application/json")->status == 200);
  const auto again = c.Post("/api/pairs/a/review", R"({"decision":"accept"})", "application/json");
  CHECK(again->status == 409);
  CHECK(json::parse(again->body)["error"] == "AlreadyReviewed");
  // the pair is shown as null without a manifest
  CHECK(body_of(c.Get("/api/pairs/a"))["pair"].is_null());
}

TEST_CASE("concurrent reviewers: exactly one wins each pair") {
  auto store = AnnotationStore::in_memory();
  for (int i = 0; i < 20; ++i) store.append(pending("p" + std::to_string(i), 5));
  LiveService live(store, nullptr);
  std::atomic<int> ok{0}, conflict{0};
  std::vector<std::thread> threads;
  for (int t = 0; t < 4; ++t) {
    threads.emplace_back([&] {
      auto c = live.client();
      for (int i = 0; i < 20; ++i) {
        const auto r = c.Post("/api/pairs/p" + std::to_string(i) + "/review", R"({"decision":"accept"})", "application/json");
        if (r && r->status == 200) ++ok;
        if (r && r->status == 409) ++conflict;
      }
    });
  }
  for (auto& t : threads) t.join();
  CHECK(ok == 20);
  CHECK(conflict == 60);
  CHECK(store.journal_records() == 40);
}

TEST_CASE("static bundle is served") {
  testing::TempDir dir;
  std::ofstream(dir / "index.html") << "<html>review</html>";
  auto store = AnnotationStore::in_memory();
  LiveService live(store, nullptr, dir.path());
  auto c = live.client();
  const auto r = c.Get("/index.html");
  REQUIRE(r);
  CHECK(r->status == 200);
  CHECK(r->body == "<html>review</html>");
  CHECK(c.Get("/")->body == "<html>review</html>");
}
