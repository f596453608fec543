#include "doctest.h"

#include <csignal>
#include <cstdio>
#include <fstream>
#include <sstream>
#include <thread>

#include <sys/wait.h>
#include <unistd.h>

#include "httplib.h"
#include "sieve/annotation.hpp"
#include "sieve/cli.hpp"
#include "sieve/io.hpp"
#include "sieve/manifest.hpp"
#include "test_support.hpp"

using namespace sieve;
using nlohmann::json;
namespace fs = std::filesystem;

namespace {

struct CliResult {
  int rc;
  std::string out;
  std::string err;
};

CliResult run_cli(const std::vector<std::string>& args) {
  std::ostringstream out, err;
  const int rc = cli::run(args, out, err);
  return {rc, out.str(), err.str()};
}

// Writes `n` distinct pairs as jsonl and returns the path.
fs::path write_pairs(const fs::path& dir, int n, const std::string& name = "pairs.jsonl") {
  std::ofstream f(dir / name);
  for (int i = 0; i < n; ++i) {
    f << json{{"image_ref", "http://img.example/" + std::to_string(i) + ".jpg"},
              {"caption", "caption number " + std::to_string(i)},
              {"source", i % 2 ? "coco" : "cc12m"}}
             .dump()
      << "\n";
  }
  return dir / name;
}

std::size_t count_lines(const fs::path& p) {
  if (!fs::exists(p)) return 0;
  std::ifstream in(p);
  std::size_t n = 0;
  std::string line;
  while (std::getline(in, line)) n += !line.empty();
  return n;
}

std::vector<std::string> mock_annotate(const fs::path& out, const fs::path& manifest) {
  return {"--out-dir", out.string(), "--timestamp", "2026-01-15T12:00:00Z", "annotate", "--manifest",
          manifest.string(), "--adapter", "mock", "--auto-accept"};
}

}  // namespace

TEST_CASE("mock annotate writes one record per pair") {
  testing::TempDir dir;
  const auto manifest = write_pairs(dir.path(), 100);
  const auto r = run_cli(mock_annotate(dir / "out", manifest));
  CHECK(r.rc == cli::kOk);
  CHECK(count_lines(dir / "out" / "annotations.jsonl") == 100);
  CHECK(fs::exists(dir / "out" / "run.json"));

  // a second run resumes and scores nothing new
  const auto again = run_cli(mock_annotate(dir / "out", manifest));
  CHECK(again.rc == cli::kOk);
  CHECK(again.out.find("already_annotated: 100") != std::string::npos);
  CHECK(count_lines(dir / "out" / "annotations.jsonl") == 100);
}

TEST_CASE("same seed and config reproduce the same outputs") {
  testing::TempDir dir;
  const auto manifest = write_pairs(dir.path(), 60);
  REQUIRE(run_cli(mock_annotate(dir / "a", manifest)).rc == 0);
  REQUIRE(run_cli(mock_annotate(dir / "b", manifest)).rc == 0);
  CHECK(read_file(dir / "a" / "annotations.jsonl") == read_file(dir / "b" / "annotations.jsonl"));

  auto filter = [&](const fs::path& out) {
    return run_cli({"--out-dir", out.string(), "--seed", "7", "--timestamp", "2026-01-15T12:00:00Z", "filter",
                    "--manifest", manifest.string(), "--journal", (dir / "a" / "annotations.jsonl").string()});
  };
  REQUIRE(filter(dir / "f1").rc == 0);
  REQUIRE(filter(dir / "f2").rc == 0);
  for (const char* name : {"full.tsv", "filtered.tsv", "random.tsv", "random.provenance.json"}) {
    CHECK(read_file(dir / "f1" / name) == read_file(dir / "f2" / name));
  }

  // re-running from the recorded run.json reproduces the split files
  const auto rerun = run_cli({"--config", (dir / "f1" / "run.json").string(), "--out-dir", (dir / "f3").string()});
  REQUIRE(rerun.rc == 0);
  CHECK(read_file(dir / "f1" / "random.tsv") == read_file(dir / "f3" / "random.tsv"));
  const auto run_json = json::parse(read_file(dir / "f1" / "run.json"));
  CHECK(run_json["seed"] == 7);
}

TEST_CASE("a threshold outside 1..10 is a config error") {
  testing::TempDir dir;
  const auto manifest = write_pairs(dir.path(), 5);
  REQUIRE(run_cli(mock_annotate(dir / "a", manifest)).rc == 0);
  for (const char* theta : {"11", "0"}) {
    const auto r = run_cli({"--out-dir", (dir / "f").string(), "filter", "--manifest", manifest.string(), "--journal",
                            (dir / "a" / "annotations.jsonl").string(), "--theta", theta});
    CHECK(r.rc == cli::kConfigError);
  }
}

TEST_CASE("unreachable endpoint exits 4 and counts every pair as failed") {
  testing::TempDir dir;
  const auto manifest = write_pairs(dir.path(), 6);
  const auto r = run_cli({"--out-dir", (dir / "out").string(), "--format", "json", "annotate", "--manifest",
                          manifest.string(), "--adapter", "chat", "--base-url", "http://127.0.0.1:1", "--model", "m",
                          "--max-retries", "0", "--timeout-ms", "2000"});
  CHECK(r.rc == cli::kEndpointFailure);
  const auto summary = json::parse(r.out);
  CHECK(summary["failed"] == 6);
  CHECK(summary["scored"] == 0);
  CHECK(count_lines(dir / "out" / "annotations.jsonl") == 0);
}

TEST_CASE("empty manifest gives an empty journal") {
  testing::TempDir dir;
  std::ofstream(dir / "empty.jsonl").close();
  const auto r = run_cli(mock_annotate(dir / "out", dir / "empty.jsonl"));
  CHECK(r.rc == cli::kOk);
  CHECK(fs::exists(dir / "out" / "annotations.jsonl"));
  CHECK(count_lines(dir / "out" / "annotations.jsonl") == 0);
}

TEST_CASE("when every score clears the threshold the filtered split equals the full split") {
  testing::TempDir dir;
  const auto manifest_path = write_pairs(dir.path(), 40);
  const Manifest m = read_manifest_file(manifest_path);
  {
    auto store = AnnotationStore::open(dir / "nines.jsonl");
    for (const auto& r : m.records) {
      Annotation a;
      a.pair_id = r.id;
      a.score = 9;
      a.rationale = "fine";
      a.annotator = "t";
      a.ts = "2026-01-15T12:00:00Z";
      store.append(a);
    }
  }
  const auto r = run_cli({"--out-dir", (dir / "f").string(), "filter", "--manifest", manifest_path.string(),
                          "--journal", (dir / "nines.jsonl").string(), "--theta", "9"});
  REQUIRE(r.rc == 0);
  CHECK(read_file(dir / "f" / "full.tsv") == read_file(dir / "f" / "filtered.tsv"));
  CHECK(count_lines(dir / "f" / "random.tsv") == 40);
}

TEST_CASE("filtering with unscored pairs lists them and exits 2") {
  testing::TempDir dir;
  const auto scored = write_pairs(dir.path(), 10, "ten.jsonl");
  const auto more = write_pairs(dir.path(), 12, "twelve.jsonl");
  REQUIRE(run_cli(mock_annotate(dir / "a", scored)).rc == 0);
  const auto r = run_cli({"--out-dir", (dir / "f").string(), "filter", "--manifest", more.string(), "--journal",
                          (dir / "a" / "annotations.jsonl").string()});
  CHECK(r.rc == cli::kConfigError);
  const Manifest m = read_manifest_file(more);
  CHECK(r.err.find(m.records[10].id) != std::string::npos);
  CHECK(r.err.find(m.records[11].id) != std::string::npos);
  CHECK(r.err.find(m.records[0].id) == std::string::npos);
}

TEST_CASE("stats with only verdicts renders only the preference section") {
  testing::TempDir dir;
  std::ofstream v(dir / "v.jsonl");
  v << R"({"item_id":"1","verdict":"filtered_wins","presentation_order":"AB"})" << "\n"
    << R"({"item_id":"2","verdict":"A","presentation_order":"BA"})" << "\n"
    << R"({"item_id":"3","verdict":"tie","presentation_order":"AB"})" << "\n";
  v.close();
  const auto r = run_cli({"--out-dir", (dir / "s").string(), "stats", "--verdicts", (dir / "v.jsonl").string()});
  REQUIRE(r.rc == 0);
  const auto md = read_file(dir / "s" / "report.md");
  CHECK(md.find("## Judge preference") != std::string::npos);
  CHECK(md.find("alignment") == std::string::npos);
  CHECK(md.find("perplexity") == std::string::npos);
  const auto j = json::parse(read_file(dir / "s" / "report.json"));
  CHECK(!j.contains("alignment"));
  CHECK(!j.contains("significance"));
  CHECK(!j.contains("perplexity"));
  CHECK(!j.contains("buckets"));
  CHECK(j["preference"]["wins"] == 1);
  CHECK(j["preference"]["losses"] == 1);
  CHECK(j["preference"]["ties"] == 1);
}

TEST_CASE("judge build, parse and mock run") {
  testing::TempDir dir;
  std::ofstream p(dir / "pairs.jsonl");
  for (int i = 0; i < 8; ++i) {
    p << json{{"item_id", "it" + std::to_string(i)},
              {"reference", "a dog on a bench"},
              {"filtered", "a brown dog on a bench"},
              {"full", "stock photo"}}
             .dump()
      << "\n";
  }
  p.close();
  REQUIRE(run_cli({"--out-dir", (dir / "b").string(), "judge", "build", "--pairs", (dir / "pairs.jsonl").string()})
              .rc == 0);
  REQUIRE(count_lines(dir / "b" / "judge_prompts.jsonl") == 8);
  const auto first = json::parse(read_file(dir / "b" / "judge_prompts.jsonl").substr(0, read_file(dir / "b" / "judge_prompts.jsonl").find('\n')));
  CHECK(first["prompt"].get<std::string>().find("a dog on a bench") != std::string::npos);

  std::ofstream resp(dir / "responses.jsonl");
  resp << R"({"item_id":"x","presentation_order":"BA","response":"Reasoning...\nVerdict: A"})" << "\n"
       << R"({"item_id":"y","presentation_order":"AB","response":"no idea"})" << "\n";
  resp.close();
  const auto parsed =
      run_cli({"--out-dir", (dir / "p").string(), "judge", "parse", "--responses", (dir / "responses.jsonl").string()});
  CHECK(parsed.rc == cli::kPartialFailure);
  const auto verdict = json::parse(read_file(dir / "p" / "verdicts.jsonl"));
  CHECK(verdict["item_id"] == "x");
  CHECK(verdict["verdict"] == "full_wins");

  const auto run = run_cli({"--out-dir", (dir / "r").string(), "judge", "run", "--pairs",
                            (dir / "pairs.jsonl").string(), "--adapter", "mock"});
  CHECK((run.rc == cli::kOk || run.rc == cli::kPartialFailure));
  CHECK(count_lines(dir / "r" / "judge_responses.jsonl") == 8);
}

TEST_CASE("export-sft writes accepted records with hyperparameters") {
  testing::TempDir dir;
  const auto manifest = write_pairs(dir.path(), 12);
  REQUIRE(run_cli(mock_annotate(dir / "a", manifest)).rc == 0);
  const auto r = run_cli({"--out-dir", (dir / "e").string(), "--format", "json", "export-sft", "--manifest",
                          manifest.string(), "--journal", (dir / "a" / "annotations.jsonl").string()});
  REQUIRE(r.rc == 0);
  CHECK(json::parse(r.out)["exported"] == 12);
  CHECK(count_lines(dir / "e" / "sft.jsonl") == 12);

  // a journal with nothing reviewed exports nothing and says so
  const auto pending_out = dir / "pending";
  REQUIRE(run_cli({"--out-dir", pending_out.string(), "annotate", "--manifest", manifest.string(), "--adapter", "mock"})
              .rc == 0);
  const auto none = run_cli({"--out-dir", (dir / "e2").string(), "export-sft", "--manifest", manifest.string(),
                             "--journal", (pending_out / "annotations.jsonl").string()});
  CHECK(none.rc == cli::kPartialFailure);
}

TEST_CASE("unknown subcommand or option is a config error") {
  CHECK(run_cli({"bogus"}).rc == cli::kConfigError);
  CHECK(run_cli({"filter", "--no-such-flag"}).rc == cli::kConfigError);
  CHECK(run_cli({}).rc == cli::kConfigError);
  CHECK(run_cli({"--help"}).rc == cli::kOk);
}

// ---- review-serve as a real process -------------------------------------------

namespace {

struct Child {
  pid_t pid = -1;
  FILE* out = nullptr;
};

Child spawn_cli(const std::vector<std::string>& args) {
  int fds[2];
  REQUIRE(pipe(fds) == 0);
  const pid_t pid = fork();
  REQUIRE(pid >= 0);
  if (pid == 0) {
    dup2(fds[1], STDOUT_FILENO);
    close(fds[0]);
    close(fds[1]);
    std::vector<char*> argv;
    std::string exe = SIEVE_CLI_PATH;
    argv.push_back(exe.data());
    std::vector<std::string> copy = args;
    for (auto& a : copy) argv.push_back(a.data());
    argv.push_back(nullptr);
    execv(exe.c_str(), argv.data());
    _exit(127);
  }
  close(fds[1]);
  return {pid, fdopen(fds[0], "r")};
}

// Exit code, or -1 if the child had to be killed after `timeout`.
int wait_exit(pid_t pid, std::chrono::seconds timeout = std::chrono::seconds(20)) {
  int status = 0;
  const auto deadline = std::chrono::steady_clock::now() + timeout;
  while (waitpid(pid, &status, WNOHANG) == 0) {
    if (std::chrono::steady_clock::now() > deadline) {
      kill(pid, SIGKILL);
      waitpid(pid, &status, 0);
      return -1;
    }
    std::this_thread::sleep_for(std::chrono::milliseconds(10));
  }
  return WIFEXITED(status) ? WEXITSTATUS(status) : -1;
}

int read_port(FILE* out) {
  char buf[256];
  if (!std::fgets(buf, sizeof buf, out)) return -1;
  const std::string line = buf;
  const auto colon = line.rfind(':');
  return colon == std::string::npos ? -1 : std::atoi(line.c_str() + colon + 1);
}

}  // namespace

TEST_CASE("review-serve stops cleanly on SIGTERM while reviews are being written") {
  testing::TempDir dir;
  const auto manifest = write_pairs(dir.path(), 300);
  REQUIRE(run_cli({"--out-dir", (dir / "a").string(), "annotate", "--manifest", manifest.string(), "--adapter", "mock"})
              .rc == 0);
  const auto journal = dir / "a" / "annotations.jsonl";
  const Manifest m = read_manifest_file(manifest);

  auto child = spawn_cli({"--out-dir", (dir / "srv").string(), "review-serve", "--journal", journal.string(),
                          "--manifest", manifest.string(), "--port", "0"});
  const int port = read_port(child.out);
  REQUIRE(port > 0);

  std::atomic<int> accepted{0};
  std::thread reviewer([&] {
    httplib::Client c("127.0.0.1", port);
    for (const auto& r : m.records) {
      const auto res = c.Post("/api/pairs/" + r.id + "/review", R"({"decision":"accept","reviewer":"t"})",
                              "application/json");
      if (!res) break;
      if (res->status == 200) ++accepted;
    }
  });
  for (int spin = 0; spin < 10000 && accepted < 20; ++spin) std::this_thread::sleep_for(std::chrono::milliseconds(1));
  kill(child.pid, SIGTERM);
  reviewer.join();
  CHECK(accepted >= 20);
  CHECK(wait_exit(child.pid) == 0);
  std::fclose(child.out);

  auto store = AnnotationStore::open(journal);
  CHECK(store.dropped_tail_lines() == 0);
  CHECK(store.counts().accepted >= static_cast<std::size_t>(accepted.load()));
  CHECK(store.counts().total() == 300);
  CHECK(count_lines(journal) == store.journal_records());
}

TEST_CASE("review-serve on a busy port exits with a config error") {
  testing::TempDir dir;
  std::ofstream(dir / "j.jsonl").close();
  httplib::Server blocker;
  const int port = blocker.bind_to_any_port("127.0.0.1");
  REQUIRE(port > 0);
  std::thread serving([&] { blocker.listen_after_bind(); });
  blocker.wait_until_ready();
  auto child = spawn_cli({"--out-dir", (dir / "srv").string(), "review-serve", "--journal",
                          (dir / "j.jsonl").string(), "--port", std::to_string(port)});
  CHECK(wait_exit(child.pid) == cli::kConfigError);
  std::fclose(child.out);
  blocker.stop();
  serving.join();
}
