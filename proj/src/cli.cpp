#include "sieve/cli.hpp"

#include <algorithm>
#include <atomic>
#include <charconv>
#include <csignal>
#include <fstream>
#include <map>
#include <ostream>
#include <sstream>
#include <thread>

#include "CLI11.hpp"
#include "httplib.h"

#include "sieve/alignment.hpp"
#include "sieve/annotation.hpp"
#include "sieve/endpoint.hpp"
#include "sieve/filter.hpp"
#include "sieve/io.hpp"
#include "sieve/manifest.hpp"
#include "sieve/report.hpp"
#include "sieve/review_server.hpp"
#include "sieve/scoring.hpp"
#include "sieve/stats.hpp"

namespace sieve::cli {

namespace fs = std::filesystem;
using ojson = nlohmann::ordered_json;

namespace {

std::atomic<bool> g_shutdown{false};

extern "C" void on_shutdown_signal(int) { g_shutdown.store(true); }

/// Usage error raised after parsing (bad combinations, unreadable inputs).
class UsageError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// JSON config files: nested objects are subcommand sections.
class JsonConfig : public CLI::Config {
 public:
  std::string to_config(const CLI::App* app, bool default_also, bool, std::string) const override {
    return section(app, default_also).dump(2) + "\n";
  }

  std::vector<CLI::ConfigItem> from_config(std::istream& input) const override {
    const auto j = nlohmann::json::parse(input, nullptr, false);
    if (j.is_discarded() || !j.is_object()) throw CLI::ConversionError("config file is not a JSON object");
    std::vector<CLI::ConfigItem> items;
    walk(j, {}, items);
    return items;
  }

 private:
  static ojson typed(const std::string& s) {
    if (s == "true") return true;
    if (s == "false") return false;
    std::int64_t i = 0;
    auto [p, ec] = std::from_chars(s.data(), s.data() + s.size(), i);
    if (!s.empty() && ec == std::errc{} && p == s.data() + s.size()) return i;
    std::uint64_t u = 0;
    auto [p2, ec2] = std::from_chars(s.data(), s.data() + s.size(), u);
    if (!s.empty() && ec2 == std::errc{} && p2 == s.data() + s.size()) return u;
    double d = 0;
    auto [p3, ec3] = std::from_chars(s.data(), s.data() + s.size(), d);
    if (!s.empty() && ec3 == std::errc{} && p3 == s.data() + s.size()) return d;
    return s;
  }

  static ojson section(const CLI::App* app, bool default_also) {
    ojson j = ojson::object();
    for (const CLI::Option* opt : app->get_options({})) {
      if (opt->get_lnames().empty() || !opt->get_configurable()) continue;
      const std::string name = opt->get_lnames()[0];
      if (name == "help" || name == "config") continue;
      if (opt->get_expected_max() == 0) {
        if (opt->count() > 0) {
          j[name] = true;
        } else if (default_also) {
          j[name] = false;
        }
        continue;
      }
      if (opt->count() > 0) {
        const auto& results = opt->results();
        if (opt->get_items_expected_max() > 1) {
          ojson arr = ojson::array();
          for (const auto& r : results) arr.push_back(typed(r));
          j[name] = arr;
        } else {
          j[name] = typed(results.back());
        }
      } else if (default_also && !opt->get_default_str().empty()) {
        const std::string d = opt->get_default_str();
        if (d.front() == '[' && d.back() == ']') {
          ojson arr = ojson::array();
          for (const auto& part : CLI::detail::split(d.substr(1, d.size() - 2), ',')) arr.push_back(typed(std::string(trim(part))));
          j[name] = arr;
        } else {
          j[name] = typed(d);
        }
      }
    }
    for (const CLI::App* sub : app->get_subcommands()) j[sub->get_name()] = section(sub, default_also);
    return j;
  }

  static void walk(const nlohmann::json& j, const std::vector<std::string>& parents,
                   std::vector<CLI::ConfigItem>& out) {
    for (auto it = j.begin(); it != j.end(); ++it) {
      if (it->is_object()) {
        auto p = parents;
        p.push_back(it.key());
        CLI::ConfigItem open;
        open.parents = p;
        open.name = "++";
        out.push_back(open);
        walk(*it, p, out);
        CLI::ConfigItem close;
        close.parents = p;
        close.name = "--";
        out.push_back(close);
        continue;
      }
      CLI::ConfigItem item;
      item.parents = parents;
      item.name = it.key();
      if (it->is_array()) {
        for (const auto& v : *it) item.inputs.push_back(scalar(v));
      } else {
        item.inputs.push_back(scalar(*it));
      }
      out.push_back(item);
    }
  }

  static std::string scalar(const nlohmann::json& v) {
    if (v.is_string()) return v.get<std::string>();
    if (v.is_boolean()) return v.get<bool>() ? "true" : "false";
    if (v.is_number_unsigned()) return std::to_string(v.get<std::uint64_t>());
    if (v.is_number_integer()) return std::to_string(v.get<std::int64_t>());
    if (v.is_number_float()) {
      char buf[40];
      std::snprintf(buf, sizeof buf, "%.17g", v.get<double>());
      return buf;
    }
    throw CLI::ConversionError("unsupported config value " + v.dump());
  }
};

struct GlobalOptions {
  std::uint64_t seed = 1;
  std::string out_dir = "sieve-out";
  std::string format = "markdown";
  std::string timestamp;

  std::string now() const { return timestamp.empty() ? utc_timestamp_now() : timestamp; }
  bool json() const { return format == "json"; }
};

struct ManifestInput {
  std::string path;
  std::string format;
  std::string source;

  Manifest load() const {
    std::optional<ManifestFormat> fmt;
    if (!format.empty()) fmt = manifest_format_from_string(format);
    ParseOptions po;
    po.default_source = source;
    return read_manifest_file(path, fmt, po);
  }
};

void add_manifest_options(CLI::App* app, ManifestInput& in, bool required) {
  auto* opt = app->add_option("--manifest", in.path, "Corpus manifest (.tsv, .tsv2, .tsv3 or .jsonl)");
  if (required) opt->required();
  app->add_option("--manifest-format", in.format, "Override manifest format")
      ->check(CLI::IsMember({"tsv2", "tsv3", "jsonl"}));
  app->add_option("--source", in.source, "Source tag for rows without one");
}

struct EndpointFlags {
  std::string config_file;
  std::string adapter = "chat";
  std::string base_url;
  std::string model;
  std::string auth_env;
  int max_parallel = 4;
  double rps = 2.0;
  int max_retries = 3;
  std::vector<int> backoff{500, 1000, 2000, 4000};
  std::string cache_dir;
  int timeout_ms = 60000;
  std::map<std::string, CLI::Option*> opts;

  void add(CLI::App* app) {
    opts["file"] = app->add_option("--endpoint-config", config_file, "Endpoint config JSON (flags override it)");
    opts["adapter"] =
        app->add_option("--adapter", adapter, "Scorer adapter")->check(CLI::IsMember({"chat", "native", "mock"}));
    opts["base_url"] = app->add_option("--base-url", base_url, "Endpoint base URL");
    opts["model"] = app->add_option("--model", model, "Model id");
    opts["auth"] = app->add_option("--auth-env", auth_env, "Environment variable holding the bearer token");
    opts["parallel"] = app->add_option("--max-parallel", max_parallel, "Requests in flight")->check(CLI::PositiveNumber);
    opts["rps"] = app->add_option("--rps", rps, "Requests per second")->check(CLI::PositiveNumber);
    opts["retries"] = app->add_option("--max-retries", max_retries, "Retries per request")->check(CLI::NonNegativeNumber);
    opts["backoff"] = app->add_option("--backoff-ms", backoff, "Retry backoff schedule (ms)");
    opts["cache"] = app->add_option("--cache-dir", cache_dir, "Response cache directory");
    opts["timeout"] = app->add_option("--timeout-ms", timeout_ms, "Request timeout (ms)")->check(CLI::PositiveNumber);
  }

  EndpointConfig resolve() const {
    EndpointConfig c;
    if (!config_file.empty()) {
      const auto j = nlohmann::json::parse(read_file(config_file), nullptr, false);
      if (j.is_discarded()) throw ConfigError("endpoint config is not valid JSON: " + config_file);
      c = EndpointConfig::from_json(j);
    }
    const bool base = config_file.empty();
    auto set = [&](const char* key) { return base || opts.at(key)->count() > 0; };
    if (set("adapter")) c.adapter = *adapter_kind_from_string(adapter);
    if (set("base_url")) c.base_url = base_url;
    if (set("model")) c.model_id = model;
    if (set("auth")) c.auth_token_env_name = auth_env;
    if (set("parallel")) c.max_parallel = max_parallel;
    if (set("rps")) c.requests_per_second = rps;
    if (set("retries")) c.max_retries = max_retries;
    if (set("backoff")) c.retry_backoff_ms = backoff;
    if (set("cache")) c.cache_dir = cache_dir;
    if (set("timeout")) c.timeout_ms = timeout_ms;
    c.validate();
    return c;
  }
};

void print_summary(std::ostream& out, const GlobalOptions& g, const std::string& title, const ojson& summary) {
  if (g.json()) {
    out << summary.dump(2) << "\n";
    return;
  }
  out << title << "\n";
  for (auto it = summary.begin(); it != summary.end(); ++it) {
    out << "  " << it.key() << ": " << (it->is_string() ? it->get<std::string>() : it->dump()) << "\n";
  }
}

std::string list_ids(const std::vector<std::string>& ids, std::size_t max_shown = 20) {
  std::string s;
  for (std::size_t i = 0; i < ids.size() && i < max_shown; ++i) s += "\n  " + ids[i];
  if (ids.size() > max_shown) s += "\n  ... and " + std::to_string(ids.size() - max_shown) + " more";
  return s;
}

// ---- annotate ---------------------------------------------------------------

struct AnnotateArgs {
  ManifestInput manifest;
  EndpointFlags endpoint;
  std::string rubric;
  std::string journal;
  bool auto_accept = false;
  std::size_t sample_per_source = 0;
};

Manifest balanced_sample(const Manifest& m, std::size_t per_source, std::uint64_t seed) {
  std::vector<std::string> sources;
  std::map<std::string, std::vector<std::string>> groups;
  for (const auto& r : m.records) {
    auto [it, inserted] = groups.try_emplace(r.source);
    if (inserted) sources.push_back(r.source);
    it->second.push_back(r.id);
  }
  SplitManifest chosen;
  for (const auto& s : sources) {
    const auto& ids = groups[s];
    auto pick = sample_random(ids, std::min(per_source, ids.size()), seed);
    chosen.pair_ids.insert(chosen.pair_ids.end(), pick.pair_ids.begin(), pick.pair_ids.end());
  }
  return materialize(chosen, m);
}

int cmd_annotate(const GlobalOptions& g, const AnnotateArgs& a, std::ostream& out, std::ostream& err) {
  Manifest manifest = a.manifest.load();
  const fs::path out_dir = g.out_dir;
  if (a.sample_per_source > 0) {
    manifest = balanced_sample(manifest, a.sample_per_source, g.seed);
    write_manifest_file(out_dir / "sample.tsv", manifest, ManifestFormat::kTsv3);
  }
  const EndpointConfig cfg = a.endpoint.resolve();
  const Rubric rubric = a.rubric.empty() ? Rubric::standard() : Rubric::load(a.rubric);
  const fs::path journal = a.journal.empty() ? out_dir / "annotations.jsonl" : fs::path(a.journal);

  AnnotationStore::Options so;
  so.clock = [&g] { return g.now(); };
  AnnotationStore store = AnnotationStore::open(journal, so);

  std::vector<PairRecord> todo;
  for (const auto& r : manifest.records) {
    if (!store.lookup(r.id)) todo.push_back(r);
  }
  ClientOptions co;
  co.timestamp = [&g] { return g.now(); };
  ScoringClient client(cfg, rubric, co);

  std::size_t scored = 0;
  std::size_t failed = 0;
  std::size_t unparseable = 0;
  std::string unparseable_log;
  const std::size_t chunk = static_cast<std::size_t>(cfg.max_parallel) * 16;
  for (std::size_t start = 0; start < todo.size(); start += chunk) {
    const std::size_t len = std::min(chunk, todo.size() - start);
    const auto outcomes = client.score_many(std::span<const PairRecord>(todo).subspan(start, len));
    for (std::size_t i = 0; i < outcomes.size(); ++i) {
      const auto& o = outcomes[i];
      const auto& rec = todo[start + i];
      switch (o.status) {
        case ScoreOutcome::Status::kScored: {
          Annotation ann = o.call->annotation;
          if (a.auto_accept) {
            ann.review_state = ReviewState::kAccepted;
            ann.reviewer = "auto";
          }
          store.append(ann);
          ++scored;
          break;
        }
        case ScoreOutcome::Status::kUnparseable:
          ++unparseable;
          unparseable_log += ojson{{"pair_id", rec.id}, {"error", o.error}, {"raw", o.raw}}.dump() + "\n";
          break;
        case ScoreOutcome::Status::kFailed:
          ++failed;
          err << "pair " << rec.id << ": " << o.error << "\n";
          break;
      }
    }
  }
  if (!unparseable_log.empty()) write_file_atomic(out_dir / "unparseable.jsonl", unparseable_log);

  ojson summary{{"pairs", manifest.size()},
                {"already_annotated", manifest.size() - todo.size()},
                {"scored", scored},
                {"failed", failed},
                {"unparseable", unparseable},
                {"cache_hits", client.cache_hits()},
                {"network_requests", client.network_requests()},
                {"retries", client.retries()},
                {"journal", journal.string()}};
  print_summary(out, g, "annotate", summary);
  if (failed == 0 && unparseable == 0) return kOk;
  if (scored == 0 && unparseable == 0) return kEndpointFailure;
  return kPartialFailure;
}

// ---- filter -----------------------------------------------------------------

struct FilterArgs {
  ManifestInput manifest;
  std::string journal;
  int theta = kDefaultThreshold;
  std::string exclude;
  std::string buckets;
};

int cmd_filter(const GlobalOptions& g, const FilterArgs& a, std::ostream& out, std::ostream& err) {
  validate_threshold(a.theta);
  std::optional<BucketSpec> bucket_spec;
  if (!a.buckets.empty()) bucket_spec = BucketSpec::parse(a.buckets);
  Manifest manifest = a.manifest.load();
  std::size_t excluded = 0;
  if (!a.exclude.empty()) {
    const Manifest ex = read_manifest_file(a.exclude);
    std::unordered_set<std::string> ids;
    for (const auto& r : ex.records) ids.insert(r.id);
    const std::size_t before = manifest.size();
    manifest = dedupe(manifest, ids);
    excluded = before - manifest.size();
  }
  AnnotationStore::Options so;
  so.read_only = true;
  const AnnotationStore store = AnnotationStore::open(a.journal, so);
  ScoreTable scores;
  try {
    scores = effective_scores(manifest, store);
  } catch (const FilterError& e) {
    err << e.what() << list_ids(e.ids()) << "\n";
    return kConfigError;
  }
  const fs::path dir = g.out_dir;
  const std::string ts = g.now();
  const Splits splits = build_splits(manifest, scores, a.theta, g.seed, ts);
  write_split(dir, splits.full, manifest);
  write_split(dir, splits.filtered, manifest);
  write_split(dir, splits.random, manifest);
  ojson summary{{"full", splits.full.size()},
                {"filtered", splits.filtered.size()},
                {"random", splits.random.size()},
                {"threshold", a.theta},
                {"seed", g.seed},
                {"excluded_overlap", excluded}};
  if (bucket_spec) {
    const std::string digest = manifest_digest(manifest);
    ojson counts = ojson::object();
    for (const auto& b : bucketize(scores, *bucket_spec)) {
      write_split(dir, bucket_split(b, digest, ts), manifest);
      counts[b.range.label()] = b.pair_ids.size();
    }
    summary["buckets"] = counts;
  }
  print_summary(out, g, "filter", summary);
  return kOk;
}

// ---- stats ------------------------------------------------------------------

struct StatsArgs {
  std::string splits_dir;
  std::string embeddings;
  std::string embedder = "auto";
  std::string embed_url;
  std::string embed_auth_env;
  std::string journal;
  std::string logprobs;
  std::string verdicts;
  bool welch = false;
  bool allow_missing = false;
};

std::map<std::string, std::vector<double>> load_logprobs(const fs::path& path) {
  std::map<std::string, std::vector<double>> out;
  std::ifstream in(path);
  if (!in) throw UsageError("cannot open " + path.string());
  std::string line;
  std::size_t line_no = 0;
  std::vector<std::string> problems;
  while (std::getline(in, line)) {
    ++line_no;
    if (trim(line).empty()) continue;
    const auto j = nlohmann::json::parse(line, nullptr, false);
    if (j.is_discarded() || !j.is_object() || !j.contains("pair_id") || !j.contains("token_logprobs") ||
        !j["token_logprobs"].is_array()) {
      problems.push_back("line " + std::to_string(line_no) + ": expected {pair_id, token_logprobs}");
      continue;
    }
    std::vector<double> lps;
    for (const auto& v : j["token_logprobs"]) lps.push_back(v.get<double>());
    out[j["pair_id"].get<std::string>()] = std::move(lps);
  }
  if (!problems.empty()) throw UsageError("bad logprob rows:" + list_ids(problems));
  return out;
}

struct VerdictRow {
  std::string item_id;
  stats::Judgment judgment;
  PresentationOrder order;
};

std::vector<VerdictRow> load_verdicts(const fs::path& path) {
  std::vector<VerdictRow> out;
  std::ifstream in(path);
  if (!in) throw UsageError("cannot open " + path.string());
  std::string line;
  std::size_t line_no = 0;
  std::vector<std::string> problems;
  while (std::getline(in, line)) {
    ++line_no;
    if (trim(line).empty()) continue;
    const auto j = nlohmann::json::parse(line, nullptr, false);
    const auto where = "line " + std::to_string(line_no);
    if (j.is_discarded() || !j.is_object() || !j.contains("verdict") || !j["verdict"].is_string()) {
      problems.push_back(where + ": expected {item_id, verdict, presentation_order}");
      continue;
    }
    const auto order = presentation_order_from_string(j.value("presentation_order", "AB"));
    if (!order) {
      problems.push_back(where + ": presentation_order must be AB or BA");
      continue;
    }
    const std::string v = j["verdict"].get<std::string>();
    std::optional<stats::Judgment> judgment = judgment_from_string(v);
    if (!judgment) {
      // slot letters are mapped through the presentation order
      if (v == "A") judgment = judgment_from_verdict(VerdictLetter::kA, *order);
      if (v == "B") judgment = judgment_from_verdict(VerdictLetter::kB, *order);
    }
    if (!judgment) {
      problems.push_back(where + ": unknown verdict '" + v + "'");
      continue;
    }
    out.push_back({j.value("item_id", ""), *judgment, *order});
  }
  if (!problems.empty()) throw UsageError("bad verdict rows:" + list_ids(problems));
  return out;
}

PreferenceSection preference_section(const std::vector<VerdictRow>& rows) {
  std::vector<stats::Judgment> js;
  PreferenceSection p;
  for (const auto& r : rows) {
    js.push_back(r.judgment);
    if (r.judgment == stats::Judgment::kTie) continue;
    const bool filtered_won = r.judgment == stats::Judgment::kFilteredWins;
    const bool slot_a = filtered_won == (r.order == PresentationOrder::kAB);
    ++(slot_a ? p.slot_a_wins : p.slot_b_wins);
  }
  p.result = stats::preference_rate(js);
  p.raw_rate = static_cast<double>(p.slot_a_wins) / static_cast<double>(p.result.total);
  return p;
}

// "1-3" from the provenance, falling back to the split name "bucket:1-3".
std::string bucket_label(const LoadedSplit& s) {
  if (s.split.provenance.bucket) return *s.split.provenance.bucket;
  return s.split.name.substr(s.split.name.find_first_of("_:") + 1);
}

int cmd_stats(const GlobalOptions& g, const StatsArgs& a, std::ostream& out, std::ostream& err) {
  StatsReport report;
  std::vector<LoadedSplit> splits;
  std::vector<LoadedSplit> buckets;
  if (!a.splits_dir.empty()) {
    const fs::path dir = a.splits_dir;
    if (!fs::is_directory(dir)) throw UsageError("splits dir not found: " + dir.string());
    for (const char* name : {"full", "random", "filtered"}) {
      const auto p = dir / (std::string(name) + ".tsv");
      if (fs::exists(p)) splits.push_back(read_split(p));
    }
    for (const auto& entry : fs::directory_iterator(dir)) {
      const auto fname = entry.path().filename().string();
      if (fname.starts_with("bucket_") && entry.path().extension() == ".tsv") buckets.push_back(read_split(entry.path()));
    }
    auto lo_of = [](const LoadedSplit& s) { return std::atoi(bucket_label(s).c_str()); };
    std::sort(buckets.begin(), buckets.end(), [&](const auto& x, const auto& y) { return lo_of(x) < lo_of(y); });
  }

  std::string embedder_kind = a.embedder;
  if (embedder_kind == "auto") embedder_kind = a.embeddings.empty() ? "none" : "file";
  std::unique_ptr<Embedder> embedder;
  if (embedder_kind == "file") {
    if (a.embeddings.empty()) throw UsageError("--embedder file needs --embeddings");
    embedder = std::make_unique<FileEmbedder>(FileEmbedder::load(a.embeddings));
  } else if (embedder_kind == "mock") {
    std::shared_ptr<AnnotationStore> store;
    if (!a.journal.empty()) {
      AnnotationStore::Options so;
      so.read_only = true;
      store = std::make_shared<AnnotationStore>(AnnotationStore::open(a.journal, so));
    }
    embedder = std::make_unique<MockEmbedder>([store](const PairRecord& rec) {
      if (!store) return mock_score(rec);
      const auto ann = store->lookup(rec.id);
      if (!ann) throw EmbeddingError("no annotation for pair " + rec.id);
      return ann->effective_score();
    });
  } else if (embedder_kind == "endpoint") {
    EndpointConfig c;
    c.adapter = AdapterKind::kNative;
    c.base_url = a.embed_url;
    c.auth_token_env_name = a.embed_auth_env;
    embedder = std::make_unique<EndpointEmbedder>(c);
  }

  std::vector<std::string> problems;
  std::map<std::string, AlignmentResult> alignment;
  std::string values_log;
  if (embedder) {
    for (const auto& s : splits) {
      auto r = mean_alignment(s.records.records, *embedder);
      for (const auto& ex : r.excluded) problems.push_back(s.split.name + "/" + ex.pair_id + ": " + ex.reason);
      for (const auto& v : r.values) {
        char buf[40];
        std::snprintf(buf, sizeof buf, "%.17g", v.value);
        values_log += "{\"split\":\"" + s.split.name + "\",\"pair_id\":\"" + v.pair_id + "\",\"cosine\":" + buf + "}\n";
      }
      report.alignment.push_back({s.split.name, s.records.size(), r.values.size(), r.mean});
      alignment.emplace(s.split.name, std::move(r));
    }
    if (!buckets.empty()) {
      for (const auto& b : buckets) {
        BucketRow row;
        const std::string label = bucket_label(b);
        const auto dash = label.find('-');
        row.range.lo = std::atoi(label.substr(0, dash).c_str());
        row.range.hi = dash == std::string::npos ? row.range.lo : std::atoi(label.substr(dash + 1).c_str());
        row.n = b.records.size();
        if (row.n) {
          const auto r = mean_alignment(b.records.records, *embedder);
          for (const auto& ex : r.excluded) problems.push_back(b.split.name + "/" + ex.pair_id + ": " + ex.reason);
          row.mean_alignment = r.mean;
          row.excluded = r.excluded.size();
        }
        report.buckets.push_back(row);
      }
    }
  }

  if (alignment.contains("filtered") && alignment.contains("random")) {
    const auto fv = alignment.at("filtered").raw_values();
    const auto rv = alignment.at("random").raw_values();
    try {
      SignificanceSection sig;
      sig.student = stats::students_t_two_sample(fv, rv);
      if (a.welch) sig.welch = stats::welch_t_two_sample(fv, rv);
      report.significance = sig;
      report.metadata["p-value"] = "one-sided, H1: mean(filtered) > mean(random); two-sided also listed";
    } catch (const stats::StatsError& e) {
      report.metadata["significance"] = std::string("not computed: ") + e.what();
    }
  }

  if (!a.logprobs.empty()) {
    const auto lps = load_logprobs(a.logprobs);
    auto add_row = [&](const std::string& name, const std::vector<std::string>& ids) {
      std::vector<std::vector<double>> items;
      for (const auto& id : ids) {
        const auto it = lps.find(id);
        if (it == lps.end()) {
          problems.push_back(name + "/" + id + ": no token logprobs");
          continue;
        }
        items.push_back(it->second);
      }
      if (!items.empty()) report.perplexity.push_back({name, stats::corpus_perplexity(items)});
    };
    if (splits.empty()) {
      std::vector<std::string> ids;
      for (const auto& [id, v] : lps) ids.push_back(id);
      add_row("all", ids);
    } else {
      for (const auto& s : splits) add_row(s.split.name, s.split.pair_ids);
    }
    report.metadata["perplexity"] =
        "token-weighted corpus perplexity exp(-sum logprob / tokens); mean per-caption perplexity shown for comparison";
  }

  if (!a.verdicts.empty()) {
    const auto rows = load_verdicts(a.verdicts);
    if (rows.empty()) throw UsageError("verdicts file has no rows");
    report.preference = preference_section(rows);
    report.metadata["preference"] = "ties count toward the total; Wilson score interval with z = 1.96";
  }

  if (!problems.empty()) {
    err << problems.size() << " item(s) could not be evaluated:" << list_ids(problems, 50) << "\n";
    if (!a.allow_missing) return kConfigError;
  }

  const fs::path dir = g.out_dir;
  const std::string md = render_markdown(report);
  const std::string js = render_json(report).dump(2) + "\n";
  write_file_atomic(dir / "report.md", md);
  write_file_atomic(dir / "report.json", js);
  if (!values_log.empty()) write_file_atomic(dir / "alignment_values.jsonl", values_log);
  out << (g.json() ? js : md);
  return kOk;
}

// ---- judge ------------------------------------------------------------------

struct JudgeArgs {
  std::string pairs;
  std::string responses;
  EndpointFlags endpoint;
};

struct JudgeItem {
  std::string item_id;
  std::string reference;
  std::string filtered;
  std::string full;
};

std::vector<JudgeItem> load_judge_pairs(const fs::path& path) {
  std::vector<JudgeItem> out;
  std::ifstream in(path);
  if (!in) throw UsageError("cannot open " + path.string());
  std::string line;
  std::size_t line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (trim(line).empty()) continue;
    const auto j = nlohmann::json::parse(line, nullptr, false);
    try {
      if (j.is_discarded()) throw std::runtime_error("not JSON");
      out.push_back({j.at("item_id").get<std::string>(), j.at("reference").get<std::string>(),
                     j.at("filtered").get<std::string>(), j.at("full").get<std::string>()});
    } catch (const std::exception& e) {
      throw UsageError(path.string() + " line " + std::to_string(line_no) +
                       ": expected {item_id, reference, filtered, full}");
    }
  }
  return out;
}

int cmd_judge_build(const GlobalOptions& g, const JudgeArgs& a, std::ostream& out) {
  std::string lines;
  std::size_t n = 0;
  for (const auto& item : load_judge_pairs(a.pairs)) {
    const auto p = build_judge_prompt(item.item_id, item.reference, item.filtered, item.full, g.seed);
    lines += ojson{{"item_id", p.item_id}, {"presentation_order", to_string(p.order)}, {"prompt", p.text}}.dump() + "\n";
    ++n;
  }
  const fs::path path = fs::path(g.out_dir) / "judge_prompts.jsonl";
  write_file_atomic(path, lines);
  print_summary(out, g, "judge build", {{"items", n}, {"prompts", path.string()}, {"seed", g.seed}});
  return kOk;
}

int cmd_judge_parse(const GlobalOptions& g, const JudgeArgs& a, std::ostream& out, std::ostream& err) {
  std::ifstream in(a.responses);
  if (!in) throw UsageError("cannot open " + a.responses);
  std::string line;
  std::string verdicts;
  std::size_t parsed = 0;
  std::size_t unparseable = 0;
  while (std::getline(in, line)) {
    if (trim(line).empty()) continue;
    const auto j = nlohmann::json::parse(line, nullptr, false);
    if (j.is_discarded() || !j.contains("response") || !j.contains("presentation_order")) {
      throw UsageError("response rows need {item_id, presentation_order, response}");
    }
    const auto order = presentation_order_from_string(j["presentation_order"].get<std::string>());
    if (!order) throw UsageError("presentation_order must be AB or BA");
    const std::string id = j.value("item_id", "");
    try {
      const auto judgment = parse_judge_output(j["response"].get<std::string>(), *order);
      verdicts += ojson{{"item_id", id}, {"verdict", to_string(judgment)}, {"presentation_order", to_string(*order)}}
                      .dump() +
                  "\n";
      ++parsed;
    } catch (const ScoreParseError&) {
      err << "item " << id << ": no verdict line\n";
      ++unparseable;
    }
  }
  const fs::path path = fs::path(g.out_dir) / "verdicts.jsonl";
  write_file_atomic(path, verdicts);
  print_summary(out, g, "judge parse", {{"parsed", parsed}, {"unparseable", unparseable}, {"verdicts", path.string()}});
  return unparseable ? kPartialFailure : kOk;
}

int cmd_judge_run(const GlobalOptions& g, const JudgeArgs& a, std::ostream& out, std::ostream& err) {
  const auto items = load_judge_pairs(a.pairs);
  ScoringClient client(a.endpoint.resolve(), Rubric::standard());
  std::vector<JudgePrompt> prompts;
  for (const auto& item : items) {
    prompts.push_back(build_judge_prompt(item.item_id, item.reference, item.filtered, item.full, g.seed));
  }
  std::vector<std::optional<std::string>> replies(prompts.size());
  std::vector<std::string> errors(prompts.size());
  parallel_for(prompts.size(), client.config().max_parallel, [&](std::size_t i) {
    try {
      replies[i] = client.complete_text(prompts[i].text);
    } catch (const std::exception& e) {
      errors[i] = e.what();
    }
  });
  std::string responses;
  std::string verdicts;
  std::size_t parsed = 0;
  std::size_t failed = 0;
  std::size_t unparseable = 0;
  for (std::size_t i = 0; i < prompts.size(); ++i) {
    const auto& p = prompts[i];
    if (!replies[i]) {
      err << "item " << p.item_id << ": " << errors[i] << "\n";
      ++failed;
      continue;
    }
    responses += ojson{{"item_id", p.item_id}, {"presentation_order", to_string(p.order)}, {"response", *replies[i]}}
                     .dump() +
                 "\n";
    try {
      const auto judgment = parse_judge_output(*replies[i], p.order);
      verdicts += ojson{{"item_id", p.item_id}, {"verdict", to_string(judgment)}, {"presentation_order", to_string(p.order)}}
                      .dump() +
                  "\n";
      ++parsed;
    } catch (const ScoreParseError&) {
      err << "item " << p.item_id << ": no verdict line\n";
      ++unparseable;
    }
  }
  const fs::path dir = g.out_dir;
  write_file_atomic(dir / "judge_responses.jsonl", responses);
  write_file_atomic(dir / "verdicts.jsonl", verdicts);
  print_summary(out, g, "judge run",
                {{"items", prompts.size()}, {"parsed", parsed}, {"unparseable", unparseable}, {"failed", failed}});
  if (failed == prompts.size() && failed > 0) return kEndpointFailure;
  return failed || unparseable ? kPartialFailure : kOk;
}

// ---- export-sft -------------------------------------------------------------

struct ExportArgs {
  ManifestInput manifest;
  std::string journal;
  std::string out;
  Hyperparams hp;
};

int cmd_export_sft(const GlobalOptions& g, const ExportArgs& a, std::ostream& out) {
  const Manifest manifest = a.manifest.load();
  AnnotationStore::Options so;
  so.read_only = true;
  const AnnotationStore store = AnnotationStore::open(a.journal, so);
  const fs::path path = a.out.empty() ? fs::path(g.out_dir) / "sft.jsonl" : fs::path(a.out);
  std::ostringstream buf;
  const auto summary = export_sft(store, manifest, buf, a.hp);
  write_file_atomic(path, buf.str());
  print_summary(out, g, "export-sft",
                {{"exported", summary.exported},
                 {"pending_excluded", summary.pending_excluded},
                 {"unannotated", summary.unannotated},
                 {"out", path.string()}});
  return kOk;
}

// ---- review-serve -----------------------------------------------------------

struct ServeArgs {
  std::string journal;
  ManifestInput manifest;
  std::string static_dir;
  std::string host = "127.0.0.1";
  int port = 8080;
};

int cmd_review_serve(const GlobalOptions& g, const ServeArgs& a, std::ostream& out, std::ostream& err) {
  std::optional<Manifest> manifest;
  if (!a.manifest.path.empty()) manifest = a.manifest.load();
  AnnotationStore::Options so;
  so.clock = [&g] { return g.now(); };
  AnnotationStore store = AnnotationStore::open(a.journal, so);
  if (store.dropped_tail_lines()) err << "dropped a torn final journal line\n";

  httplib::Server server;
  // httplib defaults to SO_REUSEPORT, which would let a second server share the port silently
  server.set_socket_options([](socket_t sock) {
    int yes = 1;
    ::setsockopt(sock, SOL_SOCKET, SO_REUSEADDR, &yes, sizeof(yes));
  });
  ReviewService service(store, manifest ? &*manifest : nullptr);
  std::optional<fs::path> static_dir;
  if (!a.static_dir.empty()) static_dir = a.static_dir;
  service.mount(server, static_dir);

  int port = a.port;
  if (port == 0) {
    port = server.bind_to_any_port(a.host);
    if (port < 0) port = 0;
  } else if (!server.bind_to_port(a.host, port)) {
    port = 0;
  }
  if (port <= 0) {
    err << "cannot bind " << a.host << ":" << a.port << "\n";
    return kConfigError;
  }
  g_shutdown.store(false);
  auto prev_int = std::signal(SIGINT, on_shutdown_signal);
  auto prev_term = std::signal(SIGTERM, on_shutdown_signal);
  out << "review service listening on http://" << a.host << ":" << port << "\n" << std::flush;
  std::jthread watcher([&server](std::stop_token st) {
    while (!st.stop_requested() && !g_shutdown.load()) std::this_thread::sleep_for(std::chrono::milliseconds(50));
    server.stop();
  });
  server.listen_after_bind();
  watcher.request_stop();
  watcher.join();
  std::signal(SIGINT, prev_int);
  std::signal(SIGTERM, prev_term);
  const auto c = store.counts();
  out << "review service stopped; pending " << c.pending << ", accepted " << c.accepted << ", overridden "
      << c.overridden << "\n";
  return kOk;
}

void write_run_json(const CLI::App& app, const GlobalOptions& g) {
  const fs::path dir = g.out_dir;
  fs::create_directories(dir);
  write_file_atomic(dir / "run.json", app.config_to_str(true, false));
}

}  // namespace

void request_shutdown() noexcept { g_shutdown.store(true); }

int run(const std::vector<std::string>& args, std::ostream& out, std::ostream& err) {
  CLI::App app{"corpus-sieve: score, filter and evaluate image-caption corpora"};
  app.option_defaults()->always_capture_default();
  app.config_formatter(std::make_shared<JsonConfig>());
  app.set_config("--config", "", "JSON config file (e.g. a previous run.json)");
  app.require_subcommand(1);

  GlobalOptions g;
  app.add_option("--seed", g.seed, "Seed for sampling and judge ordering");
  app.add_option("--out-dir", g.out_dir, "Output directory");
  app.add_option("--format", g.format, "Console output format")->check(CLI::IsMember({"json", "markdown"}));
  app.add_option("--timestamp", g.timestamp, "Pin all timestamps (reproducible runs)");

  AnnotateArgs annotate;
  auto* annotate_cmd = app.add_subcommand("annotate", "Score manifest pairs through a scorer endpoint");
  add_manifest_options(annotate_cmd, annotate.manifest, true);
  annotate.endpoint.add(annotate_cmd);
  annotate_cmd->add_option("--rubric", annotate.rubric, "Rubric JSON (default: built-in)");
  annotate_cmd->add_option("--journal", annotate.journal, "Annotation journal (default: <out-dir>/annotations.jsonl)");
  annotate_cmd->add_flag("--auto-accept", annotate.auto_accept, "Store scores as accepted (no human review)");
  annotate_cmd->add_option("--sample-per-source", annotate.sample_per_source,
                           "Seeded uniform sample of N pairs per source before scoring");

  FilterArgs filter;
  auto* filter_cmd = app.add_subcommand("filter", "Build full / filtered / random splits");
  add_manifest_options(filter_cmd, filter.manifest, true);
  filter_cmd->add_option("--journal", filter.journal, "Annotation journal")->required();
  filter_cmd->add_option("--theta", filter.theta, "Keep pairs with score >= theta")->check(CLI::Range(1, 10));
  filter_cmd->add_option("--exclude", filter.exclude, "Manifest whose ids are removed first (e.g. training pairs)");
  filter_cmd->add_option("--buckets", filter.buckets, "Also write score buckets, e.g. 1-3,4-6,7-8,9-10");

  StatsArgs st;
  auto* stats_cmd = app.add_subcommand("stats", "Alignment, significance, perplexity and preference report");
  stats_cmd->add_option("--splits-dir", st.splits_dir, "Directory written by `filter`");
  stats_cmd->add_option("--embeddings", st.embeddings, "Embedding JSONL");
  stats_cmd->add_option("--embedder", st.embedder, "Embedding source")
      ->check(CLI::IsMember({"auto", "file", "mock", "endpoint", "none"}));
  stats_cmd->add_option("--embed-url", st.embed_url, "Embedder endpoint base URL");
  stats_cmd->add_option("--embed-auth-env", st.embed_auth_env, "Environment variable with the embedder token");
  stats_cmd->add_option("--journal", st.journal, "Journal supplying mock embedder quality");
  stats_cmd->add_option("--logprobs", st.logprobs, "Token logprob JSONL");
  stats_cmd->add_option("--verdicts", st.verdicts, "Judge verdict JSONL");
  stats_cmd->add_flag("--welch", st.welch, "Also report Welch's t-test");
  stats_cmd->add_flag("--allow-missing", st.allow_missing, "Report on available items instead of failing");

  JudgeArgs judge;
  auto* judge_cmd = app.add_subcommand("judge", "Pairwise caption judging");
  judge_cmd->require_subcommand(1);
  auto* judge_build = judge_cmd->add_subcommand("build", "Render judge prompts with seeded order");
  judge_build->add_option("--pairs", judge.pairs, "JSONL {item_id, reference, filtered, full}")->required();
  auto* judge_parse = judge_cmd->add_subcommand("parse", "Parse judge replies into verdicts");
  judge_parse->add_option("--responses", judge.responses, "JSONL {item_id, presentation_order, response}")->required();
  auto* judge_run = judge_cmd->add_subcommand("run", "Build, send and parse judge prompts");
  judge_run->add_option("--pairs", judge.pairs, "JSONL {item_id, reference, filtered, full}")->required();
  judge.endpoint.add(judge_run);

  ServeArgs serve;
  auto* serve_cmd = app.add_subcommand("review-serve", "Serve the review API and UI bundle");
  serve_cmd->add_option("--journal", serve.journal, "Annotation journal")->required();
  add_manifest_options(serve_cmd, serve.manifest, false);
  serve_cmd->add_option("--static-dir", serve.static_dir, "Directory with the review UI bundle");
  serve_cmd->add_option("--host", serve.host, "Bind address");
  serve_cmd->add_option("--port", serve.port, "Port (0 picks a free one)")->check(CLI::Range(0, 65535));

  ExportArgs exp;
  auto* export_cmd = app.add_subcommand("export-sft", "Export reviewed annotations as SFT JSONL");
  add_manifest_options(export_cmd, exp.manifest, true);
  export_cmd->add_option("--journal", exp.journal, "Annotation journal")->required();
  export_cmd->add_option("--out", exp.out, "Output path (default: <out-dir>/sft.jsonl)");
  export_cmd->add_option("--lr", exp.hp.learning_rate, "Learning rate hint");
  export_cmd->add_option("--batch-size", exp.hp.batch_size, "Batch size hint");
  export_cmd->add_option("--epochs", exp.hp.epochs, "Epoch hint");
  export_cmd->add_option("--scheduler", exp.hp.scheduler, "Scheduler hint");

  for (auto* sub : {annotate_cmd, filter_cmd, stats_cmd, judge_cmd, judge_build, judge_parse, judge_run, serve_cmd,
                    export_cmd}) {
    sub->configurable();
  }

  try {
    std::vector<std::string> reversed(args.rbegin(), args.rend());
    app.parse(reversed);
  } catch (const CLI::CallForHelp& e) {
    out << app.help();
    return kOk;
  } catch (const CLI::CallForAllHelp& e) {
    out << app.help("", CLI::AppFormatMode::All);
    return kOk;
  } catch (const CLI::ParseError& e) {
    err << e.what() << "\n";
    return kConfigError;
  }

  if (app.get_subcommands().empty() || (judge_cmd->parsed() && judge_cmd->get_subcommands().empty())) {
    err << "no subcommand\n" << app.help();
    return kConfigError;
  }

  try {
    write_run_json(app, g);
    if (annotate_cmd->parsed()) return cmd_annotate(g, annotate, out, err);
    if (filter_cmd->parsed()) return cmd_filter(g, filter, out, err);
    if (stats_cmd->parsed()) return cmd_stats(g, st, out, err);
    if (judge_build->parsed()) return cmd_judge_build(g, judge, out);
    if (judge_parse->parsed()) return cmd_judge_parse(g, judge, out, err);
    if (judge_run->parsed()) return cmd_judge_run(g, judge, out, err);
    if (serve_cmd->parsed()) return cmd_review_serve(g, serve, out, err);
    if (export_cmd->parsed()) return cmd_export_sft(g, exp, out);
    err << "no subcommand\n";
    return kConfigError;
  } catch (const EndpointError& e) {
    err << "endpoint failure: " << e.what() << "\n";
    return kEndpointFailure;
  } catch (const ConfigError& e) {
    err << "config error: " << e.what() << "\n";
    return kConfigError;
  } catch (const UsageError& e) {
    err << e.what() << "\n";
    return kConfigError;
  } catch (const TemplateError& e) {
    err << "rubric error: " << e.what() << "\n";
    return kConfigError;
  } catch (const ManifestError& e) {
    err << "manifest error: " << e.what() << "\n";
    return kConfigError;
  } catch (const FilterError& e) {
    err << e.what() << list_ids(e.ids()) << "\n";
    return kConfigError;
  } catch (const EmbeddingError& e) {
    err << "embedding error: " << e.what() << "\n";
    return kConfigError;
  } catch (const AnnotationError& e) {
    err << e.what() << "\n";
    return e.kind() == AnnotationError::Kind::kEmptyExport ? kPartialFailure : kConfigError;
  } catch (const std::exception& e) {
    err << "error: " << e.what() << "\n";
    return kInternalError;
  }
}

}  // namespace sieve::cli
