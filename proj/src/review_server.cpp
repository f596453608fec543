#include "sieve/review_server.hpp"

#include <charconv>

#include "httplib.h"

namespace sieve {

using ojson = nlohmann::ordered_json;

namespace {

void send_json(httplib::Response& res, int status, const ojson& body) {
  res.status = status;
  res.set_content(body.dump(), "application/json");
}

void send_error(httplib::Response& res, int status, std::string_view kind, std::string_view message) {
  send_json(res, status, {{"error", kind}, {"message", message}});
}

ojson pair_json(const PairRecord* rec) {
  if (!rec) return nullptr;
  ojson j{{"id", rec->id}, {"image_ref", rec->image_ref}, {"caption", rec->caption}};
  if (!rec->source.empty()) j["source"] = rec->source;
  return j;
}

}  // namespace

ReviewService::ReviewService(AnnotationStore& store, const Manifest* manifest) : store_(store), manifest_(manifest) {
  if (manifest_) {
    for (const auto& r : manifest_->records) pairs_.emplace(r.id, &r);
  }
}

void ReviewService::mount(httplib::Server& server, const std::optional<std::filesystem::path>& static_dir) {
  auto lookup_pair = [this](const std::string& id) -> const PairRecord* {
    const auto it = pairs_.find(id);
    return it == pairs_.end() ? nullptr : it->second;
  };

  server.Get("/api/queue", [this, lookup_pair](const httplib::Request& req, httplib::Response& res) {
    std::optional<ReviewState> state = ReviewState::kPending;
    if (req.has_param("state")) {
      const auto s = req.get_param_value("state");
      if (s == "all") {
        state.reset();
      } else {
        state = review_state_from_string(s);
        if (!state) return send_error(res, 400, "BadRequest", "unknown state " + s);
      }
    }
    std::size_t limit = 50;
    if (req.has_param("limit")) {
      const auto s = req.get_param_value("limit");
      const auto [ptr, ec] = std::from_chars(s.data(), s.data() + s.size(), limit);
      if (ec != std::errc{} || ptr != s.data() + s.size()) return send_error(res, 400, "BadRequest", "bad limit");
    }
    ojson items = ojson::array();
    for (const auto& a : store_.latest(state, limit)) {
      items.push_back({{"pair", pair_json(lookup_pair(a.pair_id))}, {"annotation", a.to_json()}});
    }
    send_json(res, 200, items);
  });

  server.Get(R"(/api/pairs/([^/]+))", [this, lookup_pair](const httplib::Request& req, httplib::Response& res) {
    const std::string id = req.matches[1];
    const auto a = store_.lookup(id);
    if (!a) return send_error(res, 404, "NotFound", "no annotation for " + id);
    send_json(res, 200, {{"pair", pair_json(lookup_pair(id))}, {"annotation", a->to_json()}});
  });

  server.Post(R"(/api/pairs/([^/]+)/review)", [this](const httplib::Request& req, httplib::Response& res) {
    const std::string id = req.matches[1];
    const auto body = nlohmann::json::parse(req.body, nullptr, false);
    if (body.is_discarded() || !body.is_object()) return send_error(res, 400, "BadRequest", "body must be a JSON object");
    const std::string decision = body.value("decision", "");
    const std::string reviewer = body.contains("reviewer") && body["reviewer"].is_string()
                                     ? body["reviewer"].get<std::string>()
                                     : std::string("anonymous");
    ReviewDecision d;
    if (decision == "accept") {
      d = ReviewDecision::accept();
    } else if (decision == "override") {
      if (!body.contains("score") || !body["score"].is_number_integer()) {
        return send_error(res, 400, "BadRequest", "override needs an integer score");
      }
      const std::string rationale =
          body.contains("rationale") && body["rationale"].is_string() ? body["rationale"].get<std::string>() : "";
      d = ReviewDecision::override_with(body["score"].get<int>(), rationale);
    } else {
      return send_error(res, 400, "BadRequest", "decision must be 'accept' or 'override'");
    }
    try {
      const auto a = store_.review(id, d, reviewer.starts_with("human:") ? reviewer : "human:" + reviewer);
      send_json(res, 200, {{"annotation", a.to_json()}});
    } catch (const AnnotationError& e) {
      switch (e.kind()) {
        case AnnotationError::Kind::kNotFound: return send_error(res, 404, "NotFound", e.what());
        case AnnotationError::Kind::kAlreadyReviewed: return send_error(res, 409, "AlreadyReviewed", e.what());
        case AnnotationError::Kind::kInvalid: return send_error(res, 400, "Invalid", e.what());
        default: return send_error(res, 500, "Internal", e.what());
      }
    }
  });

  server.Get("/api/stats", [this](const httplib::Request&, httplib::Response& res) {
    const auto c = store_.counts();
    send_json(res, 200,
              {{"pending", c.pending}, {"accepted", c.accepted}, {"overridden", c.overridden}, {"total", c.total()}});
  });

  if (static_dir) server.set_mount_point("/", static_dir->string());
}

}  // namespace sieve
