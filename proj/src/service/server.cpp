#include "sevbench/service/server.hpp"

#include <httplib.h>

#include "sevbench/error.hpp"
#include "sevbench/interaction_io.hpp"

namespace sevbench::service {

using nlohmann::json;

namespace {

json error_body(const std::string& kind, const std::string& message) {
  return {{"error", {{"kind", kind}, {"message", message}}}};
}

void reply(httplib::Response& res, int status, const json& body) {
  res.status = status;
  res.set_content(body.dump(), "application/json");
}

json parse_body(const httplib::Request& req) {
  try {
    auto j = json::parse(req.body);
    if (!j.is_object()) throw ParseError("", "request body must be a JSON object");
    return j;
  } catch (const json::parse_error& e) {
    throw ParseError("", std::string("malformed JSON body: ") + e.what());
  }
}

std::string string_field(const json& body, const char* field) {
  auto it = body.find(field);
  if (it == body.end() || !it->is_string()) {
    throw ParseError(field, std::string("missing or non-string field '") + field + "'");
  }
  return it->get<std::string>();
}

std::string identity(const httplib::Request& req, const json& body, const char* field) {
  if (body.contains(field)) return string_field(body, field);
  if (req.has_header("X-Annotator-Id")) return req.get_header_value("X-Annotator-Id");
  throw ParseError(field, std::string("missing field '") + field + "'");
}

severity::Judgments judgments_field(const json& body) {
  auto it = body.find("judgments");
  if (it == body.end() || !it->is_object()) {
    throw ParseError("judgments", "judgments must be an object of node id -> option");
  }
  severity::Judgments out;
  for (const auto& [node, option] : it->items()) {
    if (!option.is_string()) throw ParseError("judgments", "judgment for '" + node + "' must be a string");
    out.emplace(node, option.get<std::string>());
  }
  return out;
}

bool flag_param(const httplib::Request& req, const char* name) {
  if (!req.has_param(name)) return false;
  const auto v = req.get_param_value(name);
  if (v == "true" || v == "1") return true;
  if (v == "false" || v == "0") return false;
  throw ParseError(name, std::string("query parameter '") + name + "' must be true or false");
}

json outcome_json(const SubmitOutcome& o) {
  return {{"derived_label", std::string(to_string(o.derived))},
          {"state", std::string(to_string(o.state))},
          {"final_label", o.final_label ? json(std::string(to_string(*o.final_label))) : json(nullptr)},
          {"escalation_task_id", o.escalation_task_id ? json(*o.escalation_task_id) : json(nullptr)}};
}

}  // namespace

int http_status(const std::string& kind) {
  if (kind == "parse" || kind == "precondition") return 400;
  if (kind == "forbidden") return 403;
  if (kind == "not_found") return 404;
  if (kind == "conflict" || kind == "lease_expired") return 409;
  if (kind == "missing_judgment" || kind == "invalid_judgment" || kind == "version_mismatch") return 422;
  return 500;
}

struct Server::Impl {
  Store& store;
  httplib::Server http;

  explicit Impl(Store& s) : store(s) {}

  /// Runs `fn`, mapping domain errors to JSON error responses.
  template <typename Fn>
  static auto guarded(Fn fn) {
    return [fn](const httplib::Request& req, httplib::Response& res) {
      try {
        fn(req, res);
      } catch (const ParseError& e) {
        json body = error_body(e.kind(), e.what());
        body["error"]["field"] = e.field();
        reply(res, 400, body);
      } catch (const Error& e) {
        reply(res, http_status(e.kind()), error_body(e.kind(), e.what()));
      } catch (const std::exception& e) {
        reply(res, 500, error_body("internal", e.what()));
      }
    };
  }

  void routes() {
    http.Post("/v1/annotators", guarded([this](const auto& req, auto& res) {
      const auto body = parse_body(req);
      const auto id = string_field(body, "annotator_id");
      const bool expert = body.value("is_expert", false);
      store.register_annotator(id, expert);
      reply(res, 201, {{"annotator_id", id}, {"is_expert", expert}});
    }));

    http.Post("/v1/interactions", guarded([this](const auto& req, auto& res) {
      json body;
      try {
        body = json::parse(req.body);
      } catch (const json::parse_error& e) {
        throw ParseError("", std::string("malformed JSON body: ") + e.what());
      }
      std::size_t added = 0;
      auto add = [&](const json& j) {
        store.add_interaction(parse_interaction(j.dump()));
        ++added;
      };
      if (body.is_array()) {
        for (const auto& j : body) add(j);
      } else {
        add(body);
      }
      reply(res, 201, {{"added", added}});
    }));

    http.Get(R"(/v1/interactions/([^/]+))", guarded([this](const auto& req, auto& res) {
      const std::string id = req.matches[1];
      auto interaction = store.interaction(id);
      if (!interaction) throw Error("not_found", "unknown interaction '" + id + "'");
      reply(res, 200, json::parse(serialize_interaction(*interaction)));
    }));

    http.Post("/v1/tasks/enqueue", guarded([this](const auto& req, auto& res) {
      const auto body = parse_body(req);
      if (auto it = body.find("interactions"); it != body.end()) {
        if (!it->is_array()) throw ParseError("interactions", "interactions must be an array");
        for (const auto& j : *it) store.add_interaction(parse_interaction(j.dump()));
      }
      if (!body.contains("coreset")) throw ParseError("coreset", "missing field 'coreset'");
      std::vector<std::string> ids;
      const auto result = coreset::from_json(body.at("coreset"), &ids);
      std::optional<std::size_t> per_item;
      if (auto it = body.find("annotators_per_item"); it != body.end()) {
        if (!it->is_number_integer()) {
          throw ParseError("annotators_per_item", "annotators_per_item must be an integer");
        }
        const auto n = it->template get<long long>();
        if (n < 1) throw precondition_error("annotators_per_item must be at least 1");
        per_item = static_cast<std::size_t>(n);
      }
      const auto created = store.enqueue(result, ids, per_item);
      reply(res, 200, {{"created", created}});
    }));

    http.Get("/v1/tasks/next", guarded([this](const auto& req, auto& res) {
      if (!req.has_param("annotator")) throw ParseError("annotator", "missing query parameter 'annotator'");
      const auto lease = store.lease_next(req.get_param_value("annotator"), flag_param(req, "expert"));
      if (!lease) {
        reply(res, 200, {{"task", nullptr}});
        return;
      }
      auto interaction = store.interaction(lease->interaction_id);
      reply(res, 200,
            {{"task", to_json(*lease)},
             {"interaction", json::parse(serialize_interaction(*interaction))}});
    }));

    http.Post(R"(/v1/tasks/([^/]+)/judgments)", guarded([this](const auto& req, auto& res) {
      const auto body = parse_body(req);
      const auto outcome =
          store.submit(req.matches[1], identity(req, body, "annotator_id"), judgments_field(body));
      reply(res, 200, outcome_json(outcome));
    }));

    http.Get(R"(/v1/tasks/([^/]+))", guarded([this](const auto& req, auto& res) {
      const std::string id = req.matches[1];
      auto task = store.task(id);
      if (!task) throw Error("not_found", "unknown task '" + id + "'");
      reply(res, 200, to_json(*task));
    }));

    http.Get("/v1/tree", guarded([this](const auto&, auto& res) {
      reply(res, 200, severity::to_json(store.tree()));
    }));

    http.Post("/v1/flags", guarded([this](const auto& req, auto& res) {
      const auto body = parse_body(req);
      auto cause = parse_root_cause(string_field(body, "root_cause"));
      if (!cause) throw ParseError("root_cause", "unknown root_cause");
      const auto flag = store.flag(identity(req, body, "reporter_id"),
                                   string_field(body, "interaction_id"), *cause,
                                   body.value("comment", std::string()));
      reply(res, 201, to_json(flag));
    }));

    http.Get("/v1/flags", guarded([this](const auto& req, auto& res) {
      const bool filter = req.has_param("confirmed");
      const bool want = filter && flag_param(req, "confirmed");
      json out = json::array();
      for (const auto& f : store.flags()) {
        if (!filter || f.confirmed == want) out.push_back(to_json(f));
      }
      reply(res, 200, {{"flags", std::move(out)}});
    }));

    http.Post(R"(/v1/flags/([^/]+)/confirm)", guarded([this](const auto& req, auto& res) {
      const auto body = parse_body(req);
      const auto flag =
          store.confirm_flag(req.matches[1], identity(req, body, "expert_id"), judgments_field(body));
      reply(res, 200, to_json(flag));
    }));

    http.Get("/v1/leaderboard", guarded([this](const auto& req, auto& res) {
      const std::string window = req.has_param("window") ? req.get_param_value("window") : "30d";
      json entries = json::array();
      std::size_t rank = 0;
      for (const auto& e : store.leaderboard(parse_duration(window))) {
        entries.push_back({{"rank", ++rank},
                           {"reporter_id", e.reporter_id},
                           {"confirmed_flags", e.confirmed},
                           {"reached_at", format_timestamp(e.reached_at)}});
      }
      reply(res, 200, {{"window", window}, {"entries", std::move(entries)}});
    }));

    http.Get("/v1/stats", guarded([this](const auto&, auto& res) {
      reply(res, 200, to_json(store.stats()));
    }));
  }
};

Server::Server(Store& store) : impl_(std::make_unique<Impl>(store)) { impl_->routes(); }

Server::~Server() { stop(); }

int Server::bind(const std::string& host, int port) {
  if (port == 0) return impl_->http.bind_to_any_port(host);
  return impl_->http.bind_to_port(host, port) ? port : -1;
}

bool Server::run() { return impl_->http.listen_after_bind(); }

void Server::stop() {
  if (impl_->http.is_running()) impl_->http.stop();
}

void Server::wait_until_ready() const { impl_->http.wait_until_ready(); }

}  // namespace sevbench::service
