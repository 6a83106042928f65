// SPDX-License-Identifier: Apache-2.0
#pragma once

// Agents backed by an HTTP endpoint. Inference only: remote models expose no
// log-probabilities, so their calls are recorded as non-policy steps.
//
// Wire format (POST <base_url>/v1/act):
//   request  {"role", "mode", "problem", "history": [{speaker, kind, text}], "scene_ref"}
//   response {"text"}

#include <atomic>
#include <chrono>
#include <optional>
#include <string>
#include <thread>
#include <vector>

#include "httplib.h"
#include "json.hpp"

#include "immo/agent.hpp"
#include "immo/errors.hpp"
#include "immo/monologue.hpp"

namespace immo {

inline constexpr int kMaxRemoteRetries = 5;

struct RemoteEndpointConfig {
  std::string base_url;  // scheme://host:port
  int timeout_ms = 5000;
  int max_retries = 2;
  Role role = Role::Observer;
  int backoff_ms = 50;  // first retry delay; doubles per retry
  std::string path = "/v1/act";

  void validate() const {
    if (base_url.empty()) throw InvalidArgument("remote endpoint needs a base_url");
    if (timeout_ms <= 0) throw InvalidArgument("timeout must be positive");
    if (max_retries < 0 || max_retries > kMaxRemoteRetries) throw InvalidArgument("max_retries must lie in [0, 5]");
    if (backoff_ms < 0) throw InvalidArgument("backoff must be non-negative");
  }
};

enum class RemoteMode { Caption, Answer, Query, Final };

inline std::string_view name(RemoteMode m) {
  switch (m) {
    case RemoteMode::Caption: return "caption";
    case RemoteMode::Answer: return "answer";
    case RemoteMode::Query: return "query";
    case RemoteMode::Final: return "final";
  }
  return {};
}

inline UtteranceKind kind_of(RemoteMode m) {
  switch (m) {
    case RemoteMode::Caption: return UtteranceKind::Caption;
    case RemoteMode::Answer: return UtteranceKind::Answer;
    case RemoteMode::Query: return UtteranceKind::Query;
    case RemoteMode::Final: return UtteranceKind::FinalAnswer;
  }
  return UtteranceKind::Caption;
}

struct RemoteRequest {
  Role role = Role::Observer;
  RemoteMode mode = RemoteMode::Caption;
  std::optional<std::string> problem;
  std::vector<Utterance> history;
  std::optional<std::string> scene_ref;
};

inline nlohmann::json to_json(const RemoteRequest& r) {
  nlohmann::json h = nlohmann::json::array();
  for (const auto& u : r.history) h.push_back({{"speaker", name(u.speaker)}, {"kind", name(u.kind)}, {"text", u.text}});
  return {{"role", name(r.role)},
          {"mode", name(r.mode)},
          {"problem", r.problem ? nlohmann::json(*r.problem) : nlohmann::json(nullptr)},
          {"history", h},
          {"scene_ref", r.scene_ref ? nlohmann::json(*r.scene_ref) : nlohmann::json(nullptr)}};
}

struct RemoteResult {
  Utterance utterance;
  int retries = 0;
};

namespace detail {

/// Maps a response body to an utterance; throws MalformedResponse.
inline Utterance parse_remote_body(const std::string& body, RemoteMode mode) {
  nlohmann::json j;
  try {
    j = nlohmann::json::parse(body);
  } catch (const nlohmann::json::exception& e) {
    throw MalformedResponse(std::string{"response is not JSON: "} + e.what());
  }
  if (!j.is_object() || !j.contains("text") || !j["text"].is_string())
    throw MalformedResponse("response lacks a string 'text' field");
  // Empty text is well-formed JSON but an invalid utterance: EmptyUtterance.
  return make_utterance(kind_of(mode), j["text"].get<std::string>());
}

}  // namespace detail

/// One request with transport retries. Malformed bodies are never retried.
inline RemoteResult remote_call(const RemoteEndpointConfig& cfg, const RemoteRequest& request) {
  cfg.validate();
  if (request.role != cfg.role) throw InvalidArgument("request role does not match the endpoint role");
  const std::string payload = to_json(request).dump();
  const auto timeout = std::chrono::milliseconds(cfg.timeout_ms);

  for (int attempt = 0;; ++attempt) {
    httplib::Client client(cfg.base_url);
    client.set_connection_timeout(timeout);
    client.set_read_timeout(timeout);
    client.set_write_timeout(timeout);

    const auto start = std::chrono::steady_clock::now();
    auto res = client.Post(cfg.path, payload, "application/json");
    const auto elapsed = std::chrono::steady_clock::now() - start;

    std::string failure;
    bool timed_out = false;
    if (!res) {
      timed_out = res.error() == httplib::Error::ConnectionTimeout ||
                  (res.error() == httplib::Error::Read && elapsed >= timeout);
      failure = httplib::to_string(res.error());
    } else if (res->status >= 500) {
      failure = "HTTP " + std::to_string(res->status);
    } else if (res->status != 200) {
      throw TransportError("HTTP " + std::to_string(res->status) + " from " + cfg.base_url);
    } else {
      return {detail::parse_remote_body(res->body, request.mode), attempt};
    }

    if (attempt >= cfg.max_retries) {
      const std::string msg = failure + " after " + std::to_string(attempt) + " retries";
      if (timed_out) throw RemoteTimeout(msg);
      throw TransportError(msg);
    }
    std::this_thread::sleep_for(std::chrono::milliseconds(static_cast<long long>(cfg.backoff_ms) << attempt));
  }
}

/// Remote observer. Answer requests carry only the current query.
class RemoteObserver : public ObserverAgent {
 public:
  explicit RemoteObserver(RemoteEndpointConfig cfg) : cfg_(std::move(cfg)) {
    cfg_.validate();
    if (cfg_.role != Role::Observer) throw InvalidArgument("remote observer needs an observer endpoint");
  }

  Utterance caption(const Scene& scene, EpisodeContext&) override {
    return call({Role::Observer, RemoteMode::Caption, std::nullopt, {}, scene.id});
  }
  Utterance answer(const Scene& scene, const Utterance& query, EpisodeContext&) override {
    return call({Role::Observer, RemoteMode::Answer, std::nullopt, {query}, scene.id});
  }
  int total_retries() const { return retries_.load(); }

 private:
  Utterance call(const RemoteRequest& r) {
    auto res = remote_call(cfg_, r);
    retries_ += res.retries;
    return std::move(res.utterance);
  }
  RemoteEndpointConfig cfg_;
  std::atomic<int> retries_{0};
};

/// Remote reasoner. Requests carry the problem and the whole monologue.
class RemoteReasoner : public ReasonerAgent {
 public:
  explicit RemoteReasoner(RemoteEndpointConfig cfg) : cfg_(std::move(cfg)) {
    cfg_.validate();
    if (cfg_.role != Role::Reasoner) throw InvalidArgument("remote reasoner needs a reasoner endpoint");
  }

  Utterance next_query(const Problem& p, const InnerMonologue& im, EpisodeContext&) override {
    return call({Role::Reasoner, RemoteMode::Query, p.surface, im.entries(), std::nullopt});
  }
  Utterance final_answer(const Problem& p, const InnerMonologue& im, EpisodeContext&) override {
    return call({Role::Reasoner, RemoteMode::Final, p.surface, im.entries(), std::nullopt});
  }
  int total_retries() const { return retries_.load(); }

 private:
  Utterance call(const RemoteRequest& r) {
    auto res = remote_call(cfg_, r);
    retries_ += res.retries;
    return std::move(res.utterance);
  }
  RemoteEndpointConfig cfg_;
  std::atomic<int> retries_{0};
};

}  // namespace immo
