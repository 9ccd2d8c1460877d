// Copyright 2026 The ctxrl Authors
// SPDX-License-Identifier: Apache-2.0
//
// OpenAI-compatible chat-completion transport for the judge.
//
// Request: POST {base}/chat/completions
//   {"model": M, "messages": [{"role": "user", "content": PROMPT}], "temperature": 0}
// with "Authorization: Bearer <key>". The reply text is
// choices[0].message.content.

#pragma once

#include <string>
#include <utility>

#include <nlohmann/json.hpp>

#include "httplib.h"

#include "ctxrl/rewards.hpp"

namespace ctxrl {

class HttpJudge : public JudgeTransport {
 public:
  HttpJudge(std::string base_url, std::string model, std::string api_key, double timeout_s = 30.0)
      : model_(std::move(model)), api_key_(std::move(api_key)), timeout_s_(timeout_s) {
    split_url(base_url);
  }

  static nlohmann::json request_body(const std::string& model, const std::string& prompt) {
    return {{"model", model},
            {"messages", nlohmann::json::array({{{"role", "user"}, {"content", prompt}}})},
            {"temperature", 0}};
  }

  std::string complete(const std::string& prompt) override {
    httplib::Client cli(origin_);
    const auto secs = static_cast<time_t>(timeout_s_);
    const auto usecs = static_cast<time_t>((timeout_s_ - static_cast<double>(secs)) * 1e6);
    cli.set_connection_timeout(secs, usecs);
    cli.set_read_timeout(secs, usecs);
    cli.set_write_timeout(secs, usecs);
    cli.set_bearer_token_auth(api_key_);
    auto res = cli.Post(path_, request_body(model_, prompt).dump(), "application/json");
    if (!res) throw JudgeTransportError("judge request failed: " + httplib::to_string(res.error()));
    if (res->status != 200) throw JudgeTransportError("judge returned HTTP " + std::to_string(res->status));
    try {
      const auto body = nlohmann::json::parse(res->body);
      return body.at("choices").at(0).at("message").at("content").get<std::string>();
    } catch (const nlohmann::json::exception& e) {
      throw JudgeTransportError(std::string("judge reply is not a chat completion: ") + e.what());
    }
  }

  std::string model() const override { return model_; }
  const std::string& origin() const { return origin_; }
  const std::string& path() const { return path_; }

 private:
  void split_url(const std::string& url) {
    const auto scheme_end = url.find("://");
    if (scheme_end == std::string::npos) throw ConfigError("judge: base URL needs a scheme: '" + url + "'");
    const auto path_start = url.find('/', scheme_end + 3);
    origin_ = url.substr(0, path_start);
    std::string prefix = path_start == std::string::npos ? "" : url.substr(path_start);
    while (!prefix.empty() && prefix.back() == '/') prefix.pop_back();
    constexpr std::string_view kSuffix = "/chat/completions";
    if (prefix.size() >= kSuffix.size() && prefix.compare(prefix.size() - kSuffix.size(), kSuffix.size(), kSuffix) == 0) {
      path_ = prefix;
    } else {
      path_ = prefix + std::string(kSuffix);
    }
  }

  std::string model_;
  std::string api_key_;
  double timeout_s_;
  std::string origin_;
  std::string path_;
};

/// Builds the client for a backend description; `none` yields no judge.
inline std::shared_ptr<JudgeClient> make_judge_client(const JudgeBackend& backend) {
  backend.validate();
  std::shared_ptr<JudgeTransport> transport;
  switch (backend.kind) {
    case JudgeKind::none:
      return nullptr;
    case JudgeKind::mock:
      transport = std::make_shared<MockJudge>();
      break;
    case JudgeKind::http:
      transport = std::make_shared<HttpJudge>(backend.endpoint, backend.model, backend.auth_token, backend.timeout_s);
      break;
  }
  auto client = std::make_shared<JudgeClient>(transport, backend.max_retries, backend.backoff_ms, backend.cache_enabled,
                                             backend.max_parallel);
  return client;
}

}  // namespace ctxrl
