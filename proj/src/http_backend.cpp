#include <algorithm>
#include <cctype>
#include <cmath>
#include <cstdlib>
#include <limits>

#include "httplib.h"
#include "json.hpp"
#include "semops/lm_runtime.hpp"

namespace semops {

namespace {

using json = nlohmann::json;

std::string strip_leading(std::string_view s) {
  while (!s.empty() && (std::isspace(static_cast<unsigned char>(s.front())) || s.front() == '"' ||
                        s.front() == '\'' || s.front() == '*')) {
    s.remove_prefix(1);
  }
  return std::string(s);
}

bool iprefix(std::string_view a, std::string_view b) {
  // true when the shorter of a/b is a case-insensitive prefix of the other
  const std::size_t n = std::min(a.size(), b.size());
  for (std::size_t i = 0; i < n; ++i) {
    if (std::tolower(static_cast<unsigned char>(a[i])) !=
        std::tolower(static_cast<unsigned char>(b[i]))) {
      return false;
    }
  }
  return true;
}

std::vector<std::size_t> consistent_labels(std::string_view text,
                                           const std::vector<std::string>& labels) {
  std::vector<std::size_t> out;
  const std::string norm = strip_leading(text);
  if (norm.empty()) return out;
  for (std::size_t i = 0; i < labels.size(); ++i) {
    if (!iprefix(norm, labels[i])) continue;
    // Text that runs past the label must stop at a word boundary.
    if (norm.size() > labels[i].size() &&
        std::isalnum(static_cast<unsigned char>(norm[labels[i].size()]))) {
      continue;
    }
    out.push_back(i);
  }
  return out;
}

std::vector<LabelLogprob> extract_label_logprobs(const json& tokens,
                                                 const std::vector<std::string>& labels) {
  std::string prefix;
  for (const json& entry : tokens) {
    const std::string chosen = entry.value("token", "");
    const std::string with_chosen = prefix + chosen;
    if (strip_leading(with_chosen).empty()) {
      prefix = with_chosen;
      continue;
    }
    const auto cons = consistent_labels(with_chosen, labels);
    if (cons.empty()) return {};
    if (cons.size() > 1) {
      prefix = with_chosen;
      continue;
    }
    std::vector<double> lp(labels.size(), -std::numeric_limits<double>::infinity());
    auto consider = [&](const std::string& tok, double logprob) {
      const auto c = consistent_labels(prefix + tok, labels);
      if (c.size() == 1) lp[c.front()] = std::max(lp[c.front()], logprob);
    };
    consider(chosen, entry.value("logprob", 0.0));
    if (entry.contains("top_logprobs") && entry["top_logprobs"].is_array()) {
      for (const json& alt : entry["top_logprobs"]) {
        consider(alt.value("token", ""), alt.value("logprob", -1e9));
      }
    }
    std::vector<LabelLogprob> out;
    for (std::size_t i = 0; i < labels.size(); ++i) out.push_back({labels[i], lp[i]});
    return out;
  }
  return {};
}

}  // namespace

HttpBackend::HttpBackend(HttpBackendConfig cfg) : cfg_(std::move(cfg)) {
  if (cfg_.base_url.empty()) throw Error(ErrorCode::kInvalidArgument, "http backend: empty base_url");
  if (!cfg_.api_key_env.empty()) {
    if (const char* key = std::getenv(cfg_.api_key_env.c_str())) api_key_ = key;
  }
}

std::string HttpBackend::build_body(const LmRequest& req) const {
  json messages = json::array();
  if (!req.system_instruction.empty()) {
    messages.push_back({{"role", "system"}, {"content", req.system_instruction}});
  }
  for (const Demonstration& d : req.demonstrations) {
    messages.push_back({{"role", "user"}, {"content", d.input}});
    messages.push_back({{"role", "assistant"}, {"content", d.output}});
  }
  messages.push_back({{"role", "user"}, {"content", req.user_prompt}});
  json body = {{"model", cfg_.model},
               {"messages", messages},
               {"temperature", cfg_.temperature},
               {"max_tokens", std::max<std::size_t>(1, req.max_output_chars / 4)}};
  if (!req.label_set.empty()) {
    body["logprobs"] = true;
    body["top_logprobs"] = cfg_.top_logprobs;
  }
  return body.dump();
}

LmResult HttpBackend::parse_response(std::string_view body, const LmRequest& req,
                                     const std::string& backend_id) {
  json doc;
  try {
    doc = json::parse(body);
  } catch (const json::exception& e) {
    throw Error(ErrorCode::kBackend, std::string("http backend: bad JSON response: ") + e.what());
  }
  if (!doc.contains("choices") || !doc["choices"].is_array() || doc["choices"].empty()) {
    throw Error(ErrorCode::kBackend, "http backend: response has no choices");
  }
  const json& choice = doc["choices"][0];
  LmResult r;
  r.backend_id = backend_id;
  if (choice.contains("message") && choice["message"].contains("content") &&
      choice["message"]["content"].is_string()) {
    r.text = choice["message"]["content"].get<std::string>();
  }
  if (r.text.size() > req.max_output_chars) r.text.resize(req.max_output_chars);
  if (!req.label_set.empty() && choice.contains("logprobs") && choice["logprobs"].is_object() &&
      choice["logprobs"].contains("content") && choice["logprobs"]["content"].is_array()) {
    r.label_logprobs = extract_label_logprobs(choice["logprobs"]["content"], req.label_set);
  }
  return r;
}

LmResult HttpBackend::complete(const LmRequest& req) {
  httplib::Client client(cfg_.base_url);
  client.set_connection_timeout(cfg_.timeout_s, 0);
  client.set_read_timeout(cfg_.timeout_s, 0);
  httplib::Headers headers;
  if (!api_key_.empty()) headers.emplace("Authorization", "Bearer " + api_key_);
  auto res = client.Post(cfg_.path, headers, build_body(req), "application/json");
  if (!res) {
    throw TransportError("http backend: " + httplib::to_string(res.error()));
  }
  if (res->status == 429 || res->status >= 500) {
    throw TransportError("http backend: status " + std::to_string(res->status));
  }
  if (res->status != 200) {
    throw Error(ErrorCode::kBackend, "http backend: status " + std::to_string(res->status) + ": " +
                                         res->body.substr(0, 200));
  }
  return parse_response(res->body, req, cfg_.id);
}

}  // namespace semops
