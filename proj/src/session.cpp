#include "semops/session.hpp"

namespace semops {

Session::Session(BackendPtr default_backend, std::shared_ptr<const Embedder> embedder,
                 SessionConfig cfg)
    : default_(std::move(default_backend)), embedder_(std::move(embedder)), cfg_(cfg) {
  if (!default_) throw Error(ErrorCode::kInvalidArgument, "session: null default backend");
  backends_[default_->id()] = default_;
}

void Session::add_backend(BackendPtr backend) {
  if (!backend) throw Error(ErrorCode::kInvalidArgument, "session: null backend");
  backends_[backend->id()] = std::move(backend);
}

bool Session::has_backend(std::string_view id) const { return backends_.contains(id); }

LmBackend& Session::backend(std::string_view id) const {
  auto it = backends_.find(id);
  if (it == backends_.end()) {
    throw Error(ErrorCode::kNotFound, "unknown backend '" + std::string(id) + "'");
  }
  return *it->second;
}

void Session::set_default_backend(std::string_view id) {
  backend(id);
  default_ = backends_.find(id)->second;
}

const Embedder& Session::embedder() const {
  if (!embedder_) throw Error(ErrorCode::kInvalidArgument, "session: no embedder configured");
  return *embedder_;
}

std::vector<LmResult> Session::complete(LmBackend& backend, std::span<const LmRequest> requests,
                                        std::string_view op, Tier tier) {
  BatchOptions opts;
  opts.parallelism = cfg_.parallelism;
  opts.retry = cfg_.retry;
  opts.meter = &meter_;
  opts.op = std::string(op);
  opts.tier = tier;
  return complete_batch(backend, requests, opts);
}

void Session::warn(std::string message) {
  std::lock_guard lock(warn_mu_);
  warnings_.push_back(std::move(message));
}

std::vector<std::string> Session::warnings() const {
  std::lock_guard lock(warn_mu_);
  return warnings_;
}

}  // namespace semops
