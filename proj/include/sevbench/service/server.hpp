#pragma once

#include <memory>
#include <string>

#include "sevbench/service/store.hpp"

namespace sevbench::service {

/// HTTP status for a domain error kind.
int http_status(const std::string& error_kind);

/// HTTP+JSON front end over a Store. Identity comes from request fields, with
/// the X-Annotator-Id header as a fallback.
class Server {
 public:
  explicit Server(Store& store);
  ~Server();

  Server(const Server&) = delete;
  Server& operator=(const Server&) = delete;

  /// Binds; port 0 picks a free port. Returns the bound port, or -1.
  int bind(const std::string& host, int port);
  /// Serves until stop(). Call after bind().
  bool run();
  void stop();
  void wait_until_ready() const;

 private:
  struct Impl;
  std::unique_ptr<Impl> impl_;
};

}  // namespace sevbench::service
