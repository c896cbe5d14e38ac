#pragma once

#include <chrono>
#include <map>
#include <string>

#include <httplib.h>
// <resolv.h> defines _res as a macro, which collides with Eigen's product kernels.
#ifdef _res
#undef _res
#endif
#include <json.hpp>

#include "flowsem/error.hpp"

namespace flowsem::http {

/// `http://host[:port]/path` split into the part httplib connects to and the request path.
struct Endpoint {
  std::string base;
  std::string path = "/";

  static Endpoint parse(const std::string& url) {
    require(!url.empty(), ErrorCode::ServiceUnavailable, "no endpoint configured");
    const auto scheme = url.find("://");
    require(scheme != std::string::npos, ErrorCode::BadParam, "endpoint '" + url + "' lacks a scheme");
    const auto slash = url.find('/', scheme + 3);
    Endpoint e;
    e.base = url.substr(0, slash);
    if (slash != std::string::npos) e.path = url.substr(slash);
    return e;
  }
};

struct ClientOptions {
  double timeout_s = 30.0;
  std::map<std::string, std::string> headers;
};

/// POST a JSON body and parse the JSON reply.
///
/// Connection failures raise ServiceUnavailable, expired deadlines Timeout, and non-2xx or unparsable
/// replies BadResponse (5xx map to ServiceUnavailable).
inline nlohmann::json post_json(const std::string& url, const nlohmann::json& body, const ClientOptions& opt = {}) {
  const auto ep = Endpoint::parse(url);
  httplib::Client cli(ep.base);
  require(cli.is_valid(), ErrorCode::BadParam, "unsupported endpoint '" + url + "'");
  const auto secs = static_cast<time_t>(opt.timeout_s);
  const auto usecs = static_cast<time_t>((opt.timeout_s - static_cast<double>(secs)) * 1e6);
  cli.set_connection_timeout(secs, usecs);
  cli.set_read_timeout(secs, usecs);
  cli.set_write_timeout(secs, usecs);
  httplib::Headers headers(opt.headers.begin(), opt.headers.end());

  const auto start = std::chrono::steady_clock::now();
  auto res = cli.Post(ep.path, headers, body.dump(), "application/json");
  if (!res) {
    const double elapsed = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
    const auto err = res.error();
    if (err == httplib::Error::ConnectionTimeout || (err == httplib::Error::Read && elapsed >= 0.9 * opt.timeout_s))
      fail(ErrorCode::Timeout, url + ": no reply within " + std::to_string(opt.timeout_s) + " s");
    fail(ErrorCode::ServiceUnavailable, url + ": " + httplib::to_string(err));
  }
  if (res->status >= 500)
    fail(ErrorCode::ServiceUnavailable, url + ": HTTP " + std::to_string(res->status));
  if (res->status < 200 || res->status >= 300)
    fail(ErrorCode::BadResponse, url + ": HTTP " + std::to_string(res->status) + " " + res->body.substr(0, 200));
  auto parsed = nlohmann::json::parse(res->body, nullptr, false);
  require(!parsed.is_discarded(), ErrorCode::BadResponse, url + ": reply is not JSON");
  return parsed;
}

}  // namespace flowsem::http
