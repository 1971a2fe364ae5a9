#include "escrl/http.hpp"

#include <httplib.h>

#include <chrono>

#include "escrl/error.hpp"

namespace escrl::net {
namespace {

struct ParsedUrl {
  std::string origin;  // scheme://host[:port]
  std::string path;
};

ParsedUrl parse_url(const std::string& url) {
  auto scheme_end = url.find("://");
  if (scheme_end == std::string::npos) throw ConfigError("endpoint URL lacks a scheme: " + url);
  auto scheme = url.substr(0, scheme_end);
  if (scheme != "http" && scheme != "https") throw ConfigError("unsupported URL scheme: " + scheme);
  auto path_start = url.find('/', scheme_end + 3);
  ParsedUrl out;
  out.origin = url.substr(0, path_start);
  out.path = path_start == std::string::npos ? "/" : url.substr(path_start);
  if (out.origin.size() <= scheme_end + 3) throw ConfigError("endpoint URL lacks a host: " + url);
  return out;
}

}  // namespace

std::string post_json(const Endpoint& endpoint, const std::string& body) {
  auto target = parse_url(endpoint.url);
#ifndef CPPHTTPLIB_OPENSSL_SUPPORT
  if (target.origin.rfind("https", 0) == 0) {
    throw ConfigError("https endpoints require a build with OpenSSL: " + endpoint.url);
  }
#endif
  httplib::Client client(target.origin);
  auto timeout = std::chrono::duration<double>(endpoint.timeout_seconds);
  auto secs = std::chrono::duration_cast<std::chrono::seconds>(timeout);
  auto usecs = std::chrono::duration_cast<std::chrono::microseconds>(timeout - secs);
  client.set_connection_timeout(secs.count(), usecs.count());
  client.set_read_timeout(secs.count(), usecs.count());
  client.set_write_timeout(secs.count(), usecs.count());

  httplib::Headers headers;
  for (const auto& [k, v] : endpoint.headers) headers.emplace(k, v);

  std::string last_error;
  for (int attempt = 0; attempt <= endpoint.retries; ++attempt) {
    auto res = client.Post(target.path, headers, body, "application/json");
    if (!res) {
      last_error = httplib::to_string(res.error());
      continue;
    }
    if (res->status < 200 || res->status >= 300) {
      throw ProtocolError("HTTP " + std::to_string(res->status) + " from " + endpoint.url);
    }
    return res->body;
  }
  throw TransportError("request to " + endpoint.url + " failed after " + std::to_string(endpoint.retries + 1) +
                       " attempt(s): " + last_error);
}

}  // namespace escrl::net
