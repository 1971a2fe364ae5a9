#pragma once

#include <map>
#include <string>

namespace escrl::net {

// A remote JSON endpoint, e.g. "http://127.0.0.1:8080/label".
struct Endpoint {
  std::string url;
  double timeout_seconds = 30.0;
  int retries = 2;  // extra attempts after the first failure
  std::map<std::string, std::string> headers;
};

// POSTs `body` as application/json and returns the response body. Connection
// failures and timeouts are retried; exhausting retries raises TransportError.
// Non-2xx responses raise ProtocolError without retry.
std::string post_json(const Endpoint& endpoint, const std::string& body);

}  // namespace escrl::net
