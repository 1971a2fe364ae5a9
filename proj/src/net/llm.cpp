#include "escrl/llm.hpp"

#include <json.hpp>

#include <cstdlib>
#include <exception>
#include <fstream>
#include <mutex>

#include "escrl/error.hpp"

namespace escrl::net {

ChatClient::ChatClient(ChatConfig cfg) : cfg_(std::move(cfg)) {
  if (cfg_.endpoint.empty()) throw ConfigError("LLM backend selected but no endpoint configured");
  if (cfg_.model.empty()) throw ConfigError("LLM backend selected but no model configured");
}

std::string ChatClient::complete(const std::string& system, const std::string& user) const {
  nlohmann::ordered_json req;
  req["model"] = cfg_.model;
  req["temperature"] = 0;
  req["messages"] = nlohmann::json::array({{{"role", "system"}, {"content", system}},
                                          {{"role", "user"}, {"content", user}}});
  Endpoint ep{cfg_.endpoint, cfg_.timeout_seconds, cfg_.retries, {}};
  if (!cfg_.token_env.empty()) {
    if (const char* token = std::getenv(cfg_.token_env.c_str()); token && *token) {
      ep.headers["Authorization"] = std::string("Bearer ") + token;
    }
  }

  std::string body;
  std::string content;
  std::string failure;
  std::exception_ptr error;
  try {
    body = post_json(ep, req.dump());
    auto res = nlohmann::json::parse(body);
    const auto& msg = res.at("choices").at(0).at("message").at("content");
    if (!msg.is_string()) throw ProtocolError("chat completion content is not a string");
    content = msg.get<std::string>();
  } catch (const nlohmann::json::exception& e) {
    failure = std::string("malformed chat completion response: ") + e.what();
    error = std::make_exception_ptr(ProtocolError(failure));
  } catch (const std::exception& e) {
    failure = e.what();
    error = std::current_exception();
  }

  if (cfg_.audit_log) {
    static std::mutex audit_mutex;
    std::lock_guard lock(audit_mutex);
    std::ofstream log(*cfg_.audit_log, std::ios::app);
    nlohmann::ordered_json entry;
    entry["request"] = req;
    entry["response"] = body;
    if (!failure.empty()) entry["error"] = failure;
    log << entry.dump() << '\n';
  }
  if (error) std::rethrow_exception(error);
  return content;
}

}  // namespace escrl::net
