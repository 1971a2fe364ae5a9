#pragma once

#include <filesystem>
#include <optional>
#include <string>

#include "escrl/http.hpp"

namespace escrl::net {

struct ChatConfig {
  std::string endpoint;  // full URL of a chat-completions route
  std::string model;
  std::string token_env = "ESCRL_LLM_TOKEN";  // bearer token source; unset means no auth header
  double timeout_seconds = 60.0;
  int retries = 1;
  std::optional<std::filesystem::path> audit_log;  // JSONL, one line per exchange
};

// Minimal chat-completion client: one system and one user message,
// temperature fixed at 0, returns choices[0].message.content.
class ChatClient {
 public:
  explicit ChatClient(ChatConfig cfg);  // throws ConfigError without endpoint/model

  std::string complete(const std::string& system, const std::string& user) const;
  const ChatConfig& config() const noexcept { return cfg_; }

 private:
  ChatConfig cfg_;
};

}  // namespace escrl::net
