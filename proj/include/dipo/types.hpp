#pragma once

#include <string>

#include "json.hpp"

namespace dipo {

/// A question with its reference answer. `extra` carries fields the
/// dataset files had that this library does not interpret.
struct TaskExample {
  std::string id;
  std::string question;
  std::string answer;
  nlohmann::json extra = nlohmann::json::object();
};

}  // namespace dipo
