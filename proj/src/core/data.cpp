#include "skillplan/data.hpp"

#include "skillplan/common.hpp"

namespace skillplan::data {

const std::string& pddl_text(std::string_view file_name) {
  const auto& files = embedded_pddl();
  const auto it = files.find(std::string(file_name));
  if (it == files.end()) {
    throw Error(ErrorCode::InvalidArgument, "no embedded PDDL file '" + std::string(file_name) + "'");
  }
  return it->second;
}

}  // namespace skillplan::data
