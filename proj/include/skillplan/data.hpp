#pragma once

#include <map>
#include <string>
#include <string_view>

namespace skillplan::data {

/// PDDL fixtures compiled into the library, keyed by file name.
const std::map<std::string, std::string>& embedded_pddl();

/// Text of an embedded fixture; throws Error(InvalidArgument) if unknown.
const std::string& pddl_text(std::string_view file_name);

}  // namespace skillplan::data
