#include "cst/errors.hpp"

namespace cst {

void throw_parameter(const std::string& what) { throw ParameterError(what); }

}  // namespace cst
