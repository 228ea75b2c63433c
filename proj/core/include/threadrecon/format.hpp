#pragma once

#include <string>

namespace threadrecon {

/// Byte-stable decimal rendering of a double with 17 significant digits
/// ("%.17g"); non-finite values render as "nan", "inf" or "-inf".
std::string format_double(double v);

}  // namespace threadrecon
